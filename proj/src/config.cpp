#include "config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace corrpat::cli {

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where.empty() ? what : where + ": " + what);
}

void only_keys(const YAML::Node& n, const std::string& where, std::initializer_list<const char*> keys) {
    if (!n.IsMap()) fail(where, "expected a table");
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& kv : n) {
        const auto k = kv.first.as<std::string>();
        if (!ok.count(k)) fail(where, "unknown key '" + k + "'");
    }
}

template <class T>
T get(const YAML::Node& n, const std::string& where) {
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        fail(where, "bad value '" + YAML::Dump(n) + "'");
    }
}

Params params_of(const YAML::Node& n, const std::string& where) {
    Params p;
    if (!n) return p;
    if (!n.IsMap()) fail(where, "expected a table of numbers");
    for (const auto& kv : n) {
        const auto k = kv.first.as<std::string>();
        p[k] = get<double>(kv.second, where + "." + k);
    }
    return p;
}

std::vector<double> doubles(const YAML::Node& n, const std::string& where) {
    if (!n.IsSequence()) fail(where, "expected a list");
    std::vector<double> v;
    for (std::size_t i = 0; i < n.size(); ++i) v.push_back(get<double>(n[i], where));
    return v;
}

// {kind, params[, measure]} or a bare kind
void read_component(const YAML::Node& n, const std::string& where, std::string& kind, Params& params,
                    std::string* measure) {
    if (n.IsScalar()) {
        kind = n.as<std::string>();
        return;
    }
    if (measure)
        only_keys(n, where, {"kind", "params", "measure"});
    else
        only_keys(n, where, {"kind", "params"});
    if (!n["kind"]) fail(where, "missing 'kind'");
    kind = get<std::string>(n["kind"], where + ".kind");
    params = params_of(n["params"], where + ".params");
    if (measure && n["measure"]) *measure = get<std::string>(n["measure"], where + ".measure");
}

ModelBlock read_model(const YAML::Node& n, const std::string& where, ModelBlock m) {
    only_keys(n, where, {"prior", "channel"});
    if (n["prior"]) {
        m.measure.clear();
        m.prior_params.clear();
        read_component(n["prior"], where + ".prior", m.prior, m.prior_params, &m.measure);
    }
    if (n["channel"]) {
        m.channel_params.clear();
        read_component(n["channel"], where + ".channel", m.channel, m.channel_params, nullptr);
    }
    return m;
}

RunConfig from_yaml(const YAML::Node& root) {
    RunConfig c;
    if (!root || root.IsNull()) fail("", "empty configuration");
    only_keys(root, "config",
              {"experiment", "spectrum", "generative", "recognition", "alpha", "N", "samples", "seed", "labels",
               "solver", "tap", "information", "capacity", "tap_alphas", "x", "y", "out", "jobs"});
    if (root["experiment"]) c.experiment = get<std::string>(root["experiment"], "experiment");
    if (auto s = root["spectrum"]) {
        if (s.IsScalar()) {
            c.spectrum.kind = s.as<std::string>();
        } else {
            only_keys(s, "spectrum", {"kind", "params", "file"});
            if (s["file"]) {
                c.spectrum.file = get<std::string>(s["file"], "spectrum.file");
                c.spectrum.kind = "file";
            }
            if (s["kind"]) c.spectrum.kind = get<std::string>(s["kind"], "spectrum.kind");
            c.spectrum.params = params_of(s["params"], "spectrum.params");
        }
    }
    if (root["generative"]) c.generative = read_model(root["generative"], "generative", c.generative);
    if (root["recognition"]) c.recognition = read_model(root["recognition"], "recognition", c.recognition);
    if (auto a = root["alpha"]) {
        if (a.IsSequence()) {
            c.alphas = doubles(a, "alpha");
            c.alpha_source = c.alphas;
        } else if (a.IsScalar()) {
            c.alphas = {get<double>(a, "alpha")};
            c.alpha_source = c.alphas;
        } else {
            only_keys(a, "alpha", {"start", "stop", "step", "list"});
            if (a["list"]) {
                if (a["start"] || a["stop"] || a["step"]) fail("alpha", "give either list or start/stop/step");
                c.alphas = doubles(a["list"], "alpha.list");
                c.alpha_source = c.alphas;
            } else {
                if (!a["start"] || !a["stop"] || !a["step"]) fail("alpha", "need start, stop and step");
                const double start = get<double>(a["start"], "alpha.start");
                const double stop = get<double>(a["stop"], "alpha.stop");
                const double step = get<double>(a["step"], "alpha.step");
                if (!(step > 0)) fail("alpha.step", "must be > 0");
                c.alphas = alpha_range(start, stop, step);
                c.alpha_source = {{"start", start}, {"stop", stop}, {"step", step}};
            }
        }
    }
    if (root["N"]) c.N = get<int>(root["N"], "N");
    if (root["samples"]) c.samples = get<int>(root["samples"], "samples");
    if (root["seed"]) c.seed = get<std::uint64_t>(root["seed"], "seed");
    if (root["labels"]) c.labels = get<std::string>(root["labels"], "labels");
    if (auto s = root["solver"]) {
        only_keys(s, "solver", {"damping", "tol", "max_iter", "newton_iter"});
        if (s["damping"]) c.solver.damping = get<double>(s["damping"], "solver.damping");
        if (s["tol"]) c.solver.tol = get<double>(s["tol"], "solver.tol");
        if (s["max_iter"]) c.solver.max_iter = get<int>(s["max_iter"], "solver.max_iter");
        if (s["newton_iter"]) c.solver.newton_iter = get<int>(s["newton_iter"], "solver.newton_iter");
    }
    if (auto s = root["tap"]) {
        only_keys(s, "tap", {"damping", "tol", "max_iter"});
        if (s["damping"]) c.tap.damping = get<double>(s["damping"], "tap.damping");
        if (s["tol"]) c.tap.tol = get<double>(s["tol"], "tap.tol");
        if (s["max_iter"]) c.tap.max_iter = get<int>(s["max_iter"], "tap.max_iter");
    }
    if (root["information"]) c.information = get<bool>(root["information"], "information");
    if (auto s = root["capacity"]) {
        only_keys(s, "capacity", {"lo", "hi", "step", "resolution"});
        if (s["lo"]) c.capacity.lo = get<double>(s["lo"], "capacity.lo");
        if (s["hi"]) c.capacity.hi = get<double>(s["hi"], "capacity.hi");
        if (s["step"]) c.capacity.step = get<double>(s["step"], "capacity.step");
        if (s["resolution"]) c.capacity.resolution = get<double>(s["resolution"], "capacity.resolution");
    }
    if (root["tap_alphas"]) c.tap_alphas = doubles(root["tap_alphas"], "tap_alphas");
    if (root["x"]) c.x = get<double>(root["x"], "x");
    if (root["y"]) c.y = get<double>(root["y"], "y");
    if (root["out"]) c.out = get<std::string>(root["out"], "out");
    if (root["jobs"]) c.jobs = get<int>(root["jobs"], "jobs");
    return c;
}

}  // namespace

SpectrumModel SpectrumBlock::load_file() const {
    std::ifstream f(file);
    if (!f) throw ConfigError("spectrum.file: cannot open " + file);
    try {
        return spectrum_from_json(nlohmann::json::parse(f));
    } catch (const std::exception& e) {
        throw ConfigError("spectrum.file: " + std::string(e.what()));
    }
}

SpectrumModel SpectrumBlock::at(double alpha) const {
    if (file.empty()) return make_spectrum(kind, alpha, params);
    SpectrumModel s = load_file();
    if (std::abs(s.alpha - alpha) > 1e-12)
        throw ConfigError("spectrum.file: alpha " + std::to_string(alpha) + " differs from the file's alpha");
    return s;
}

std::string SpectrumBlock::pattern_kind() const {
    if (kind == "marchenko_pastur") return "iid_gaussian";
    if (kind == "random_orthogonal") return "random_orthogonal";
    throw ConfigError("spectrum '" + kind + "' has no pattern ensemble");
}

ReplicaProblem RunConfig::problem(double alpha) const {
    return ReplicaProblem{spectrum.at(alpha), generative.make_prior(), generative.make_channel(),
                          recognition.make_prior(), recognition.make_channel()};
}

std::string RunConfig::label_mode() const {
    if (labels != "auto") return labels;
    return generative.channel == "random_label" ? "random_pm1" : "teacher";
}

std::vector<double> alpha_range(double start, double stop, double step) {
    std::vector<double> v;
    if (!(step > 0)) return v;
    for (long k = 0;; ++k) {
        const double a = std::round((start + k * step) * 1e12) / 1e12;
        if (a > stop + 1e-12) break;
        v.push_back(a);
        if (k > 10000000) throw ConfigError("alpha: grid too large");
    }
    return v;
}

void validate(const RunConfig& c) {
    const auto& ex = experiments();
    if (std::find(ex.begin(), ex.end(), c.experiment) == ex.end())
        throw ConfigError("experiment: unknown kind '" + c.experiment + "'");
    const bool needs_grid = c.experiment != "ffunc-eval" && c.experiment != "locate-capacity" &&
                            c.experiment != "oracle-check";
    if (needs_grid && c.alphas.empty()) throw ConfigError("alpha: grid is empty");
    for (std::size_t i = 0; i < c.alphas.size(); ++i) {
        if (!(c.alphas[i] > 0)) throw ConfigError("alpha: values must be > 0");
        if (i > 0 && !(c.alphas[i] > c.alphas[i - 1])) throw ConfigError("alpha: grid must be strictly increasing");
    }
    for (std::size_t i = 1; i < c.tap_alphas.size(); ++i)
        if (!(c.tap_alphas[i] > c.tap_alphas[i - 1])) throw ConfigError("tap_alphas: must be strictly increasing");
    if (c.N <= 0) throw ConfigError("N: must be positive");
    if (c.samples <= 0) throw ConfigError("samples: must be positive");
    if (c.jobs <= 0) throw ConfigError("jobs: must be positive");
    if (!(c.solver.damping > 0 && c.solver.damping <= 1)) throw ConfigError("solver.damping: must be in (0, 1]");
    if (!(c.solver.tol > 0)) throw ConfigError("solver.tol: must be positive");
    if (c.solver.max_iter <= 0 || c.solver.newton_iter <= 0) throw ConfigError("solver: iteration caps must be positive");
    if (!(c.tap.damping > 0 && c.tap.damping <= 1)) throw ConfigError("tap.damping: must be in (0, 1]");
    if (!(c.tap.tol > 0)) throw ConfigError("tap.tol: must be positive");
    if (c.tap.max_iter <= 0) throw ConfigError("tap.max_iter: must be positive");
    if (c.labels != "auto" && c.labels != "random_pm1" && c.labels != "teacher")
        throw ConfigError("labels: expected auto, random_pm1 or teacher");
    const auto& cap = c.capacity;
    if (!(cap.lo > 0 && cap.hi > cap.lo && cap.step > 0 && cap.resolution > 0))
        throw ConfigError("capacity: need 0 < lo < hi, step > 0, resolution > 0");

    // resolve every referenced model and spectrum before any compute
    try {
        c.generative.make_prior();
        c.generative.make_channel();
        c.recognition.make_prior();
        c.recognition.make_channel();
    } catch (const ModelError& e) {
        throw ConfigError(e.what());
    }
    if (!c.spectrum.file.empty() && c.experiment != "ffunc-eval" && c.experiment != "replica-scan")
        throw ConfigError("spectrum.file: only usable with ffunc-eval and replica-scan");
    std::vector<double> check = c.alphas;
    if (c.experiment == "locate-capacity") check = {cap.lo, cap.hi};
    if (c.experiment == "figure1") check.insert(check.end(), c.tap_alphas.begin(), c.tap_alphas.end());
    for (double a : check) {
        try {
            c.spectrum.at(a);
        } catch (const SpectrumError& e) {
            throw ConfigError("spectrum at alpha=" + std::to_string(a) + ": " + e.what());
        }
    }
    if (c.experiment == "tap-run" || c.experiment == "figure1" || c.experiment == "oracle-check") {
        c.spectrum.pattern_kind();
        const auto& grid = c.experiment == "figure1" ? c.tap_alphas : c.alphas;
        for (double a : grid)
            if (std::lround(a * c.N) < 1) throw ConfigError("alpha*N rounds to zero patterns");
        if (c.label_mode() == "teacher" && c.generative.channel == "random_label")
            throw ConfigError("labels: teacher mode needs a generative channel other than random_label");
    }
    if (c.experiment == "oracle-check" && c.N > 24) throw ConfigError("N: enumeration is limited to N <= 24");
    if (c.experiment == "figure1" && c.tap_alphas.empty()) throw ConfigError("tap_alphas: empty marker grid");
}

RunConfig parse_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("yaml: ") + e.what());
    }
    return from_yaml(root);
}

RunConfig load_config(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) throw ConfigError("cannot open config " + file.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

nlohmann::json to_json(const RunConfig& c) {
    auto model = [](const ModelBlock& m) {
        nlohmann::json p{{"kind", m.prior}, {"params", m.prior_params}};
        if (!m.measure.empty()) p["measure"] = m.measure;
        return nlohmann::json{{"prior", p}, {"channel", {{"kind", m.channel}, {"params", m.channel_params}}}};
    };
    nlohmann::json spec{{"kind", c.spectrum.kind}, {"params", c.spectrum.params}};
    if (!c.spectrum.file.empty()) spec["file"] = c.spectrum.file;
    return {{"experiment", c.experiment},
            {"spectrum", spec},
            {"generative", model(c.generative)},
            {"recognition", model(c.recognition)},
            {"alpha", c.alpha_source},
            {"alphas", c.alphas},
            {"N", c.N},
            {"samples", c.samples},
            {"seed", c.seed},
            {"labels", c.label_mode()},
            {"solver",
             {{"damping", c.solver.damping},
              {"tol", c.solver.tol},
              {"max_iter", c.solver.max_iter},
              {"newton_iter", c.solver.newton_iter}}},
            {"tap", {{"damping", c.tap.damping}, {"tol", c.tap.tol}, {"max_iter", c.tap.max_iter}}},
            {"information", c.information},
            {"capacity",
             {{"lo", c.capacity.lo},
              {"hi", c.capacity.hi},
              {"step", c.capacity.step},
              {"resolution", c.capacity.resolution}}},
            {"tap_alphas", c.tap_alphas},
            {"x", c.x},
            {"y", c.y},
            {"out", c.out.string()},
            {"jobs", c.jobs}};
}

}  // namespace corrpat::cli
