#include "runner.hpp"

#include <corrpat/ffunc.hpp>
#include <corrpat/oracle.hpp>
#include <corrpat/patterns.hpp>
#include <corrpat/rng.hpp>
#include <corrpat/tap.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#ifndef CORRPAT_VERSION
#define CORRPAT_VERSION "0.0.0"
#endif

namespace corrpat::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char b[40];
    std::snprintf(b, sizeof b, "%.12g", v);
    return b;
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : "nan"; }

json jnum(const std::optional<double>& v) {
    if (!v || !std::isfinite(*v)) return nullptr;
    return *v;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << s;
}

json sample_json(const TapSample& s) {
    return {{"alpha", s.alpha},     {"N", s.N},
            {"p", s.p},             {"seed", s.seed},
            {"converged", s.converged}, {"iterations", s.iterations},
            {"entropy", jnum(s.entropy)}, {"residual", jnum(s.residual)}};
}

std::string jsonl(const std::vector<TapSample>& v) {
    std::string out;
    for (const auto& s : v) out += sample_json(s).dump() + "\n";
    return out;
}

class Manifest {
public:
    explicit Manifest(const RunConfig& c) : t0_(std::chrono::steady_clock::now()) {
        j_ = {{"tool", "corrpat"}, {"version", CORRPAT_VERSION}, {"experiment", c.experiment}, {"config", to_json(c)},
              {"seeds", {{"base", c.seed}}}, {"artifacts", json::array()}};
    }
    void artifact(const fs::path& p) { j_["artifacts"].push_back(p.filename().string()); }
    json& operator[](const char* k) { return j_[k]; }
    void write(const fs::path& dir) {
        j_["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        write_text(dir / "manifest.json", j_.dump(2) + "\n");
    }

private:
    json j_;
    std::chrono::steady_clock::time_point t0_;
};

ReplicaProblem storage_problem(const SpectrumModel& s) {
    return {s, std::make_shared<IsingPrior>(), std::make_shared<RandomLabelChannel>(), std::make_shared<IsingPrior>(),
            std::make_shared<PerceptronChannel>()};
}

json ffunc_record(const SpectrumModel& s, double x, double y) {
    const FEvaluation e = evaluate_F(s, x, y);
    return {{"spectrum", s.label}, {"alpha", s.alpha},       {"x", e.x},           {"y", e.y},
            {"value", e.value},    {"lambda_x", e.lambda_x}, {"lambda_y", e.lambda_y}, {"dF_dx", e.dF_dx},
            {"dF_dy", e.dF_dy},    {"d2F_xx", e.d2F_xx},     {"d2F_xy", e.d2F_xy}, {"d2F_yy", e.d2F_yy},
            {"s", e.s},            {"continued", e.continued}};
}

int run_replica_scan(const RunConfig& c, std::ostream& log, Manifest& m) {
    const auto rows = replica_scan(c, c.alphas);
    std::ostringstream os;
    write_solution_csv(os, rows);
    const fs::path p = c.out / "replica_scan.csv";
    write_text(p, os.str());
    m.artifact(p);
    int bad = 0;
    for (const auto& r : rows) bad += !r.converged;
    m["non_converged"] = bad;
    log << "replica-scan: " << rows.size() << " points, " << bad << " not converged -> " << p.string() << "\n";
    return bad ? kExitNonConvergence : kExitOk;
}

int run_tap(const RunConfig& c, std::ostream& log, Manifest& m) {
    const auto samples = tap_batch(c, c.alphas);
    const fs::path ps = c.out / "tap_samples.jsonl", pa = c.out / "tap_summary.csv";
    write_text(ps, jsonl(samples));
    std::ostringstream os;
    write_summary_csv(os, summarize(samples));
    write_text(pa, os.str());
    m.artifact(ps);
    m.artifact(pa);
    json seeds = json::array();
    for (const auto& s : samples) seeds.push_back(s.seed);
    m["seeds"]["instances"] = seeds;
    log << "tap-run: " << samples.size() << " samples -> " << pa.string() << "\n";
    return kExitOk;
}

int run_figure1(const RunConfig& c, std::ostream& log, Manifest& m) {
    const auto curve = replica_scan(c, c.alphas);
    const auto samples = tap_batch(c, c.tap_alphas);
    const fs::path pr = c.out / "figure1_replica.csv", pt = c.out / "figure1_tap.csv",
                   ps = c.out / "figure1_tap_samples.jsonl";
    std::ostringstream a, b;
    write_solution_csv(a, curve);
    write_summary_csv(b, summarize(samples));
    write_text(pr, a.str());
    write_text(pt, b.str());
    write_text(ps, jsonl(samples));
    for (const auto& p : {pr, pt, ps}) m.artifact(p);
    json seeds = json::array();
    for (const auto& s : samples) seeds.push_back(s.seed);
    m["seeds"]["instances"] = seeds;
    log << "figure1: " << curve.size() << " replica points, " << samples.size() << " TAP samples -> "
        << c.out.string() << "\n";
    return kExitOk;
}

int run_capacity(const RunConfig& c, std::ostream& log, Manifest& m) {
    const auto& k = c.capacity;
    const CapacityResult r = locate_capacity(c.problem(k.lo), c.spectrum.kind, k.lo, k.hi, k.step, k.resolution,
                                             c.solver, c.spectrum.params);
    json j{{"alpha_c", jnum(r.alpha_c)}, {"alpha_at", jnum(r.alpha_at)}, {"lo", k.lo}, {"hi", k.hi},
           {"resolution", k.resolution}};
    if (!r.alpha_c) j["alpha_c_error"] = "no sign change of the entropy in the scanned range";
    if (!r.alpha_at) j["alpha_at_error"] = "no sign change of the AT margin in the scanned range";
    const fs::path pj = c.out / "capacity.json", pc = c.out / "capacity_scan.csv";
    write_text(pj, j.dump(2) + "\n");
    std::ostringstream os;
    write_solution_csv(os, r.scan);
    write_text(pc, os.str());
    m.artifact(pj);
    m.artifact(pc);
    log << "locate-capacity: alpha_c=" << num(r.alpha_c) << " alpha_AT=" << num(r.alpha_at) << "\n";
    return kExitOk;
}

int run_oracle(const RunConfig& c, std::ostream& log, Manifest& m) {
    const std::string kind = c.spectrum.pattern_kind();
    json report{{"checks", json::array()}};
    bool all = true;
    auto add = [&](json chk) {
        all = all && chk["pass"].get<bool>();
        report["checks"].push_back(std::move(chk));
    };
    for (double alpha : c.alphas) {
        const int p = int(std::lround(alpha * c.N));
        // enumeration vs replica entropy (Ising storage)
        std::vector<double> ent(c.samples);
        parallel_for(ent.size(), c.jobs, [&](std::size_t k) {
            GeneratorSpec g{kind, c.N, p, "random_pm1", nullptr, nullptr, instance_seed(c.seed, alpha, int(k))};
            const ProblemInstance inst =
                generate(g, std::make_shared<IsingPrior>(), std::make_shared<PerceptronChannel>());
            ent[k] = enumerate_ising(inst).entropy;
        });
        double mean = 0;
        for (double e : ent) mean += e / ent.size();
        const ReplicaSolution rs = solve_rs(storage_problem(c.spectrum.at(alpha)), std::nullopt, c.solver);
        add({{"name", "enumeration"},
             {"alpha", alpha},
             {"N", c.N},
             {"seeds", c.samples},
             {"mean_entropy", jnum(mean)},
             {"replica_entropy", rs.entropy},
             {"tolerance", 0.05},
             {"pass", rs.converged && std::abs(mean - rs.entropy) <= 0.05}});

        // Delta statistics for both priors
        for (const PriorPtr& pr : {PriorPtr(std::make_shared<IsingPrior>(false)),
                                   PriorPtr(std::make_shared<GaussianPrior>(1.0))}) {
            const DeltaReport d = delta_statistics_check(*pr, kind, c.N, p, std::max(c.samples, 50), c.seed);
            add({{"name", "delta_statistics"},
                 {"alpha", alpha},
                 {"prior", pr->kind()},
                 {"variance", d.variance},
                 {"expected_variance", d.expected_variance},
                 {"variance_se", d.variance_se},
                 {"kurtosis", d.kurtosis},
                 {"kurtosis_se", d.kurtosis_se},
                 {"pass", d.pass()}});
        }

        // Gaussian TAP vs exact posterior
        const int gs = std::min(c.samples, 10);
        std::vector<json> g(gs);
        parallel_for(g.size(), c.jobs, [&](std::size_t k) {
            auto prior = std::make_shared<GaussianPrior>(1.0);
            auto chan = std::make_shared<GaussianChannel>(0.5);
            GeneratorSpec spec{kind, c.N, p, "teacher", prior, chan, instance_seed(c.seed ^ 0x6a7, alpha, int(k))};
            const ProblemInstance inst = generate(spec, prior, chan);
            TAPOptions o;
            o.tol = 1e-12;
            o.max_iter = 5000;
            const TAPResult r = tap_solve(inst, o);
            const GaussianExact ex = gaussian_exact(inst);
            double err = std::numeric_limits<double>::infinity(), rel = err;
            if (r.converged) {
                err = (r.state.m_w - ex.mean).cwiseAbs().maxCoeff();
                const double lz = -tap_free_energy(inst, r.state, o.tol).free_energy;
                rel = std::abs(lz - ex.log_partition) / std::abs(ex.log_partition);
            }
            g[k] = {{"name", "gaussian_tap_exact"}, {"alpha", alpha},       {"seed", spec.seed},
                    {"converged", r.converged},     {"mean_error", jnum(err)}, {"log_partition_rel_error", jnum(rel)},
                    {"pass", r.converged && err <= 1e-8 && rel <= 1e-6}};
        });
        for (auto& j : g) add(std::move(j));
    }
    report["pass"] = all;
    const fs::path pj = c.out / "oracle_report.json";
    write_text(pj, report.dump(2) + "\n");
    m.artifact(pj);
    log << "oracle-check: " << (all ? "PASS" : "FAIL") << " (" << report["checks"].size() << " checks) -> "
        << pj.string() << "\n";
    return all ? kExitOk : kExitOracleFailed;
}

}  // namespace

std::uint64_t instance_seed(std::uint64_t base, double alpha, int k) {
    const auto key = std::uint64_t(std::llround(alpha * 1e6));
    return make_stream(base, "instance", (key << 24) ^ std::uint64_t(k)).next_u64();
}

std::vector<ReplicaSolution> replica_scan(const RunConfig& c, const std::vector<double>& alphas) {
    std::vector<ReplicaSolution> rows;
    if (alphas.empty()) return rows;
    if (!c.spectrum.file.empty()) {
        for (double a : alphas) rows.push_back(solve_rs(c.problem(a), std::nullopt, c.solver));
    } else {
        rows = scan_alpha(c.problem(alphas.front()), c.spectrum.kind, alphas, c.solver, c.spectrum.params);
    }
    if (c.information)
        parallel_for(rows.size(), c.jobs, [&](std::size_t i) {
            if (rows[i].converged) attach_information(rows[i], c.problem(rows[i].alpha), c.solver);
        });
    return rows;
}

TapSample tap_sample(const RunConfig& c, double alpha, std::uint64_t seed) {
    TapSample s;
    s.alpha = alpha;
    s.N = c.N;
    s.p = int(std::lround(alpha * c.N));
    s.seed = seed;
    const std::string mode = c.label_mode();
    GeneratorSpec g{c.spectrum.pattern_kind(), c.N, s.p, mode, nullptr, nullptr, seed};
    if (mode == "teacher") {
        g.teacher_prior = c.generative.make_prior();
        g.teacher_channel = c.generative.make_channel();
    }
    const ProblemInstance inst = generate(g, c.recognition.make_prior(), c.recognition.make_channel());
    TAPOptions o = c.tap;
    o.seed = seed;
    const TAPResult r = tap_solve(inst, o);
    s.converged = r.converged;
    s.iterations = r.state.iteration;
    try {
        s.residual = tap_residual(inst, r.state);
    } catch (const std::exception&) {
        s.residual = std::numeric_limits<double>::quiet_NaN();
    }
    if (r.converged) {
        try {
            s.entropy = tap_free_energy(inst, r.state, o.tol).entropy;
        } catch (const TAPError&) {
        }
    }
    return s;
}

std::vector<TapSample> tap_batch(const RunConfig& c, const std::vector<double>& alphas) {
    std::vector<TapSample> out(alphas.size() * std::size_t(c.samples));
    parallel_for(out.size(), c.jobs, [&](std::size_t i) {
        const double a = alphas[i / c.samples];
        const int k = int(i % c.samples);
        out[i] = tap_sample(c, a, instance_seed(c.seed, a, k));
    });
    return out;
}

std::vector<TapSummary> summarize(const std::vector<TapSample>& s) {
    std::vector<TapSummary> out;
    for (std::size_t i = 0; i < s.size();) {
        TapSummary t;
        t.alpha = s[i].alpha;
        t.N = s[i].N;
        double sum = 0, sum2 = 0, it = 0;
        std::size_t j = i;
        for (; j < s.size() && s[j].alpha == t.alpha; ++j) {
            ++t.samples;
            it += s[j].iterations;
            if (s[j].converged && s[j].entropy) {
                ++t.converged;
                sum += *s[j].entropy;
                sum2 += *s[j].entropy * *s[j].entropy;
            }
        }
        t.iterations_mean = it / t.samples;
        const double n = t.converged;
        t.entropy_mean = n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
        t.entropy_se = n > 1 ? std::sqrt(std::max(sum2 / n - t.entropy_mean * t.entropy_mean, 0.0) / (n - 1))
                             : std::numeric_limits<double>::quiet_NaN();
        out.push_back(t);
        i = j;
    }
    return out;
}

void write_solution_csv(std::ostream& os, const std::vector<ReplicaSolution>& rows) {
    os << "alpha,chi_w,q_w,m_w,chi_u,q_u,m_u,free_energy,entropy,at_margin,kl,mutual_info,iterations,residual,"
          "converged,rs_unstable\n";
    for (const auto& r : rows) {
        const auto& p = r.params;
        os << num(r.alpha) << ',' << num(p.chi_w) << ',' << num(p.q_w) << ',' << num(p.m_w) << ',' << num(p.chi_u)
           << ',' << num(p.q_u) << ',' << num(p.m_u) << ',' << num(r.free_energy) << ',' << num(r.entropy) << ','
           << num(r.at_margin) << ',' << num(r.kl) << ',' << num(r.mutual_info) << ',' << r.iterations << ','
           << num(r.residual) << ',' << int(r.converged) << ',' << int(r.rs_unstable) << '\n';
    }
}

void write_summary_csv(std::ostream& os, const std::vector<TapSummary>& rows) {
    os << "alpha,N,samples,converged,entropy_mean,entropy_se,iterations_mean\n";
    for (const auto& r : rows)
        os << num(r.alpha) << ',' << r.N << ',' << r.samples << ',' << r.converged << ',' << num(r.entropy_mean)
           << ',' << num(r.entropy_se) << ',' << num(r.iterations_mean) << '\n';
}

int run(const RunConfig& c, std::ostream& out, std::ostream& log) {
    validate(c);
    if (c.experiment == "ffunc-eval") {
        const double a = c.alphas.empty() ? 0.5 : c.alphas.front();
        json j;
        try {
            j = ffunc_record(c.spectrum.at(a), c.x, c.y);
        } catch (const FError& e) {
            log << "ffunc-eval: " << e.what() << "\n";
            return kExitNonConvergence;
        }
        out << j.dump(2) << "\n";
        return kExitOk;
    }
    fs::create_directories(c.out);
    Manifest m(c);
    int rc = kExitOk;
    if (c.experiment == "replica-scan") rc = run_replica_scan(c, log, m);
    else if (c.experiment == "tap-run") rc = run_tap(c, log, m);
    else if (c.experiment == "figure1") rc = run_figure1(c, log, m);
    else if (c.experiment == "locate-capacity") rc = run_capacity(c, log, m);
    else if (c.experiment == "oracle-check") rc = run_oracle(c, log, m);
    m["exit_code"] = rc;
    m.write(c.out);
    return rc;
}

}  // namespace corrpat::cli
