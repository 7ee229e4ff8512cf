#include "config.hpp"
#include "runner.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace corrpat::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("corrpat_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

int sh(const std::string& args, const fs::path& capture = {}) {
    std::string cmd = std::string(CORRPAT_CLI_PATH) + " " + args;
    cmd += capture.empty() ? " >/dev/null 2>&1" : " >" + capture.string() + " 2>/dev/null";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

fs::path write(const fs::path& dir, const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return dir / name;
}

const char* kSmallScan = R"(
experiment: replica-scan
spectrum: random_orthogonal
alpha: {start: 0.1, stop: 0.3, step: 0.1}
information: false
)";

}  // namespace

TEST(Config, AlphaGrid) {
    const auto g = alpha_range(0.05, 0.95, 0.01);
    ASSERT_EQ(g.size(), 91u);
    EXPECT_EQ(g.front(), 0.05);
    EXPECT_EQ(g[45], 0.5);
    EXPECT_EQ(g.back(), 0.95);
    EXPECT_EQ(parse_config("alpha: [0.2, 0.4]").alphas, (std::vector<double>{0.2, 0.4}));
}

TEST(Config, FailsFast) {
    auto bad = [](const std::string& y) {
        RunConfig c = parse_config(y);
        validate(c);
    };
    EXPECT_THROW(bad("alpha: []"), ConfigError);
    EXPECT_THROW(bad("alpha: [0.5, 0.4]"), ConfigError);
    EXPECT_THROW(bad("alpha: [0.5, 0.5]"), ConfigError);
    EXPECT_THROW(bad("alpha: {start: 0.1, stop: 0.5, step: 0}"), ConfigError);
    EXPECT_THROW(bad("alpha: {start: 0.1, stop: 0.5}"), ConfigError);
    EXPECT_THROW(bad("alpha: [0.5]\nspectrum: wigner"), ConfigError);
    EXPECT_THROW(bad("alpha: [1.5]\nspectrum: random_orthogonal"), ConfigError);
    EXPECT_THROW(bad("alpha: [0.5]\nrecognition: {prior: {kind: laplace}}"), ConfigError);
    EXPECT_THROW(bad("alpha: [0.5]\nsolver: {damping: 1.5}"), ConfigError);
    EXPECT_THROW(bad("alpha: [0.5]\nsolvr: {damping: 0.5}"), ConfigError);
    EXPECT_THROW(bad("alpha: [0.5]\nN: -3"), ConfigError);
    EXPECT_THROW(bad("alpha: [0.5]\nN: many"), ConfigError);
    EXPECT_THROW(bad("alpha: [0.5\n"), ConfigError);
    EXPECT_THROW(bad("experiment: figure1\nalpha: [0.5]\ntap_alphas: []"), ConfigError);
    EXPECT_THROW(bad("experiment: oracle-check\nalpha: [0.5]\nN: 30"), ConfigError);
    EXPECT_NO_THROW(bad("alpha: [0.5]"));
}

TEST(Config, ShippedPresetsAreValid) {
    for (const auto& e : fs::directory_iterator(CORRPAT_CONFIG_DIR)) {
        if (e.path().extension() != ".yaml") continue;
        EXPECT_NO_THROW(validate(load_config(e.path()))) << e.path();
    }
}

TEST(Config, ResolvedConfigRecordsModels) {
    RunConfig c = parse_config(R"(
alpha: [0.5]
generative: {prior: {kind: gaussian_unit, params: {variance: 2}}, channel: {kind: gaussian_noise, params: {sigma2: 0.1}}}
)");
    const auto j = to_json(c);
    EXPECT_EQ(j["generative"]["prior"]["params"]["variance"], 2.0);
    EXPECT_EQ(j["generative"]["channel"]["kind"], "gaussian_noise");
    EXPECT_EQ(j["labels"], "teacher");
}

TEST(Cli, EmptyAlphaExitsWithConfigErrorAndNoArtifacts) {
    const auto d = scratch("empty");
    const auto cfg = write(d, "c.yaml", "alpha: []\n");
    EXPECT_EQ(sh("replica-scan --config " + cfg.string() + " --out " + (d / "out").string()), 2);
    EXPECT_FALSE(fs::exists(d / "out"));
    EXPECT_EQ(sh("replica-scan --config " + (d / "missing.yaml").string()), 2);
    EXPECT_EQ(sh("no-such-command"), 2);
}

TEST(Cli, FfuncEvalPrintsJson) {
    const auto d = scratch("ffunc");
    ASSERT_EQ(sh("ffunc-eval --spectrum random_orthogonal --alpha 0.5 --x 0.5 --y 0.5", d / "o.json"), 0);
    const auto j = nlohmann::json::parse(slurp(d / "o.json"));
    EXPECT_NEAR(j["value"].get<double>(), -0.0672730175, 1e-9);
    EXPECT_EQ(j["spectrum"], "random_orthogonal");

    // spectrum file round trip
    std::ofstream(d / "mp.json") << to_json(corrpat::marchenko_pastur(2.0)).dump();
    ASSERT_EQ(sh("ffunc-eval --spectrum " + (d / "mp.json").string() + " --x 0.5 --y 2", d / "p.json"), 0);
    EXPECT_NEAR(nlohmann::json::parse(slurp(d / "p.json"))["value"].get<double>(), -1.0, 1e-8);
}

TEST(Cli, ReplicaScanIsByteIdentical) {
    const auto d = scratch("determinism");
    const auto cfg = write(d, "c.yaml", kSmallScan);
    ASSERT_EQ(sh("replica-scan --config " + cfg.string() + " --out " + (d / "a").string()), 0);
    ASSERT_EQ(sh("replica-scan --config " + cfg.string() + " --out " + (d / "b").string() + " --jobs 2"), 0);
    const auto a = slurp(d / "a" / "replica_scan.csv");
    EXPECT_EQ(a, slurp(d / "b" / "replica_scan.csv"));
    EXPECT_EQ(a.substr(0, a.find('\n')),
              "alpha,chi_w,q_w,m_w,chi_u,q_u,m_u,free_energy,entropy,at_margin,kl,mutual_info,iterations,residual,"
              "converged,rs_unstable");
    const auto m = nlohmann::json::parse(slurp(d / "a" / "manifest.json"));
    EXPECT_TRUE(m.contains("wall_time_s"));
    EXPECT_EQ(m["config"]["alphas"].size(), 3u);
}

TEST(Cli, ReplicaNonConvergenceIsFatal) {
    const auto d = scratch("nonconv");
    const auto cfg = write(d, "c.yaml", std::string(kSmallScan) + "solver: {newton_iter: 1}\n");
    EXPECT_EQ(sh("replica-scan --config " + cfg.string() + " --out " + (d / "o").string() + " --max-iter 1"), 3);
    EXPECT_TRUE(fs::exists(d / "o" / "replica_scan.csv"));
}

TEST(Cli, TapRunWritesRecordsAndSummary) {
    const auto d = scratch("tap");
    const auto cfg = write(d, "c.yaml", R"(
spectrum: random_orthogonal
alpha: [0.2, 0.4]
N: 60
samples: 3
seed: 5
)");
    ASSERT_EQ(sh("tap-run --config " + cfg.string() + " --out " + (d / "a").string()), 0);
    ASSERT_EQ(sh("tap-run --config " + cfg.string() + " --out " + (d / "b").string() + " --jobs 3"), 0);
    EXPECT_EQ(slurp(d / "a" / "tap_summary.csv"), slurp(d / "b" / "tap_summary.csv"));
    EXPECT_EQ(slurp(d / "a" / "tap_samples.jsonl"), slurp(d / "b" / "tap_samples.jsonl"));
    std::istringstream lines(slurp(d / "a" / "tap_samples.jsonl"));
    int n = 0;
    for (std::string l; std::getline(lines, l); ++n) {
        const auto j = nlohmann::json::parse(l);
        for (const char* k : {"alpha", "N", "converged", "iterations", "entropy", "residual"})
            EXPECT_TRUE(j.contains(k)) << k;
    }
    EXPECT_EQ(n, 6);
    // a different seed changes the instances
    ASSERT_EQ(sh("tap-run --config " + cfg.string() + " --out " + (d / "c").string() + " --seed 6"), 0);
    EXPECT_NE(slurp(d / "a" / "tap_samples.jsonl"), slurp(d / "c" / "tap_samples.jsonl"));
}

TEST(Cli, LocateCapacityReportsMissingSignChange) {
    const auto d = scratch("capacity");
    const auto cfg = write(d, "c.yaml", R"(
spectrum: random_orthogonal
capacity: {lo: 0.3, hi: 0.4, step: 0.05}
)");
    ASSERT_EQ(sh("locate-capacity --config " + cfg.string() + " --out " + d.string()), 0);
    const auto j = nlohmann::json::parse(slurp(d / "capacity.json"));
    EXPECT_TRUE(j["alpha_c"].is_null());
    EXPECT_TRUE(j.contains("alpha_c_error"));
}
