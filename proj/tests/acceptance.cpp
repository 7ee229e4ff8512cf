// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include "oracles.hpp"

#include "config.hpp"
#include "runner.hpp"

#include <corrpat/ffunc.hpp>
#include <corrpat/oracle.hpp>
#include <corrpat/replica.hpp>
#include <corrpat/tap.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

using namespace corrpat;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, auto... v) {
    char b[512];
    std::snprintf(b, sizeof b, f, v...);
    return b;
}

ReplicaProblem storage(const SpectrumModel& s) {
    return {s, std::make_shared<IsingPrior>(), std::make_shared<RandomLabelChannel>(), std::make_shared<IsingPrior>(),
            std::make_shared<PerceptronChannel>()};
}

ReplicaProblem linear(const SpectrumModel& s, double s2q, double s2p) {
    return {s, std::make_shared<GaussianPrior>(1.0), std::make_shared<GaussianChannel>(s2q),
            std::make_shared<GaussianPrior>(1.0), std::make_shared<GaussianChannel>(s2p)};
}

Outcome c1_mp_identity() {
    double worst = 0;
    for (double a : {0.5, 1.0, 2.0})
        for (double x : {0.1, 0.5, 1.0, 2.0})
            for (double y : {0.1, 0.5, 1.0, 2.0})
                worst = std::max(worst, std::abs(evaluate_F(marchenko_pastur(a), x, y).value - oracle::mp_F(a, x, y)));
    return {worst <= 1e-8, fmt("max |F + alpha xy/2| = %.2e over 48 points (tol 1e-8)", worst)};
}

Outcome c2_orthogonal() {
    const double f = evaluate_F(random_orthogonal(0.5), 0.5, 0.5).value;
    const double ref = oracle::orthogonal_F(0.5, 0.25);
    const bool ok = std::abs(f - ref) <= 1e-6 && std::abs(f - -0.0672724) <= 1e-6;
    return {ok, fmt("F = %.10f, closed form %.10f, target -0.0672724 +- 1e-6", f, ref)};
}

Outcome c3_mp_capacity() {
    const auto r = locate_capacity(storage(marchenko_pastur(0.5)), "marchenko_pastur", 0.5, 0.9);
    if (!r.alpha_c) return {false, "no sign change of the entropy in [0.5, 0.9]"};
    return {std::abs(*r.alpha_c - 0.833) <= 0.003, fmt("alpha_c = %.4f (target 0.833 +- 0.003)", *r.alpha_c)};
}

Outcome c4_orthogonal_capacity() {
    const auto r = locate_capacity(storage(random_orthogonal(0.5)), "random_orthogonal", 0.5, 0.99);
    if (!r.alpha_c || !r.alpha_at) return {false, "missing sign change"};
    const bool ok = std::abs(*r.alpha_c - 0.940) <= 0.003 && std::abs(*r.alpha_at - 0.810) <= 0.005;
    return {ok, fmt("alpha_c = %.4f (0.940 +- 0.003), alpha_AT = %.4f (0.810 +- 0.005)", *r.alpha_c, *r.alpha_at)};
}

Outcome c5_figure1() {
    cli::RunConfig c = cli::parse_config(R"(
experiment: figure1
spectrum: random_orthogonal
N: 500
samples: 20
seed: 2024
tap: {damping: 0.5, tol: 1.0e-10, max_iter: 1000}
information: false
)");
    const std::vector<double> markers{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    const auto curve = cli::replica_scan(c, cli::alpha_range(0.01, 0.96, 0.01));
    auto replica_at = [&](double a) {
        for (const auto& r : curve)
            if (std::abs(r.alpha - a) < 1e-9) return r;
        throw std::runtime_error("alpha not on the curve");
    };
    bool ok = std::abs(curve.front().entropy - std::log(2.0)) < 0.02;
    // zero crossing of the replica curve
    double cross = std::nan("");
    for (std::size_t i = 1; i < curve.size(); ++i)
        if (curve[i - 1].entropy > 0 && curve[i].entropy <= 0) {
            const auto &a = curve[i - 1], &b = curve[i];
            cross = a.alpha + (b.alpha - a.alpha) * a.entropy / (a.entropy - b.entropy);
            break;
        }
    ok = ok && std::abs(cross - 0.940) <= 0.003;
    std::string detail = fmt("replica s(0.01)=%.4f, zero at %.4f; TAP-replica:", curve.front().entropy, cross);
    const auto sum = cli::summarize(cli::tap_batch(c, markers));
    for (const auto& t : sum) {
        const double d = t.entropy_mean - replica_at(t.alpha).entropy;
        const bool good = t.converged >= 20 && std::abs(d) <= 0.01;
        ok = ok && good;
        detail += fmt(" %.1f:%+.4f(%d/%d)", t.alpha, d, t.converged, t.samples);
    }
    const auto hard = cli::summarize(cli::tap_batch(c, {0.9}));
    const int failed = hard[0].samples - hard[0].converged;
    ok = ok && 2 * failed > hard[0].samples;
    detail += fmt("; alpha=0.9: %d/%d not converged in 1000 sweeps", failed, hard[0].samples);
    return {ok, detail};
}

Outcome c6_gaussian_tap() {
    double worst_mean = 0, worst_rel = 0;
    int conv = 0, total = 0;
    for (const std::string kind : {"iid_gaussian", "random_orthogonal"})
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            auto pr = std::make_shared<GaussianPrior>(1.0);
            auto ch = std::make_shared<GaussianChannel>(0.5);
            const auto inst = generate({kind, 200, 100, "teacher", pr, ch, seed}, pr, ch);
            TAPOptions o;
            o.tol = 1e-12;
            o.max_iter = 5000;
            const auto r = tap_solve(inst, o);
            ++total;
            if (!r.converged) continue;
            ++conv;
            const auto ex = gaussian_exact(inst);
            worst_mean = std::max(worst_mean, (r.state.m_w - oracle::gaussian_posterior_mean(inst.X, inst.y, 1.0, 0.5))
                                                  .cwiseAbs()
                                                  .maxCoeff());
            const double lz = -tap_free_energy(inst, r.state, o.tol).free_energy;
            worst_rel = std::max(worst_rel, std::abs(lz - ex.log_partition) / std::abs(ex.log_partition));
        }
    return {conv == total && worst_mean <= 1e-8 && worst_rel <= 1e-6,
            fmt("%d/%d converged, max mean error %.2e (1e-8), max lnZ rel error %.2e (1e-6)", conv, total, worst_mean,
                worst_rel)};
}

Outcome c7_mutual_information() {
    double worst = 0;
    for (double a : {0.5, 1.0})
        for (double s02 : {0.5, 1.0, 2.0}) {
            auto pr = std::make_shared<GaussianPrior>(1.0);
            auto ch = std::make_shared<GaussianChannel>(s02);
            worst = std::max(worst, std::abs(mutual_information(marchenko_pastur(a), pr, ch) -
                                             oracle::logdet_mi_mp(a, 1.0, s02)));
            worst = std::max(worst, std::abs(mutual_information(random_orthogonal(a), pr, ch) -
                                             oracle::logdet_mi_orthogonal(1.0, s02)));
        }
    return {worst <= 1e-4, fmt("max |MI - log-det| = %.2e over both spectra, alpha in {0.5,1} (tol 1e-4)", worst)};
}

Outcome c8_gaussian_route() {
    double worst = 0;
    bool conv = true;
    for (const std::string kind : {"marchenko_pastur", "random_orthogonal"})
        for (double s2 : {0.3, 1.0, 2.5})
            for (double a : {0.25, 0.5, 0.75}) {
                const auto s = make_spectrum(kind, a);
                const auto pb = linear(s, 1.0, s2);
                const auto x = solve_rs(pb);
                const auto y = gaussian_channel_free_energy(s, pb.p_prior, pb.q_prior, s2, 1.0);
                conv = conv && x.converged && y.converged;
                worst = std::max(worst, std::abs(x.free_energy - y.free_energy));
            }
    return {conv && worst <= 1e-6, fmt("max |f_rs - f_G| = %.2e on 3x3 (sigma2, alpha) per spectrum (tol 1e-6)", worst)};
}

Outcome c9_oracles() {
    const int N = 20, p = 10, seeds = 50;
    double mean = 0;
    for (int k = 0; k < seeds; ++k) {
        const auto inst = generate({"random_orthogonal", N, p, "random_pm1", nullptr, nullptr, std::uint64_t(1000 + k)},
                                   std::make_shared<IsingPrior>(), std::make_shared<PerceptronChannel>());
        mean += enumerate_ising(inst).entropy / seeds;
    }
    const auto rs = solve_rs(storage(random_orthogonal(0.5)));
    bool ok = rs.converged && std::abs(mean - rs.entropy) <= 0.05;
    std::string detail = fmt("enumeration %.4f vs replica %.4f;", mean, rs.entropy);
    for (const std::string kind : {"random_orthogonal", "iid_gaussian"})
        for (const PriorPtr& pr : {PriorPtr(std::make_shared<IsingPrior>(false)),
                                   PriorPtr(std::make_shared<GaussianPrior>(1.0))}) {
            const auto d = delta_statistics_check(*pr, kind, 400, 200, 50, 77);
            ok = ok && d.pass();
            detail += fmt(" %s/%s var %.4f+-%.4f kurt %.3f+-%.3f%s", kind.c_str(), pr->kind().c_str(), d.variance,
                          d.variance_se, d.kurtosis, d.kurtosis_se, d.pass() ? "" : " FAIL");
        }
    return {ok, detail};
}

int sh(const std::string& args) {
    const std::string cmd = std::string(CORRPAT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

Outcome c10_properties() {
    std::string detail;
    bool ok = true;
    // envelope derivatives
    double worst_d = 0;
    const double h = 1e-5;
    for (const auto& s : {marchenko_pastur(0.5), marchenko_pastur(2.0), random_orthogonal(0.5), single_atom(1.0, 1.5)}) {
        const FFunction f(s);
        for (auto [x, y] : {std::pair{0.3, 0.2}, std::pair{0.5, 0.2}, std::pair{0.2, 0.5}}) {
            const auto e = f.evaluate(x, y);
            const double fx = (f.evaluate(x + h, y).value - f.evaluate(x - h, y).value) / (2 * h);
            const double fy = (f.evaluate(x, y + h).value - f.evaluate(x, y - h).value) / (2 * h);
            worst_d = std::max({worst_d, std::abs(e.dF_dx - fx), std::abs(e.dF_dy - fy)});
        }
    }
    ok = ok && worst_d <= 1e-6;
    detail += fmt("envelope %.1e;", worst_d);
    // spectrum normalization
    double worst_n = 0;
    for (double a : {0.1, 0.5, 1.0, 2.0, 4.0}) worst_n = std::max(worst_n, std::abs(marchenko_pastur(a).total_weight() - 1));
    for (double a : {0.1, 0.5, 0.9}) worst_n = std::max(worst_n, std::abs(random_orthogonal(a).total_weight() - 1));
    ok = ok && worst_n <= 1e-12;
    detail += fmt(" normalization %.1e;", worst_n);
    // KL
    double kl_min = 1e300, kl_matched = 0;
    for (const std::string kind : {"marchenko_pastur", "random_orthogonal"})
        for (double s2p : {0.3, 0.5, 0.8, 1.5}) {
            const auto pb = linear(make_spectrum(kind, 0.5), 0.5, s2p);
            auto r = solve_rs(pb);
            attach_information(r, pb);
            if (!r.kl) {
                ok = false;
                continue;
            }
            if (s2p == 0.5)
                kl_matched = std::max(kl_matched, std::abs(*r.kl));
            else
                kl_min = std::min(kl_min, *r.kl);
        }
    ok = ok && kl_min >= -1e-8 && kl_matched <= 1e-8;
    detail += fmt(" KL min %.2e matched %.1e;", kl_min, kl_matched);
    // label-flip symmetry of TAP
    {
        const auto a = generate({"random_orthogonal", 300, 120, "random_pm1", nullptr, nullptr, 31},
                                std::make_shared<IsingPrior>(), std::make_shared<PerceptronChannel>());
        auto b = a;
        b.y = -b.y;
        TAPOptions o;
        o.seed = 3;
        TAPState init = tap_initial_state(a, o.seed), neg = init;
        neg.m_w = -neg.m_w, neg.m_u = -neg.m_u, neg.h_w = -neg.h_w, neg.h_u = -neg.h_u;
        const auto ra = tap_solve(a, o, init), rb = tap_solve(b, o, neg);
        const double d = (ra.state.m_w + rb.state.m_w).cwiseAbs().maxCoeff();
        ok = ok && ra.converged && rb.converged && d <= 1e-12;
        detail += fmt(" label flip %.1e;", d);
    }
    // byte-identical outputs under fixed seeds
    {
        const auto dir = fs::temp_directory_path() / "corrpat_acceptance";
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::ofstream(dir / "scan.yaml") << "spectrum: random_orthogonal\nalpha: {start: 0.2, stop: 0.6, step: 0.1}\n"
                                            "generative: {prior: {kind: gaussian_unit}, channel: {kind: gaussian_noise}}\n"
                                            "recognition: {prior: {kind: gaussian_unit}, channel: {kind: gaussian_noise, params: {sigma2: 0.7}}}\n";
        std::ofstream(dir / "tap.yaml") << "spectrum: random_orthogonal\nalpha: [0.3, 0.5]\nN: 100\nsamples: 4\nseed: 9\n";
        bool same = true;
        for (const char* what : {"scan", "tap"}) {
            const std::string cmd = std::string(what) == "scan" ? "replica-scan" : "tap-run";
            const std::string cfg = (dir / (std::string(what) + ".yaml")).string();
            same = same && sh(cmd + " --config " + cfg + " --out " + (dir / what / "a").string()) == 0;
            same = same && sh(cmd + " --config " + cfg + " --jobs 2 --out " + (dir / what / "b").string()) == 0;
            for (const auto& e : fs::directory_iterator(dir / what / "a")) {
                if (e.path().filename() == "manifest.json") continue;
                same = same && slurp(e.path()) == slurp(dir / what / "b" / e.path().filename());
            }
        }
        ok = ok && same;
        detail += same ? " CSV byte-identical" : " CSV differs";
        fs::remove_all(dir);
    }
    return {ok, detail};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"F-function Marchenko-Pastur identity", c1_mp_identity},
        {"F-function orthogonal closed form", c2_orthogonal},
        {"IID Ising storage capacity", c3_mp_capacity},
        {"orthogonal Ising capacity and AT point", c4_orthogonal_capacity},
        {"entropy curve: replica vs TAP at N=500", c5_figure1},
        {"Gaussian TAP exactness", c6_gaussian_tap},
        {"mutual information vs log-det", c7_mutual_information},
        {"Gaussian-channel route equivalence", c8_gaussian_route},
        {"enumeration and Delta-statistics oracles", c9_oracles},
        {"property suites", c10_properties},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::cout << "criterion " << i + 1 << " [" << (o.pass ? "PASS" : "FAIL") << "] " << criteria[i].first << " -- "
                  << o.detail << fmt(" (%.1fs)", dt) << std::endl;
    }
    std::cout << (failed ? "acceptance: FAIL (" + std::to_string(failed) + " criteria)" : "acceptance: PASS") << "\n";
    return failed ? 1 : 0;
}
