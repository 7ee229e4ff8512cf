// corrpat: config-driven runner for the replica, TAP and oracle experiments.
#include "config.hpp"
#include "runner.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Flags {
    std::string config, out, spectrum;
    std::optional<std::uint64_t> seed;
    std::optional<int> samples, jobs, max_iter;
    std::optional<double> damping, tol, alpha, x, y;
};

void common(CLI::App* sub, Flags& f, bool config_required) {
    auto* c = sub->add_option("--config", f.config, "YAML run configuration");
    if (config_required) c->required();
    c->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--seed", f.seed, "base seed");
    sub->add_option("--samples", f.samples, "instances per alpha");
    sub->add_option("--jobs", f.jobs, "worker threads");
    sub->add_option("--damping", f.damping, "damping (weight of the new iterate)");
    sub->add_option("--tol", f.tol, "convergence tolerance");
    sub->add_option("--max-iter", f.max_iter, "iteration cap");
}

corrpat::cli::RunConfig resolve(const std::string& experiment, const Flags& f) {
    using corrpat::cli::RunConfig;
    RunConfig c = f.config.empty() ? RunConfig{} : corrpat::cli::load_config(f.config);
    c.experiment = experiment;
    if (!f.out.empty()) c.out = f.out;
    if (f.seed) c.seed = *f.seed;
    if (f.samples) c.samples = *f.samples;
    if (f.jobs) c.jobs = *f.jobs;
    // solver overrides go to whichever iteration the experiment is limited by
    const bool tap = experiment == "tap-run" || experiment == "figure1";
    if (f.damping) (tap ? c.tap.damping : c.solver.damping) = *f.damping;
    if (f.tol) (tap ? c.tap.tol : c.solver.tol) = *f.tol;
    if (f.max_iter) (tap ? c.tap.max_iter : c.solver.max_iter) = *f.max_iter;
    if (!f.spectrum.empty()) {
        c.spectrum = {};
        if (std::filesystem::exists(f.spectrum)) {
            c.spectrum.file = f.spectrum;
            c.spectrum.kind = "file";
        } else {
            c.spectrum.kind = f.spectrum;
        }
    }
    if (f.alpha) c.alphas = {*f.alpha};
    if (!c.spectrum.file.empty() && !f.alpha) {
        // a spectrum file carries its own alpha
        c.alphas = {c.spectrum.load_file().alpha};
    }
    if (f.x) c.x = *f.x;
    if (f.y) c.y = *f.y;
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace corrpat::cli;
    CLI::App app{"corrpat: learning with correlated patterns"};
    app.require_subcommand(1);
    app.set_version_flag("--version", CORRPAT_VERSION);
    Flags f;
    std::string chosen;
    for (const auto& name : experiments()) {
        auto* sub = app.add_subcommand(name);
        const bool ff = name == "ffunc-eval";
        common(sub, f, !ff);
        if (ff) {
            sub->add_option("--spectrum", f.spectrum, "preset name or spectrum JSON file")->required();
            sub->add_option("--alpha", f.alpha, "pattern ratio for presets");
            sub->add_option("--x", f.x, "first argument")->required();
            sub->add_option("--y", f.y, "second argument")->required();
        }
        sub->callback([&chosen, name] { chosen = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }
    try {
        const RunConfig c = resolve(chosen, f);
        return run(c, std::cout, std::cerr);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
