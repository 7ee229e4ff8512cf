#pragma once
// Run configuration: YAML file -> validated RunConfig.

#include <corrpat/models.hpp>
#include <corrpat/replica.hpp>
#include <corrpat/spectrum.hpp>
#include <corrpat/tap.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrpat::cli {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Params = std::map<std::string, double>;

struct SpectrumBlock {
    std::string kind = "random_orthogonal";
    Params params;
    std::string file;  // JSON spectrum; fixes alpha

    SpectrumModel at(double alpha) const;
    SpectrumModel load_file() const;
    // pattern ensemble whose limiting spectrum this is
    std::string pattern_kind() const;
};

struct ModelBlock {
    std::string prior = "ising_pm1";
    std::string measure;  // counting | normalized (Ising only)
    Params prior_params;
    std::string channel = "perceptron_step";
    Params channel_params;

    PriorPtr make_prior() const { return corrpat::make_prior(prior, prior_params, measure); }
    ChannelPtr make_channel() const { return corrpat::make_channel(channel, channel_params); }
};

struct CapacityBlock {
    double lo = 0.5, hi = 1.0, step = 0.01, resolution = 1e-3;
};

struct RunConfig {
    std::string experiment = "replica-scan";
    SpectrumBlock spectrum;
    ModelBlock generative{"ising_pm1", "", {}, "random_label", {}};
    ModelBlock recognition;
    std::vector<double> alphas;
    nlohmann::json alpha_source;  // grid as written
    int N = 500;
    int samples = 20;
    std::uint64_t seed = 1;
    std::string labels = "auto";  // auto | random_pm1 | teacher
    SolverOptions solver;
    TAPOptions tap;
    bool information = true;  // kl / mutual_info columns
    CapacityBlock capacity;
    std::vector<double> tap_alphas;  // figure1 markers
    double x = 0.5, y = 0.5;         // ffunc-eval
    std::filesystem::path out = "out";
    int jobs = 1;

    ReplicaProblem problem(double alpha) const;
    std::string label_mode() const;
};

inline const std::vector<std::string>& experiments() {
    static const std::vector<std::string> e{"replica-scan", "tap-run",  "oracle-check",
                                            "ffunc-eval",   "figure1",  "locate-capacity"};
    return e;
}

RunConfig load_config(const std::filesystem::path& file);
RunConfig parse_config(const std::string& yaml_text);
// start/stop/step grid on integer multiples of step, rounded to 12 decimals
std::vector<double> alpha_range(double start, double stop, double step);
// fail-fast checks; throws ConfigError
void validate(const RunConfig& c);
nlohmann::json to_json(const RunConfig& c);

}  // namespace corrpat::cli
