#pragma once
// Experiment runner behind the corrpat CLI.

#include "config.hpp"

#include <corrpat/replica.hpp>

#include <atomic>
#include <cstdint>
#include <exception>
#include <iosfwd>
#include <optional>
#include <thread>
#include <vector>

namespace corrpat::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOracleFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNonConvergence = 3;

struct TapSample {
    double alpha = 0;
    int N = 0, p = 0;
    std::uint64_t seed = 0;
    bool converged = false;
    int iterations = 0;
    std::optional<double> entropy;
    double residual = 0;
};

struct TapSummary {
    double alpha = 0;
    int N = 0, samples = 0, converged = 0;
    double entropy_mean = 0, entropy_se = 0;  // over converged samples
    double iterations_mean = 0;
};

// Runs fn(i) for i in [0, n) on `jobs` threads. Results must be written by index.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
    const std::size_t t = std::min<std::size_t>(std::max(jobs, 1), n);
    if (t <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> err(n);
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < t; ++k)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < n;) try {
                    fn(i);
                } catch (...) {
                    err[i] = std::current_exception();
                }
        });
    for (auto& th : pool) th.join();
    for (auto& e : err)
        if (e) std::rethrow_exception(e);
}

// Instance seed for sample k at a given alpha; independent of the grid it appears in.
std::uint64_t instance_seed(std::uint64_t base, double alpha, int k);

std::vector<ReplicaSolution> replica_scan(const RunConfig& c, const std::vector<double>& alphas);
TapSample tap_sample(const RunConfig& c, double alpha, std::uint64_t seed);
std::vector<TapSample> tap_batch(const RunConfig& c, const std::vector<double>& alphas);
std::vector<TapSummary> summarize(const std::vector<TapSample>& s);

void write_solution_csv(std::ostream& os, const std::vector<ReplicaSolution>& rows);
void write_summary_csv(std::ostream& os, const std::vector<TapSummary>& rows);

// Validates, runs the configured experiment and writes its artifacts under c.out.
// ffunc-eval prints its record to `out`; progress goes to `log`.
// Returns the process exit code; throws ConfigError for invalid configurations.
int run(const RunConfig& c, std::ostream& out, std::ostream& log);

}  // namespace corrpat::cli
