#pragma once
// Brute-force ground truth: Ising enumeration, Gaussian posterior algebra, Delta statistics.

#include "models.hpp"
#include "patterns.hpp"
#include "spectrum.hpp"

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrpat {

struct OracleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EnumerationResult {
    std::uint64_t count = 0;
    double entropy = 0;           // ln(count)/N, -inf when no solution
    Eigen::VectorXd exact_means;  // over the solution set (zero when empty)
};

namespace detail {

struct BlockTally {
    std::uint64_t count = 0;
    Eigen::VectorXd sum;
};

// States with Gray-code index in [lo, hi): w_i = +1 where bit i of gray(k) is set, else -1.
inline BlockTally enumerate_block(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::uint64_t lo,
                                  std::uint64_t hi) {
    const int N = int(X.cols()), p = int(X.rows());
    BlockTally t;
    t.sum = Eigen::VectorXd::Zero(N);
    if (lo >= hi) return t;
    std::uint64_t g = lo ^ (lo >> 1);
    Eigen::VectorXd w(N);
    for (int i = 0; i < N; ++i) w[i] = (g >> i) & 1 ? 1.0 : -1.0;
    // margins y_mu (X w)_mu; flipping w_i moves them along column i of diag(y) X
    const Eigen::MatrixXd Yx = y.asDiagonal() * X;
    Eigen::VectorXd marg = Yx * w;
    for (std::uint64_t k = lo;;) {
        bool ok = true;
        for (int m = 0; m < p; ++m)
            if (!(marg[m] > 0)) {
                ok = false;
                break;
            }
        if (ok) {
            ++t.count;
            t.sum += w;
        }
        if (++k == hi) break;
        const int i = std::countr_zero(k);
        w[i] = -w[i];
        marg += (2.0 * w[i]) * Yx.col(i);
    }
    return t;
}

}  // namespace detail

// Counts w in {-1,+1}^N with y_mu (X w)_mu > 0 for all mu; ties count as violations.
inline EnumerationResult enumerate_ising(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int blocks = 1) {
    const int N = int(X.cols());
    if (N > 24) throw OracleError("enumerate_ising: N > 24");
    if (X.rows() != y.size()) throw OracleError("enumerate_ising: shape mismatch");
    const std::uint64_t total = std::uint64_t(1) << N;
    blocks = std::max(1, std::min<int>(blocks, int(std::min<std::uint64_t>(total, 1024))));
    std::vector<std::future<detail::BlockTally>> fut;
    std::vector<detail::BlockTally> parts;
    for (int b = 0; b < blocks; ++b) {
        const std::uint64_t lo = total * b / blocks, hi = total * (b + 1) / blocks;
        if (blocks == 1)
            parts.push_back(detail::enumerate_block(X, y, lo, hi));
        else
            fut.push_back(std::async(std::launch::async, detail::enumerate_block, std::cref(X), std::cref(y), lo, hi));
    }
    for (auto& f : fut) parts.push_back(f.get());
    EnumerationResult r;
    r.exact_means = Eigen::VectorXd::Zero(N);
    for (auto& t : parts) {
        r.count += t.count;
        r.exact_means += t.sum;
    }
    if (r.count == 0) {
        r.entropy = -std::numeric_limits<double>::infinity();
    } else {
        r.entropy = std::log(double(r.count)) / N;
        r.exact_means /= double(r.count);
    }
    return r;
}

inline EnumerationResult enumerate_ising(const ProblemInstance& inst, int blocks = 1) {
    if (inst.prior->kind() != "ising_pm1") throw OracleError("enumerate_ising: prior must be Ising");
    if (inst.channel->kind() != "perceptron_step") throw OracleError("enumerate_ising: channel must be perceptron_step");
    return enumerate_ising(inst.X, inst.y, blocks);
}

struct GaussianExact {
    Eigen::VectorXd mean;
    double log_partition = 0;
};

// Posterior mean (I/v + X^T X/s2)^{-1} X^T y/s2 and ln N(y; 0, s2 I + v X X^T).
inline GaussianExact gaussian_exact(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double v, double s2) {
    const int p = int(X.rows());
    GaussianExact g;
    Eigen::MatrixXd A = X.transpose() * X / s2;
    A.diagonal().array() += 1.0 / v;
    Eigen::LLT<Eigen::MatrixXd> la(A);
    if (la.info() != Eigen::Success) throw OracleError("gaussian_exact: singular system");
    g.mean = la.solve(X.transpose() * y / s2);
    if (p == 0) return g;
    Eigen::MatrixXd C = v * X * X.transpose();
    C.diagonal().array() += s2;
    Eigen::LLT<Eigen::MatrixXd> lc(C);
    if (lc.info() != Eigen::Success) throw OracleError("gaussian_exact: singular covariance");
    const double logdet = 2.0 * Eigen::MatrixXd(lc.matrixL()).diagonal().array().log().sum();
    g.log_partition = -0.5 * p * std::log(2.0 * std::numbers::pi) - 0.5 * logdet - 0.5 * y.dot(lc.solve(y));
    return g;
}

inline GaussianExact gaussian_exact(const ProblemInstance& inst) {
    auto gp = std::dynamic_pointer_cast<const GaussianPrior>(inst.prior);
    auto gc = std::dynamic_pointer_cast<const GaussianChannel>(inst.channel);
    if (!gp || !gc) throw OracleError("gaussian_exact: needs Gaussian prior and channel");
    return gaussian_exact(inst.X, inst.y, gp->variance(), gc->sigma2());
}

struct DeltaReport {
    double expected_variance = 0;
    double variance = 0, variance_se = 0;
    double kurtosis = 0, kurtosis_se = 0;
    std::size_t n = 0;
    bool variance_pass = false, kurtosis_pass = false;
    bool pass() const { return variance_pass && kurtosis_pass; }
};

// Delta = X w with w ~ Q(w): per-component variance T_w <lambda>/alpha and Gaussian kurtosis.
inline DeltaReport delta_statistics_check(const Prior& prior, const std::string& kind, int N, int p, int samples,
                                          std::uint64_t seed, double n_se = 3.0) {
    if (N <= 0 || p <= 0 || samples <= 0) throw OracleError("delta_statistics_check: bad sizes");
    std::vector<double> d;
    d.reserve(std::size_t(samples) * p);
    for (int k = 0; k < samples; ++k) {
        const Eigen::MatrixXd X = make_patterns(kind, p, N, seed + std::uint64_t(k));
        Philox rw = make_stream(seed, "delta-w", std::uint64_t(k));
        Eigen::VectorXd w(N);
        for (int i = 0; i < N; ++i) w[i] = prior.sample(rw);
        const Eigen::VectorXd delta = X * w;
        d.insert(d.end(), delta.data(), delta.data() + p);
    }
    const double alpha = double(p) / N;
    // both ensembles have <lambda>_rho = alpha
    const SpectrumModel model = kind == "random_orthogonal" && p < N ? random_orthogonal(alpha) : marchenko_pastur(alpha);
    const double lam_mean = model.mean();
    DeltaReport r;
    r.n = d.size();
    r.expected_variance = prior.second_moment() * lam_mean / alpha;
    double m2 = 0, m4 = 0, m6 = 0, m8 = 0;
    for (double x : d) {
        const double x2 = x * x;
        m2 += x2, m4 += x2 * x2, m6 += x2 * x2 * x2, m8 += x2 * x2 * x2 * x2;
    }
    const double n = double(r.n);
    m2 /= n, m4 /= n, m6 /= n, m8 /= n;
    r.variance = m2;
    r.variance_se = std::sqrt(std::max(m4 - m2 * m2, 0.0) / n);
    r.kurtosis = m4 / (m2 * m2);
    // delta method on (m2, m4)
    const double v22 = m4 - m2 * m2, v44 = m8 - m4 * m4, v24 = m6 - m2 * m4;
    const double g2 = -2.0 * m4 / (m2 * m2 * m2), g4 = 1.0 / (m2 * m2);
    r.kurtosis_se = std::sqrt(std::max(g2 * g2 * v22 + g4 * g4 * v44 + 2 * g2 * g4 * v24, 0.0) / n);
    r.variance_pass = std::abs(r.variance - r.expected_variance) <= n_se * r.variance_se;
    r.kurtosis_pass = std::abs(r.kurtosis - 3.0) <= n_se * r.kurtosis_se;
    return r;
}

}  // namespace corrpat
