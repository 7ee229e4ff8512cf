#pragma once
// Independent reference values for the tests. Nothing here calls the solvers under test.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace oracle {

// Marchenko-Pastur spectrum (iid patterns): F is exactly bilinear.
inline double mp_F(double alpha, double x, double y) { return -0.5 * alpha * x * y; }

// Two-atom spectrum (1-alpha) delta_0 + alpha delta_1: the saddle equation is quadratic.
// With D = 1 - 4 alpha u and r = (1 - sqrt D)/2, F = -ln(1 - r)/2 - r.
inline double orthogonal_F(double alpha, double u) {
    const double D = 1.0 - 4.0 * alpha * u;
    if (D <= 0) throw std::domain_error("orthogonal_F: beyond the branch point");
    const double r = 0.5 * (1.0 - std::sqrt(D));
    return -0.5 * std::log1p(-r) - r;
}

inline double orthogonal_dF(double alpha, double u) { return -alpha / (1.0 + std::sqrt(1.0 - 4.0 * alpha * u)); }

// Mutual information per output of the matched linear-Gaussian model:
// (1/p) (1/2) ln det(I + T XX^T / s0^2) -> (2 alpha)^-1 <ln(1 + lambda T / s0^2)>.
// For the two-atom spectrum only the unit atom (weight alpha) contributes.
inline double logdet_mi_orthogonal(double T, double s02) { return 0.5 * std::log1p(T / s02); }

// Same for the Marchenko-Pastur law, composite Simpson in theta with lambda = a + b cos(theta).
inline double logdet_mi_mp(double alpha, double T, double s02) {
    const double r = std::sqrt(alpha), lo = (r - 1) * (r - 1), hi = (r + 1) * (r + 1);
    const double a = 0.5 * (lo + hi), b = 0.5 * (hi - lo);
    auto f = [&](double th) {
        const double lam = a + b * std::cos(th), sn = b * std::sin(th);
        if (sn == 0.0) return 0.0;  // edges carry no weight (and lam = 0 at alpha = 1)
        return sn * sn / (2.0 * std::numbers::pi * lam) * std::log1p(lam * T / s02);
    };
    const int n = 20000;  // composite Simpson, integrand is smooth and periodic-like
    const double h = std::numbers::pi / n;
    double acc = 0;
    for (int k = 1; k < n; ++k) acc += (k % 2 ? 4.0 : 2.0) * f(k * h);
    return 0.5 / alpha * acc * h / 3.0;  // atom at zero contributes nothing
}

// Finite-sample version straight from the matrix.
inline double logdet_mi_matrix(const Eigen::MatrixXd& X, double T, double s02) {
    Eigen::MatrixXd C = T / s02 * X * X.transpose();
    C.diagonal().array() += 1.0;
    Eigen::LDLT<Eigen::MatrixXd> l(C);
    return 0.5 * l.vectorD().array().log().sum() / double(X.rows());
}

// Naive enumeration: every configuration, all margins recomputed.
inline std::uint64_t count_solutions(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const int N = int(X.cols());
    std::uint64_t count = 0;
    Eigen::VectorXd w(N);
    for (std::uint64_t k = 0; k < (std::uint64_t(1) << N); ++k) {
        for (int i = 0; i < N; ++i) w[i] = (k >> i) & 1 ? 1.0 : -1.0;
        const Eigen::VectorXd m = y.asDiagonal() * (X * w);
        if ((m.array() > 0).all()) ++count;
    }
    return count;
}

// Posterior mean of w ~ N(0, v I), y = Xw + N(0, s2 I), via the p x p system.
inline Eigen::VectorXd gaussian_posterior_mean(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double v,
                                               double s2) {
    Eigen::MatrixXd C = v * X * X.transpose();
    C.diagonal().array() += s2;
    return v * X.transpose() * C.ldlt().solve(y);
}

}  // namespace oracle
