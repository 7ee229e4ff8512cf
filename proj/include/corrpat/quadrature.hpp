#pragma once
// Fixed-node Gaussian quadratures via Golub-Welsch.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace corrpat {

struct Rule {
    std::vector<double> x;
    std::vector<double> w;
    std::size_t size() const { return x.size(); }
};

namespace detail {

inline Rule golub_welsch(const Eigen::VectorXd& off, double mu0) {
    const Eigen::Index n = off.size() + 1;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
        J(k, k + 1) = off(k);
        J(k + 1, k) = off(k);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    Rule r;
    r.x.resize(n);
    r.w.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        r.x[k] = es.eigenvalues()(k);
        const double v = es.eigenvectors()(0, k);
        r.w[k] = mu0 * v * v;
    }
    return r;
}

}  // namespace detail

// Nodes/weights on [-1, 1].
inline Rule gauss_legendre(int n) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: n < 1");
    Eigen::VectorXd off(n - 1);
    for (int k = 1; k < n; ++k) off(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
    Rule r = detail::golub_welsch(off, 2.0);
    // polish nodes with Newton on P_n; eigenvector weights lose accuracy near the ends
    for (int i = 0; i < n; ++i) {
        double x = r.x[i], dp = 1.0;
        for (int it = 0; it < 3; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            x -= p1 / dp;
        }
        r.x[i] = x;
        r.w[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return r;
}

// Probabilists' Gauss-Hermite: sum w_k f(x_k) ~ E f(Z), Z ~ N(0,1).
inline Rule gauss_hermite(int n) {
    if (n < 1) throw std::invalid_argument("gauss_hermite: n < 1");
    Eigen::VectorXd off(n - 1);
    for (int k = 1; k < n; ++k) off(k - 1) = std::sqrt(double(k));
    Rule r = detail::golub_welsch(off, 1.0);
    double s = 0;
    for (double w : r.w) s += w;
    for (double& w : r.w) w /= s;
    return r;
}

inline const Rule& hermite96() {
    static const Rule r = gauss_hermite(96);
    return r;
}

}  // namespace corrpat
