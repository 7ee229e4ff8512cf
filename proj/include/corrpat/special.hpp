#pragma once
// Gaussian tail functions in the log domain.

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <numbers>

namespace corrpat {

inline constexpr double kInvSqrt2Pi = 0.3989422804014327;

inline double phi(double t) { return kInvSqrt2Pi * std::exp(-0.5 * t * t); }

// H(x)/phi(x) for large x by the Laplace continued fraction.
inline double mills_upper(double x) {
    // Lentz evaluation of 1/(x+1/(x+2/(x+3/(x+...))))
    const double tiny = 1e-300;
    double f = x, C = x, D = 0.0;
    for (int k = 1; k < 200; ++k) {
        D = x + k * D;
        D = (std::abs(D) < tiny) ? tiny : D;
        C = x + k / C;
        C = (std::abs(C) < tiny) ? tiny : C;
        D = 1.0 / D;
        const double delta = C * D;
        f *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return 1.0 / f;
}

// ln Phi(t), Phi the standard normal cdf.
inline double log_ncdf(double t) {
    if (t > -6.0) return std::log(0.5 * boost::math::erfc(-t / std::numbers::sqrt2));
    return std::log(mills_upper(-t)) - 0.5 * t * t - std::log(std::sqrt(2.0 * std::numbers::pi));
}

// phi(t)/Phi(t).
inline double inv_mills(double t) {
    if (t > -6.0) return phi(t) / (0.5 * boost::math::erfc(-t / std::numbers::sqrt2));
    return 1.0 / mills_upper(-t);
}

// ln H(x) with H(x) = P(Z > x).
inline double log_H(double x) { return log_ncdf(-x); }

}  // namespace corrpat
