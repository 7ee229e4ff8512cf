#pragma once
// F(x,y) and G(x): spectrum-dependent saddle-point functions.
//
// F depends on (x,y) only through u = xy.  Writing s = Lx*Ly and
// G(s) = <1/(s+lambda)>, the two saddle equations reduce to
//     Psi(s) := G(s) (s G(s) + alpha - 1) = alpha u,
// with Lx = (1-kappa)/x, Ly = (alpha-kappa)/(alpha y), kappa = <lambda/(s+lambda)>.
// The physical root is the one connected to s ~ 1/u as u -> 0.

#include "spectrum.hpp"

#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace corrpat {

struct FError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// no real saddle on the continued branch (u beyond the fold)
struct FoldError : FError {
    using FError::FError;
};

struct FEvaluation {
    double x = 0, y = 0;
    double value = 0;
    double lambda_x = 0, lambda_y = 0;
    double dF_dx = 0, dF_dy = 0;
    double d2F_xx = 0, d2F_xy = 0, d2F_yy = 0;
    double s = 0;           // Lx*Ly at the saddle
    bool continued = false; // closed-form continuation beyond the real sheet
};

// Scalar data along the saddle curve, parameterized by s.
// Phi(u) = F with u = xy; Phi'' = num/den where den > 0 on the sheet connected to u -> 0.
struct SaddlePoint {
    double s = 0, u = 0;
    double phi = 0, dphi = 0;
    double num = 0, den = 1;
    double kappa = 0;
    double d2phi() const { return num / den; }
};

struct GEvaluation {
    double x = 0;
    double value = 0;
    double dG = 0;
    double d2G = 0;
    double Lambda = 0;
};

class FFunction {
public:
    explicit FFunction(SpectrumModel spec) : spec_(std::move(spec)) {
        alpha_ = spec_.alpha;
        w0_ = spec_.zero_weight();
        spec_.for_each_positive([&](double, double w) { wc_ += w; });
        c0_ = w0_ + alpha_ - 1.0;
        if (std::abs(c0_) < 1e-12) c0_ = 0.0;
        trivial_ = wc_ <= 0.0;
        s_min_ = (w0_ > 0 && c0_ != 0.0) ? 0.0 : -spec_.min_positive();
        if (spec_.label == "marchenko_pastur")
            mp_edge_ = std::abs(alpha_ - 1.0) < 1e-14 ? 1.0 : 1.0 / std::sqrt(alpha_);
    }

    const SpectrumModel& spectrum() const { return spec_; }
    double alpha() const { return alpha_; }
    bool trivial() const { return trivial_; }
    double s_min() const { return s_min_; }

    // Psi(s) and Psi'(s); throws outside the domain.
    std::pair<double, double> psi(double s) const {
        const Mom m = moments(s, false);
        return {psi_of(m, s), dpsi_of(m, s)};
    }

    SaddlePoint at(double s) const {
        if (trivial_) throw FError("F: spectrum has no positive support");
        const Mom m = moments(s, true);
        SaddlePoint p;
        p.s = s;
        const double P = psi_of(m, s), dP = dpsi_of(m, s);
        p.u = P / alpha_;
        if (!(p.u > 0) || !std::isfinite(p.u)) throw FError("F: saddle outside domain (u <= 0)");
        p.kappa = m.kap;
        p.phi = value_of(m, s, p.u);
        p.dphi = -m.kap / (2.0 * p.u);
        // Phi'' = (-kappa' alpha u + kappa Psi') / (2 u^2 Psi'), kappa' = -kap1; sheet-1 Psi' < 0
        p.num = -(m.kap1 * alpha_ * p.u + m.kap * dP);
        p.den = -2.0 * p.u * p.u * dP;
        if (!std::isfinite(p.phi) || !std::isfinite(p.num) || !std::isfinite(p.den))
            throw FError("F: non-finite saddle data");
        return p;
    }

    // Saddle s on the branch connected to u -> 0.
    double locate(double u) const {
        if (!(u > 0)) throw FError("F: u must be positive");
        if (trivial_) throw FError("F: spectrum has no positive support");
        const double T = alpha_ * u;
        auto f = [&](double s) { return psi(s).first - T; };
        double s_hi = std::max(2.0 / u, 2.0 * std::abs(s_min_) + 1.0);
        for (int k = 0; f(s_hi) > 0; ++k) {
            if (k > 200) throw FError("F: cannot bracket saddle from above");
            s_hi *= 2.0;
        }
        double s_a = s_hi;
        double s_lo = std::numeric_limits<double>::quiet_NaN();
        for (int k = 0; k < 2000; ++k) {
            const double s_b = s_min_ + 0.5 * (s_a - s_min_);
            if (s_b - s_min_ <= 1e-15 * std::max(1.0, std::abs(s_min_)))
                throw FoldError("F: u=" + std::to_string(u) + " beyond the domain of the saddle branch");
            const auto [pb, dpb] = psi(s_b);
            if (pb - T >= 0) {
                s_lo = s_b;
                break;
            }
            if (dpb > 0) {
                // passed the maximum of Psi between s_b and s_a
                double a = s_b, b = s_a;
                for (int i = 0; i < 200 && b - a > 1e-15 * std::max(1.0, std::abs(b)); ++i) {
                    const double mid = 0.5 * (a + b);
                    (psi(mid).second > 0 ? a : b) = mid;
                }
                const double smax = 0.5 * (a + b);
                if (psi(smax).first - T < 0)
                    throw FoldError("F: no real saddle at u=" + std::to_string(u) + " (fold)");
                s_lo = smax;
                break;
            }
            s_a = s_b;
        }
        if (std::isnan(s_lo)) throw FError("F: saddle search failed");
        if (f(s_lo) == 0) return s_lo;
        std::uintmax_t iters = 200;
        auto tol = boost::math::tools::eps_tolerance<double>(52);
        auto r = boost::math::tools::toms748_solve(f, s_lo, s_a, tol, iters);
        return 0.5 * (r.first + r.second);
    }

    // Largest u reachable on the branch connected to u -> 0 (the fold of Psi, or the domain edge).
    double fold_u() const {
        if (trivial_) return std::numeric_limits<double>::infinity();
        double s_a = std::max(1.0, 2.0 * std::abs(s_min_) + 1.0);
        for (int k = 0; psi(s_a).second > 0; ++k) {
            if (k > 200) throw FError("F: cannot bracket fold");
            s_a *= 2.0;
        }
        double last = psi(s_a).first;
        for (int k = 0; k < 2000; ++k) {
            const double s_b = s_min_ + 0.5 * (s_a - s_min_);
            if (s_b - s_min_ <= 1e-15 * std::max(1.0, std::abs(s_min_))) break;
            std::pair<double, double> pb;
            try {
                pb = psi(s_b);
            } catch (const FError&) {
                break;
            }
            if (pb.second > 0) {
                double a = s_b, b = s_a;
                for (int i = 0; i < 200 && b - a > 1e-15 * std::max(1.0, std::abs(b)); ++i) {
                    const double mid = 0.5 * (a + b);
                    (psi(mid).second > 0 ? a : b) = mid;
                }
                return psi(0.5 * (a + b)).first / alpha_;
            }
            last = pb.first;
            s_a = s_b;
        }
        return last / alpha_;
    }

    FEvaluation evaluate(double x, double y) const {
        if (!(x > 0) || !(y > 0)) throw FError("F: x and y must be positive");
        const double u = x * y;
        FEvaluation e;
        e.x = x;
        e.y = y;
        if (trivial_) {
            e.lambda_x = 1.0 / x;
            e.lambda_y = 1.0 / y;
            e.s = e.lambda_x * e.lambda_y;
            return e;
        }
        double phi, dphi, d2phi, kappa;
        if (mp_edge_ > 0 && u > 0.9 * mp_edge_) {
            // closed-form continuation from the R-transform R(w) = alpha/(1-w):
            // G = u/(1-u), s = (1-u)(1-alpha u)/u, kappa = alpha u along the whole sheet
            const double u0 = 0.9 * mp_edge_;
            const SaddlePoint p0 = at(locate(u0));
            phi = p0.phi - 0.5 * alpha_ * (u - u0);
            dphi = -0.5 * alpha_;
            d2phi = 0.0;
            kappa = alpha_ * u;
            e.s = (1.0 - u) * (1.0 - alpha_ * u) / u;
            e.continued = true;
        } else {
            const SaddlePoint p = at(locate(u));
            phi = p.phi;
            dphi = p.dphi;
            d2phi = p.d2phi();
            kappa = p.kappa;
            e.s = p.s;
        }
        e.value = phi;
        e.lambda_x = (1.0 - kappa) / x;
        e.lambda_y = (alpha_ - kappa) / (alpha_ * y);
        e.dF_dx = y * dphi;
        e.dF_dy = x * dphi;
        e.d2F_xx = y * y * d2phi;
        e.d2F_yy = x * x * d2phi;
        e.d2F_xy = dphi + u * d2phi;
        return e;
    }

    // Saddle residuals of the (Lx, Ly) system at an evaluation.
    std::pair<double, double> saddle_residuals(const FEvaluation& e) const {
        double r1 = 0, r2 = 0;
        const double s = e.lambda_x * e.lambda_y;
        spec_.for_each([&](double l, double w) {
            r1 += w * e.lambda_y / (s + l);
            r2 += w * e.lambda_x / (s + l);
        });
        r1 -= e.x;
        r2 += (alpha_ - 1.0) / e.lambda_y - alpha_ * e.y;
        return {r1, r2};
    }

    GEvaluation evaluate_G(double x) const {
        GEvaluation g;
        g.x = x;
        if (x == 0.0) {
            const double m1 = spec_.mean();
            double m2 = 0;
            spec_.for_each([&](double l, double w) { m2 += w * l * l; });
            g.dG = 0.5 * m1;
            g.d2G = 0.5 * (m2 - m1 * m1);
            g.Lambda = std::numeric_limits<double>::infinity();
            return g;
        }
        // stationarity <1/(1+eps-lambda x)> = 1 with Lambda x = 1 + eps; t = 1+eps-max(lambda x) > 0
        const double top = x > 0 ? x * spec_.max_support() : x * spec_.min_support();
        auto h = [&](double t) {
            double acc = 0;
            spec_.for_each([&](double l, double w) { acc += w / (t + top - l * x); });
            return acc - 1.0;
        };
        double t_hi = 1.0;
        for (int k = 0; h(t_hi) > 0; ++k) {
            if (k > 200) throw FError("G: cannot bracket");
            t_hi *= 2.0;
        }
        double t_lo = std::min(0.5 * t_hi, 1e-3);
        for (int k = 0; h(t_lo) < 0; ++k) {
            if (k > 300 || t_lo < 1e-280) throw FError("G: no real saddle at x=" + std::to_string(x));
            t_lo *= 0.25;
        }
        std::uintmax_t iters = 200;
        auto tol = boost::math::tools::eps_tolerance<double>(52);
        auto r = boost::math::tools::toms748_solve(h, t_lo, t_hi, tol, iters);
        const double t = 0.5 * (r.first + r.second);
        const double eps = t + top - 1.0;
        double lsum = 0, s2 = 0;
        spec_.for_each([&](double l, double w) {
            const double d = t + top - l * x;
            lsum += w * std::log(d);
            s2 += w / (d * d);
        });
        g.value = -0.5 * lsum + 0.5 * eps;
        g.dG = eps / (2.0 * x);
        g.d2G = (1.0 - 1.0 / s2) / (2.0 * x * x);
        g.Lambda = (1.0 + eps) / x;
        return g;
    }

private:
    struct Mom {
        double g = 0, g1 = 0, kap = 0, kap1 = 0, lsum = 0;
    };

    Mom moments(double s, bool with_log) const {
        if (!(s > s_min_)) throw FError("F: saddle variable outside domain");
        Mom m;
        spec_.for_each_positive([&](double l, double w) {
            const double d = s + l;
            const double id = 1.0 / d;
            m.g += w * id;
            m.g1 += w * id * id;
            m.kap += w * l * id;
            m.kap1 += w * l * id * id;
            if (with_log) m.lsum += w * (s > 0 ? std::log1p(l / s) : std::log(d));
        });
        return m;
    }

    double psi_of(const Mom& m, double s) const {
        double v = m.g * (s * m.g + w0_ + c0_);
        if (w0_ * c0_ != 0.0) v += w0_ * c0_ / s;
        return v;
    }

    double dpsi_of(const Mom& m, double s) const {
        double v = -m.g1 * (s * m.g + w0_ + c0_) + m.g * (m.g - s * m.g1);
        if (w0_ * c0_ != 0.0) v -= w0_ * c0_ / (s * s);
        return v;
    }

    double value_of(const Mom& m, double s, double u) const {
        const double k = m.kap;
        if (s > 0) {
            // stable form: -1/2 ln(1-k) - a/2 ln(1-k/a) - 1/2 <ln(1+l/s)> - k
            if (!(k < 1.0) || !(k < alpha_)) throw FError("F: kappa out of range");
            return -0.5 * std::log1p(-k) - 0.5 * alpha_ * std::log1p(-k / alpha_) - 0.5 * m.lsum - k;
        }
        // s <= 0 only occurs when w0*c0 == 0
        if (c0_ == 0.0) {
            if (!(m.g > 0)) throw FError("F: non-positive Stieltjes value");
            return -0.5 * m.lsum - 0.5 * (alpha_ - 1.0) * std::log(m.g / alpha_) - 0.5 * std::log(u) - k;
        }
        const double j = alpha_ - k;
        if (j == 0.0) throw FError("F: degenerate saddle");
        return -0.5 * m.lsum - 0.5 * (alpha_ - 1.0) * std::log(std::abs(j / alpha_)) - 0.5 * std::log(u) - k;
    }

    SpectrumModel spec_;
    double alpha_ = 1, w0_ = 0, wc_ = 0, c0_ = 0, s_min_ = 0;
    double mp_edge_ = -1;
    bool trivial_ = false;
};

inline FEvaluation evaluate_F(const SpectrumModel& spec, double x, double y) {
    return FFunction(spec).evaluate(x, y);
}

inline GEvaluation evaluate_G(const SpectrumModel& spec, double x) { return FFunction(spec).evaluate_G(x); }

}  // namespace corrpat
