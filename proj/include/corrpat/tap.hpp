#pragma once
// TAP fixed point for a single instance (X, y).
//
//   h_u = X m_w - chi_u^ m_u,  m_u = d/dh ln int Dx P(y|sqrt(chi_u^) x + h_u),  chi_u = -<d2/dh2 ...>
//   h_w = X^T m_u + chi_w^ m_w, m_w = <w>(chi_w^, h_w),                        chi_w = <var>
//   chi_w^ = -2 chi_u Phi'(u),  chi_u^ = -(2/alpha) chi_w Phi'(u),  u = chi_w chi_u.

#include "ffunc.hpp"
#include "models.hpp"
#include "patterns.hpp"
#include "rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrpat {

struct TAPError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TAPState {
    Eigen::VectorXd m_w, m_u, h_w, h_u;
    double chi_w = 0, chi_u = 0, chi_w_hat = 0, chi_u_hat = 0;
    // saddle coordinate of F with u(saddle) = chi_w chi_u; NaN selects the branch connected to u -> 0
    double saddle = std::numeric_limits<double>::quiet_NaN();
    int iteration = 0;
    double delta = std::numeric_limits<double>::infinity();
    std::vector<double> trace;  // delta per sweep
    std::string failure;        // non-empty when the sweep could not be evaluated
};

struct TAPOptions {
    double damping = 0.5;  // weight of the proposed update
    int max_iter = 1000;
    double tol = 1e-10;
    std::uint64_t seed = 0;
    bool onsager = true;   // reaction terms; off only for regression checks
};

struct TAPResult {
    TAPState state;
    bool converged = false;
};

struct TAPEnergy {
    double free_energy = 0;  // Phi
    double entropy = 0;      // -Phi / N
};

namespace detail {

class TapContext {
public:
    explicit TapContext(const ProblemInstance& inst)
        : inst_(inst), ff_(inst.p() > 0 ? std::optional<FFunction>(inst.spectrum) : std::nullopt),
          alpha_(inst.alpha()), step_(inst.channel->kind() == "perceptron_step") {
        if (ff_) u_max_ = ff_->fold_u();
    }

    bool has_f() const { return bool(ff_); }
    SaddlePoint saddle(double s) const { return ff_->at(s); }
    // coordinate on the branch connected to u -> 0, capped just below the fold
    double coord(double u) const { return ff_->locate(std::min(u, u_max_ * (1.0 - 1e-9))); }
    double saddle_of(const TAPState& s) const { return std::isnan(s.saddle) ? coord(s.chi_w * s.chi_u) : s.saddle; }

    void conjugates(TAPState& s, double dphi) const {
        s.chi_w_hat = -2.0 * s.chi_u * dphi;
        s.chi_u_hat = alpha_ > 0 ? -(2.0 / alpha_) * s.chi_w * dphi : 0.0;
    }

    ChannelResult channel(double chat, double h, double y) const {
        if (step_ && chat > 0) {
            // keep the H argument >= -37
            const double lim = -37.0 * std::sqrt(chat);
            if (y * h < lim) h = y * lim;
        }
        return inst_.channel->log_evidence(chat, h, y);
    }

    double alpha() const { return alpha_; }
    const ProblemInstance& inst() const { return inst_; }

private:
    const ProblemInstance& inst_;
    std::optional<FFunction> ff_;
    double alpha_;
    bool step_;
    double u_max_ = std::numeric_limits<double>::infinity();
};

struct Sweep {
    Eigen::VectorXd m_u, m_w, h_u, h_w;
    double chi_u = 0, chi_w = 0;
};

inline void u_update(const TapContext& c, const TAPState& s, bool onsager, Sweep& o) {
    const ProblemInstance& in = c.inst();
    o.h_u = in.X * s.m_w;
    if (onsager) o.h_u -= s.chi_u_hat * s.m_u;
    o.m_u.resize(in.p());
    double acc = 0;
    for (int m = 0; m < in.p(); ++m) {
        const ChannelResult r = c.channel(s.chi_u_hat, o.h_u[m], in.y[m]);
        o.m_u[m] = r.d1;
        acc -= r.d2;
    }
    o.chi_u = in.p() > 0 ? acc / in.p() : 0.0;
}

inline void w_update(const TapContext& c, const TAPState& s, const Eigen::VectorXd& m_u, bool onsager, Sweep& o) {
    const ProblemInstance& in = c.inst();
    o.h_w = in.X.transpose() * m_u;
    if (onsager) o.h_w += s.chi_w_hat * s.m_w;
    o.m_w.resize(in.N());
    double acc = 0;
    for (int i = 0; i < in.N(); ++i) {
        const PriorResult r = in.prior->log_partition(s.chi_w_hat, o.h_w[i]);
        o.m_w[i] = r.mean;
        acc += r.var;
    }
    o.chi_w = acc / in.N();
}

// Susceptibilities consistent with the current means: solve for (chi_w, saddle) with
// chi_u = u(saddle)/chi_w.  Working in the saddle coordinate lets the solution pass the fold of F.
inline bool scalar_solve(const TapContext& c, TAPState& s, bool onsager) {
    const ProblemInstance& in = c.inst();
    const Eigen::VectorXd b_u = in.X * s.m_w;
    const Eigen::VectorXd b_w = in.X.transpose() * s.m_u;
    auto F = [&](const Eigen::Vector2d& x) -> std::optional<Eigen::Vector2d> {
        try {
            if (!(x[0] > 0)) return std::nullopt;
            const SaddlePoint sp = c.saddle(x[1]);
            TAPState t;
            t.chi_w = x[0];
            t.chi_u = sp.u / x[0];
            c.conjugates(t, sp.dphi);
            double vw = 0, vu = 0;
            for (int i = 0; i < in.N(); ++i)
                vw += in.prior->log_partition(t.chi_w_hat, b_w[i] + (onsager ? t.chi_w_hat * s.m_w[i] : 0.0)).var;
            for (int m = 0; m < in.p(); ++m)
                vu -= c.channel(t.chi_u_hat, b_u[m] - (onsager ? t.chi_u_hat * s.m_u[m] : 0.0), in.y[m]).d2;
            Eigen::Vector2d r(vw / in.N() - t.chi_w, vu / in.p() - t.chi_u);
            if (!r.allFinite()) return std::nullopt;
            return r;
        } catch (const std::exception&) {
            return std::nullopt;
        }
    };
    Eigen::Vector2d x(s.chi_w, c.saddle_of(s));
    auto g = F(x);
    if (!g) return false;
    for (int it = 0; it < 50 && g->cwiseAbs().maxCoeff() > 1e-14; ++it) {
        Eigen::Matrix2d J;
        for (int k = 0; k < 2; ++k) {
            const double h = 1e-7 * std::max(std::abs(x[k]), 1e-3);
            Eigen::Vector2d xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            auto gp = F(xp), gm = F(xm);
            if (gp && gm)
                J.col(k) = (*gp - *gm) / (2 * h);
            else if (gp)
                J.col(k) = (*gp - *g) / h;
            else if (gm)
                J.col(k) = (*g - *gm) / h;
            else
                return false;
        }
        const Eigen::Vector2d d = J.fullPivLu().solve(-*g);
        if (!d.allFinite()) return false;
        double lam = 1.0;
        bool ok = false;
        const double n0 = g->cwiseAbs().maxCoeff();
        while (lam > 1e-8) {
            const Eigen::Vector2d xn = x + lam * d;
            auto gn = F(xn);
            if (gn && gn->cwiseAbs().maxCoeff() < n0) {
                x = xn, g = gn, ok = true;
                break;
            }
            lam *= 0.5;
        }
        if (!ok) break;
    }
    if (g->cwiseAbs().maxCoeff() > 1e-10) return false;
    const SaddlePoint sp = c.saddle(x[1]);
    s.chi_w = x[0];
    s.chi_u = sp.u / x[0];
    s.saddle = x[1];
    c.conjugates(s, sp.dphi);
    return true;
}

}  // namespace detail

inline TAPState tap_initial_state(const ProblemInstance& inst, std::uint64_t seed) {
    detail::TapContext c(inst);
    TAPState s;
    Philox rng = make_stream(seed, "tap-init");
    s.m_w.resize(inst.N());
    for (int i = 0; i < inst.N(); ++i) s.m_w[i] = 1e-6 * rng.normal();
    s.m_u = Eigen::VectorXd::Zero(inst.p());
    s.chi_w = inst.prior->second_moment();
    s.h_w = Eigen::VectorXd::Zero(inst.N());
    s.h_u = Eigen::VectorXd::Zero(inst.p());
    if (inst.p() > 0) {
        // small-u limit of the conjugate: chi_u^ ~ (<lambda>/alpha) chi_w
        s.chi_u_hat = inst.spectrum.mean() / c.alpha() * s.chi_w;
        detail::Sweep o;
        detail::u_update(c, s, true, o);
        s.chi_u = o.chi_u;
        s.saddle = c.coord(s.chi_w * s.chi_u);
    }
    return s;
}

inline TAPResult tap_solve(const ProblemInstance& inst, const TAPOptions& opt = {},
                           std::optional<TAPState> init = std::nullopt) {
    if (!(opt.damping > 0) || opt.damping > 1) throw TAPError("tap: damping must be in (0, 1]");
    if (!(opt.tol > 0)) throw TAPError("tap: tol must be positive");
    detail::TapContext c(inst);
    TAPResult res;
    TAPState& s = res.state;
    s = init ? *init : tap_initial_state(inst, opt.seed);
    s.trace.clear();
    s.failure.clear();
    const double d = opt.damping;
    for (int it = 0; it < opt.max_iter; ++it) {
        try {
            const double cw0 = s.chi_w, cu0 = s.chi_u;
            detail::Sweep o;
            double delta = 0;
            if (c.has_f()) {
                if (!detail::scalar_solve(c, s, opt.onsager)) {
                    // plain substitution for the susceptibilities on this sweep
                    const double sd = c.coord(s.chi_w * s.chi_u);
                    c.conjugates(s, c.saddle(sd).dphi);
                    s.saddle = std::numeric_limits<double>::quiet_NaN();
                    detail::u_update(c, s, opt.onsager, o);
                    s.chi_u = d * o.chi_u + (1 - d) * s.chi_u;
                    detail::w_update(c, s, s.m_u, opt.onsager, o);
                    s.chi_w = d * o.chi_w + (1 - d) * s.chi_w;
                    delta = std::numeric_limits<double>::max();
                }
            } else {
                s.chi_w_hat = s.chi_u_hat = 0;
            }
            detail::u_update(c, s, opt.onsager, o);
            if (inst.p() > 0) delta = std::max(delta, (o.m_u - s.m_u).cwiseAbs().maxCoeff());
            s.m_u = d * o.m_u + (1 - d) * s.m_u;
            s.h_u = o.h_u;
            detail::w_update(c, s, s.m_u, opt.onsager, o);
            delta = std::max(delta, (o.m_w - s.m_w).cwiseAbs().maxCoeff());
            s.m_w = d * o.m_w + (1 - d) * s.m_w;
            s.h_w = o.h_w;
            if (!c.has_f()) s.chi_w = o.chi_w;
            delta = std::max({delta, std::abs(s.chi_w - cw0), std::abs(s.chi_u - cu0)});
            s.iteration = it + 1;
            s.delta = delta;
            s.trace.push_back(delta);
            if (!std::isfinite(delta)) {
                s.failure = "non-finite update";
                return res;
            }
            if (delta < opt.tol) {
                res.converged = true;
                return res;
            }
        } catch (const std::exception& e) {
            s.failure = e.what();
            return res;
        }
    }
    return res;
}

// Max violation of the TAP equations at a state (fields and conjugates recomputed).
inline double tap_residual(const ProblemInstance& inst, const TAPState& state) {
    detail::TapContext c(inst);
    TAPState s = state;
    double r = 0;
    try {
        if (c.has_f()) {
            const SaddlePoint sp = c.saddle(c.saddle_of(state));
            r = std::abs(sp.u - s.chi_w * s.chi_u);
            c.conjugates(s, sp.dphi);
        } else {
            s.chi_w_hat = s.chi_u_hat = 0;
        }
    } catch (const std::exception&) {
        return std::numeric_limits<double>::infinity();
    }
    detail::Sweep o;
    detail::u_update(c, s, true, o);
    if (inst.p() > 0) {
        r = std::max(r, (o.m_u - s.m_u).cwiseAbs().maxCoeff());
        r = std::max(r, (o.h_u - s.h_u).cwiseAbs().maxCoeff());
        r = std::max(r, std::abs(o.chi_u - s.chi_u));
    }
    detail::w_update(c, s, s.m_u, true, o);
    r = std::max(r, (o.m_w - s.m_w).cwiseAbs().maxCoeff());
    r = std::max(r, (o.h_w - s.h_w).cwiseAbs().maxCoeff());
    r = std::max(r, std::abs(o.chi_w - s.chi_w));
    r = std::max(r, std::abs(s.chi_w_hat - state.chi_w_hat));
    r = std::max(r, std::abs(s.chi_u_hat - state.chi_u_hat));
    return std::isfinite(r) ? r : std::numeric_limits<double>::infinity();
}

// Phi = -m_u^T X m_w - N F(chi_w, chi_u) + sum_i [h m - chi_w^ (chi_w + m^2)/2 - ln Z_i]
//                                        + sum_mu [h m - chi_u^ (chi_u - m^2)/2 - ln L_mu]
inline TAPEnergy tap_free_energy(const ProblemInstance& inst, const TAPState& s, double tol = 1e-10) {
    const double res = tap_residual(inst, s);
    if (!(res <= 100 * tol)) throw TAPError("tap_free_energy: state is not stationary (residual " + std::to_string(res) + ")");
    detail::TapContext c(inst);
    const int N = inst.N(), p = inst.p();
    double phi = 0;
    if (p > 0) phi -= s.m_u.dot(inst.X * s.m_w);
    if (c.has_f()) phi -= N * c.saddle(c.saddle_of(s)).phi;
    for (int i = 0; i < N; ++i) {
        const PriorResult r = inst.prior->log_partition(s.chi_w_hat, s.h_w[i]);
        phi += s.h_w[i] * s.m_w[i] - 0.5 * s.chi_w_hat * (s.chi_w + s.m_w[i] * s.m_w[i]) - r.logZ;
    }
    for (int m = 0; m < p; ++m) {
        const ChannelResult r = c.channel(s.chi_u_hat, s.h_u[m], inst.y[m]);
        phi += s.h_u[m] * s.m_u[m] - 0.5 * s.chi_u_hat * (s.chi_u - s.m_u[m] * s.m_u[m]) - r.logL;
    }
    return {phi, -phi / N};
}

}  // namespace corrpat
