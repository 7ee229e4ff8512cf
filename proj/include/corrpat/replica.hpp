#pragma once
// Replica-symmetric saddle point for inference from correlated patterns.
//
// Free energy  f = A0 + A_w + alpha A_u  with
//   A0  = Phi(u) + q_w chi_u Phi' - q_u chi_w Phi' + T_w m_u^2 (<l>/2 + Phi')/chi_u - 2 m_w m_u Phi',
//   u = chi_w chi_u, Phi(u) = F(chi_w, chi_u),
//   A_w = chi_w^/2 (chi_w+q_w) - q_w^ chi_w/2 - m_w^ m_w + E ln Tr_w P(w) e^{-chi_w^ w^2/2 + (sqrt(q_w^) z + m_w^ w0) w},
//   A_u = chi_u^/2 (chi_u-q_u) + q_u^ chi_u/2 - m_u^ m_u + E ln int Dx P(y | sqrt(chi_u^) x + sqrt(q_u^) z).
//
// The solver unknowns are theta = (chi_w, q_w, m_w, c, zeta, m_u): c is the saddle coordinate of F
// (chi_u = u(c)/chi_w) and zeta rotates (B, Phi'' B), B = chi_u Qt - q_u chi_w, so that the
// equations stay regular where Phi'' has a pole (fold of the F saddle).

#include "ffunc.hpp"
#include "models.hpp"
#include "quadrature.hpp"
#include "spectrum.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrpat {

struct ReplicaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OrderParameterSet {
    double chi_w = 0, q_w = 0, m_w = 0, chi_u = 0, q_u = 0, m_u = 0;
    double chi_w_hat = 0, q_w_hat = 0, m_w_hat = 0, chi_u_hat = 0, q_u_hat = 0, m_u_hat = 0;
};

struct ReplicaSolution {
    double alpha = 0;
    OrderParameterSet params;
    double free_energy = 0;
    double entropy = 0;
    double at_margin = 0;
    double chi_w2 = 0, chi_u2 = 0;
    std::optional<double> kl, mutual_info;
    int iterations = 0;
    double residual = 0;
    bool converged = false;
    bool rs_unstable = false;
    // solver coordinates, reusable as a continuation seed
    double coord = 0, zeta = 0;
    std::string method;
};

struct ReplicaProblem {
    SpectrumModel spectrum;
    PriorPtr q_prior;      // generative
    ChannelPtr q_channel;
    PriorPtr p_prior;      // recognition
    ChannelPtr p_channel;
};

struct SolverOptions {
    double damping = 0.5;  // weight of the proposed update
    double tol = 1e-10;
    int max_iter = 5000;
    int newton_iter = 100;
};

// F along its saddle curve. The MP spectrum uses the exact R-transform form Phi = -alpha u/2.
class SaddleCurve {
public:
    struct Data {
        double u, phi, dphi, num, den;
    };

    explicit SaddleCurve(const SpectrumModel& spec)
        : ff_(spec), mp_(spec.label == "marchenko_pastur"), alpha_(spec.alpha), mean_(spec.mean()) {}

    Data at(double c) const {
        if (mp_) {
            if (!(c > 0)) throw FError("F: u must be positive");
            return {c, -0.5 * alpha_ * c, -0.5 * alpha_, 0.0, 1.0};
        }
        const SaddlePoint p = ff_.at(c);
        return {p.u, p.phi, p.dphi, p.num, p.den};
    }
    double coord(double u) const { return mp_ ? u : ff_.locate(u); }
    double alpha() const { return alpha_; }
    double mean_lambda() const { return mean_; }
    bool exact_mp() const { return mp_; }
    const FFunction& ffunc() const { return ff_; }

private:
    FFunction ff_;
    bool mp_;
    double alpha_, mean_;
};

namespace detail {

using Vec = Eigen::VectorXd;

struct WAverages {
    double chi = 0, q = 0, m = 0, logZ = 0, chi2 = 0;
};

struct UAverages {
    double chi = 0, q = 0, m = 0, logL = 0, chi2 = 0;
};

inline WAverages w_side(const Prior& P, const std::vector<std::pair<double, double>>& q_measure, double chat,
                        double qhat, double mhat) {
    const Rule& gh = hermite96();
    const double sq = std::sqrt(qhat);
    WAverages a;
    for (auto [w0, ww] : q_measure) {
        for (std::size_t k = 0; k < gh.size(); ++k) {
            const PriorResult r = P.log_partition(chat, sq * gh.x[k] + mhat * w0);
            const double wt = ww * gh.w[k];
            a.chi += wt * r.var;
            a.q += wt * r.mean * r.mean;
            a.m += wt * w0 * r.mean;
            a.logZ += wt * r.logZ;
            a.chi2 += wt * r.var * r.var;
        }
    }
    return a;
}

inline UAverages u_side(const Channel& P, const Channel& Q, double chat, double qhat, double mhat, double That) {
    const Rule& gh = hermite96();
    const double sq = std::sqrt(qhat);
    double v = qhat > 0 ? That - mhat * mhat / qhat : That;
    if (v < 0) {
        if (v < -1e-10 * std::max(1.0, That)) throw ReplicaError("replica: generative variance negative");
        v = 0;
    }
    UAverages a;
    std::vector<OutputNode> ys;
    for (std::size_t k = 0; k < gh.size(); ++k) {
        const double z = gh.x[k];
        const double mu = qhat > 0 ? mhat * z / sq : 0.0;
        Q.output_measure(v, mu, ys);
        const double h = sq * z;
        for (const OutputNode& o : ys) {
            if (o.weight == 0) continue;
            const ChannelResult c = P.log_evidence(chat, h, o.y);
            if (!std::isfinite(c.logL)) throw ReplicaError("replica: recognition channel excludes a generated output");
            const double wt = gh.w[k] * o.weight;
            a.chi -= wt * c.d2;
            a.q += wt * c.d1 * c.d1;
            a.m += wt * o.dlog * c.d1;
            a.logL += wt * c.logL;
            a.chi2 += wt * c.d2 * c.d2;
        }
    }
    return a;
}

struct Point {
    double chi_w, q_w, m_w, chi_u, q_u, m_u;
    SaddleCurve::Data sd;
    double P;  // Phi'' * B
    double d2phi;
    OrderParameterSet hats;
    WAverages wa;
    UAverages ua;
};

struct Model {
    const SaddleCurve& curve;
    const ReplicaProblem& pb;
    double alpha, mean_l, Tw, That;
    std::vector<std::pair<double, double>> q_measure;

    Model(const SaddleCurve& c, const ReplicaProblem& p)
        : curve(c), pb(p), alpha(c.alpha()), mean_l(c.mean_lambda()) {
        Tw = pb.q_prior->second_moment();
        That = Tw * mean_l / alpha;
        q_measure = pb.q_prior->measure();
    }

    // conjugates and single-site averages given the six order parameters and the F data
    void complete(Point& p) const {
        const double a = alpha;
        const double d1 = p.sd.dphi;
        const double r = p.m_u / p.chi_u;
        OrderParameterSet& h = p.hats;
        h.chi_w = p.chi_w, h.q_w = p.q_w, h.m_w = p.m_w, h.chi_u = p.chi_u, h.q_u = p.q_u, h.m_u = p.m_u;
        h.chi_w_hat = -2.0 * p.chi_u * d1;
        h.m_w_hat = -2.0 * p.m_u * d1;
        const double dA_dchiw = p.chi_u * d1 - p.q_u * d1 + p.chi_u * p.P;
        h.q_w_hat = h.chi_w_hat + 2.0 * dA_dchiw;
        h.chi_u_hat = -(2.0 / a) * p.chi_w * d1;
        const double dA_dchiu = p.chi_w * d1 + p.q_w * d1 - Tw * r * r * (0.5 * mean_l + d1) + p.chi_w * p.P;
        h.q_u_hat = -h.chi_u_hat - (2.0 / a) * dA_dchiu;
        h.m_u_hat = (Tw * r * (mean_l + 2.0 * d1) - 2.0 * p.m_w * d1) / a;
        if (!(h.q_w_hat >= 0) || !(h.q_u_hat >= 0) || !(h.chi_u_hat > 0))
            throw ReplicaError("replica: conjugates outside the domain");
        p.wa = w_side(*pb.p_prior, q_measure, h.chi_w_hat, h.q_w_hat, h.m_w_hat);
        p.ua = u_side(*pb.p_channel, *pb.q_channel, h.chi_u_hat, h.q_u_hat, h.m_u_hat, That);
    }

    double qtilde(double q_w, double m_w, double chi_u, double m_u) const {
        const double r = m_u / chi_u;
        return q_w + Tw * r * r - 2.0 * m_w * r;
    }

    Point from_theta(const Vec& t) const {
        Point p;
        p.chi_w = t[0], p.q_w = t[1], p.m_w = t[2], p.m_u = t[5];
        if (!(p.chi_w > 0)) throw ReplicaError("replica: chi_w <= 0");
        p.sd = curve.at(t[3]);
        p.chi_u = p.sd.u / p.chi_w;
        const double n = std::hypot(p.sd.num, p.sd.den);
        const double B = t[4] * p.sd.den / n;
        p.P = t[4] * p.sd.num / n;
        p.d2phi = p.sd.num / p.sd.den;
        p.q_u = (p.chi_u * qtilde(p.q_w, p.m_w, p.chi_u, p.m_u) - B) / p.chi_w;
        complete(p);
        return p;
    }

    Point from_natural(const Vec& v) const {
        Point p;
        p.chi_w = v[0], p.q_w = v[1], p.m_w = v[2], p.chi_u = v[3], p.q_u = v[4], p.m_u = v[5];
        if (!(p.chi_w > 0) || !(p.chi_u > 0)) throw ReplicaError("replica: susceptibility <= 0");
        p.sd = curve.at(curve.coord(p.chi_w * p.chi_u));
        p.d2phi = p.sd.num / p.sd.den;
        const double B = p.chi_u * qtilde(p.q_w, p.m_w, p.chi_u, p.m_u) - p.q_u * p.chi_w;
        p.P = p.d2phi * B;
        complete(p);
        return p;
    }

    static Vec natural(const Point& p) {
        Vec v(6);
        v << p.chi_w, p.q_w, p.m_w, p.chi_u, p.q_u, p.m_u;
        return v;
    }
    static Vec proposed(const Point& p) {
        Vec v(6);
        v << p.wa.chi, p.wa.q, p.wa.m, p.ua.chi, p.ua.q, p.ua.m;
        return v;
    }

    Vec theta_of(const Point& p) const {
        Vec t(6);
        const double c = curve.coord(p.chi_w * p.chi_u);
        const SaddleCurve::Data sd = curve.at(c);
        const double n = std::hypot(sd.num, sd.den);
        const double B = p.chi_u * qtilde(p.q_w, p.m_w, p.chi_u, p.m_u) - p.q_u * p.chi_w;
        t << p.chi_w, p.q_w, p.m_w, c, B * n / sd.den, p.m_u;
        return t;
    }

    ReplicaSolution finish(const Point& p, const Vec& theta) const {
        ReplicaSolution s;
        s.alpha = alpha;
        s.params = p.hats;
        const OrderParameterSet& h = p.hats;
        const double d1 = p.sd.dphi;
        const double r = p.m_u / p.chi_u;
        const double A0 = p.sd.phi + p.q_w * p.chi_u * d1 - p.q_u * p.chi_w * d1 + Tw * p.m_u * r * (0.5 * mean_l + d1) -
                          2.0 * p.m_w * p.m_u * d1;
        const double Aw = 0.5 * h.chi_w_hat * (p.chi_w + p.q_w) - 0.5 * h.q_w_hat * p.chi_w - h.m_w_hat * p.m_w + p.wa.logZ;
        const double Au = 0.5 * h.chi_u_hat * (p.chi_u - p.q_u) + 0.5 * h.q_u_hat * p.chi_u - h.m_u_hat * p.m_u + p.ua.logL;
        s.free_energy = A0 + Aw + alpha * Au;
        s.entropy = s.free_energy;
        s.chi_w2 = p.wa.chi2;
        s.chi_u2 = p.ua.chi2;
        const double dd = p.d2phi;
        const double Fxx = p.chi_u * p.chi_u * dd, Fyy = p.chi_w * p.chi_w * dd, Fxy = d1 + p.sd.u * dd;
        s.at_margin = (1.0 - 2.0 * Fxx * s.chi_w2) * (1.0 - (2.0 / alpha) * Fyy * s.chi_u2) -
                      (4.0 / alpha) * Fxy * Fxy * s.chi_w2 * s.chi_u2;
        s.rs_unstable = s.at_margin < 0;
        s.coord = theta[3];
        s.zeta = theta[4];
        return s;
    }
};

struct NewtonResult {
    Vec x;
    double residual = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

// Newton with a central finite-difference Jacobian and backtracking on the max-norm.
inline NewtonResult newton(const std::function<std::optional<Vec>(const Vec&)>& f, Vec x, double tol, int max_iter) {
    NewtonResult res;
    auto g = f(x);
    if (!g) return res;
    const int n = int(x.size());
    double nrm = g->cwiseAbs().maxCoeff();
    res.x = x;
    res.residual = nrm;
    for (int it = 0; it < max_iter; ++it) {
        if (nrm < tol) {
            res.converged = true;
            return res;
        }
        Eigen::MatrixXd J(n, n);
        for (int i = 0; i < n; ++i) {
            const double h = 1e-6 * std::max(1e-2, std::abs(x[i]));
            Vec xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            auto gp = f(xp), gm = f(xm);
            if (gp && gm)
                J.col(i) = (*gp - *gm) / (2 * h);
            else if (gp)
                J.col(i) = (*gp - *g) / h;
            else if (gm)
                J.col(i) = (*g - *gm) / h;
            else
                return res;
        }
        const Vec d = J.fullPivLu().solve(-*g);
        if (!d.allFinite()) return res;
        double lam = 1.0;
        bool ok = false;
        while (lam > 1e-10) {
            const Vec c = x + lam * d;
            auto gn = f(c);
            if (gn && gn->allFinite()) {
                const double nn = gn->cwiseAbs().maxCoeff();
                if (nn < nrm) {
                    x = c, g = gn, nrm = nn, ok = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        res.iterations = it + 1;
        res.x = x;
        res.residual = nrm;
        if (!ok) return res;
    }
    res.converged = nrm < tol;
    return res;
}

}  // namespace detail

class ReplicaSolver {
public:
    ReplicaSolver(ReplicaProblem pb, SolverOptions opt = {})
        : pb_(std::move(pb)), opt_(opt), curve_(pb_.spectrum), model_(curve_, pb_) {
        if (!pb_.q_prior || !pb_.q_channel || !pb_.p_prior || !pb_.p_channel)
            throw ReplicaError("replica: incomplete model specification");
        validate(pb_.spectrum);
    }
    ReplicaSolver(const ReplicaSolver&) = delete;
    ReplicaSolver& operator=(const ReplicaSolver&) = delete;

    const ReplicaProblem& problem() const { return pb_; }
    double T_hat_u() const { return model_.That; }
    double T_w() const { return model_.Tw; }

    // Default start: chi_w = q_w = T_w/2, m_w small for teacher-student.
    ReplicaSolution solve() const {
        const bool teacher = pb_.q_channel->kind() != "random_label";
        const double Tw = model_.Tw;
        detail::Vec v(6);
        v << 0.5 * Tw, 0.5 * Tw, teacher ? 0.1 * Tw : 0.0, 1.0, 0.5, teacher ? 0.1 : 0.0;
        // shrink the u-side start until it lies inside the domain of the saddle branch
        for (int k = 0; k < 60; ++k) {
            try {
                (void)model_.from_natural(v);
                break;
            } catch (const std::exception&) {
                v.tail(3) *= 0.5;
            }
        }
        return run_damped(v, 0, true);
    }

    // Continuation start from a previous solution's solver coordinates. When the seed was
    // solved at another alpha, its order parameters are retried if its coordinates miss.
    ReplicaSolution solve(const ReplicaSolution& seed) const {
        detail::Vec t(6);
        t << seed.params.chi_w, seed.params.q_w, seed.params.m_w, seed.coord, seed.zeta, seed.params.m_u;
        ReplicaSolution r = solve_theta(t);
        if (r.converged || seed.alpha == curve_.alpha()) return r;
        try {
            const OrderParameterSet& o = seed.params;
            detail::Vec v(6);
            v << o.chi_w, o.q_w, o.m_w, o.chi_u, o.q_u, o.m_u;
            ReplicaSolution r2 = solve_theta(model_.theta_of(model_.from_natural(v)));
            if (r2.converged) return r2;
        } catch (const std::exception&) {
        }
        return r;
    }

    ReplicaSolution solve_theta(const detail::Vec& t0) const {
        auto nr = detail::newton(residual_fn(), t0, opt_.tol, opt_.newton_iter);
        if (nr.converged) return finalize(nr, "newton");
        // fall back to the natural iteration from the seed
        try {
            const detail::Point p = model_.from_theta(t0);
            return run_damped(detail::Model::natural(p), nr.iterations, false);
        } catch (const std::exception&) {
            ReplicaSolution s;
            s.alpha = curve_.alpha();
            s.iterations = nr.iterations;
            s.residual = nr.residual;
            s.converged = false;
            s.method = "newton";
            return s;
        }
    }

    // Fixed-point residual (new - current) at solver coordinates; empty outside the domain.
    std::optional<detail::Vec> residual(const detail::Vec& t) const {
        try {
            const detail::Point p = model_.from_theta(t);
            detail::Vec g = detail::Model::proposed(p) - detail::Model::natural(p);
            if (!g.allFinite()) return std::nullopt;
            return g;
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }

    ReplicaSolution evaluate_theta(const detail::Vec& t) const {
        const detail::Point p = model_.from_theta(t);
        ReplicaSolution s = model_.finish(p, t);
        s.residual = (detail::Model::proposed(p) - detail::Model::natural(p)).cwiseAbs().maxCoeff();
        s.converged = s.residual < opt_.tol;
        return s;
    }

private:
    std::function<std::optional<detail::Vec>(const detail::Vec&)> residual_fn() const {
        return [this](const detail::Vec& t) { return residual(t); };
    }

    ReplicaSolution finalize(const detail::NewtonResult& nr, const char* method, int extra = 0) const {
        const detail::Point p = model_.from_theta(nr.x);
        ReplicaSolution s = model_.finish(p, nr.x);
        s.iterations = nr.iterations + extra;
        s.residual = nr.residual;
        s.converged = nr.converged;
        s.method = method;
        return s;
    }

    ReplicaSolution run_damped(detail::Vec v, int prior_iters, bool newton_fallback) const {
        double best = std::numeric_limits<double>::infinity();
        detail::Vec best_v = v;
        int it = 0;
        const double d = opt_.damping;
        int since_best = 0;
        try {
            for (; it < opt_.max_iter; ++it) {
                const detail::Point p = model_.from_natural(v);
                const detail::Vec nv = detail::Model::proposed(p);
                const double r = (nv - v).cwiseAbs().maxCoeff();
                if (!std::isfinite(r)) break;
                if (r < best) {
                    best = r, best_v = v, since_best = 0;
                } else if (++since_best > 200 || r > 1e3 * best) {
                    break;
                }
                if (r < opt_.tol) {
                    const detail::Vec t = model_.theta_of(p);
                    ReplicaSolution s = model_.finish(p, t);
                    s.iterations = prior_iters + it + 1;
                    s.residual = r;
                    s.converged = true;
                    s.method = "damped";
                    return s;
                }
                v = d * nv + (1.0 - d) * v;
            }
        } catch (const std::exception&) {
        }
        if (newton_fallback) {
            try {
                const detail::Point p = model_.from_natural(best_v);
                auto nr = detail::newton(residual_fn(), model_.theta_of(p), opt_.tol, opt_.newton_iter);
                if (nr.converged || nr.residual < best) return finalize(nr, "damped+newton", prior_iters + it);
            } catch (const std::exception&) {
            }
        }
        ReplicaSolution s;
        s.alpha = curve_.alpha();
        try {
            const detail::Point p = model_.from_natural(best_v);
            s = model_.finish(p, model_.theta_of(p));
        } catch (const std::exception&) {
        }
        s.iterations = prior_iters + it;
        s.residual = best;
        s.converged = false;
        s.method = "damped";
        return s;
    }

    ReplicaProblem pb_;
    SolverOptions opt_;
    SaddleCurve curve_;
    detail::Model model_;
};

inline ReplicaProblem with_alpha(const ReplicaProblem& pb, const std::string& kind, double alpha,
                                 const std::map<std::string, double>& params = {}) {
    ReplicaProblem q = pb;
    q.spectrum = make_spectrum(kind, alpha, params);
    return q;
}

namespace detail {

// Continuation over an increasing alpha grid with linear extrapolation of the seed.
// `first` solves points that have no converged predecessor.
inline std::vector<ReplicaSolution> scan_impl(const ReplicaProblem& base, const std::string& kind,
                                              const std::vector<double>& alphas, const SolverOptions& opt,
                                              const std::map<std::string, double>& params,
                                              const std::function<ReplicaSolution(const ReplicaSolver&)>& first) {
    std::vector<ReplicaSolution> out;
    std::optional<Vec> prev, cur;
    double a_prev = 0, a_cur = 0;
    for (double a : alphas) {
        ReplicaSolver solver(with_alpha(base, kind, a, params), opt);
        ReplicaSolution s;
        bool done = false;
        if (cur) {
            Vec guess = *cur;
            if (prev && a_cur != a_prev) {
                const Vec ext = *cur + (*cur - *prev) * ((a - a_cur) / (a_cur - a_prev));
                if (solver.residual(ext)) guess = ext;
            }
            s = solver.solve_theta(guess);
            done = s.converged;
        }
        if (!done) {
            ReplicaSolution fresh = cur ? solver.solve() : first(solver);
            if (fresh.converged || !cur) s = fresh;
        }
        if (s.converged) {
            Vec t(6);
            t << s.params.chi_w, s.params.q_w, s.params.m_w, s.coord, s.zeta, s.params.m_u;
            prev = cur;
            a_prev = a_cur;
            cur = t;
            a_cur = a;
        }
        out.push_back(s);
    }
    return out;
}

// Follows the branch from small alpha, where the default start is reliable, up to pb's alpha.
// Only for the named spectrum families; returns a non-converged solution otherwise.
inline ReplicaSolution solve_by_continuation(const ReplicaProblem& pb, const SolverOptions& opt) {
    const std::string& kind = pb.spectrum.label;
    ReplicaSolution s;
    s.alpha = pb.spectrum.alpha;
    if (kind != "marchenko_pastur" && kind != "random_orthogonal") return s;
    std::map<std::string, double> params;
    if (kind == "marchenko_pastur") params["nodes"] = double(pb.spectrum.nodes.size());
    const double target = pb.spectrum.alpha, a0 = std::min(0.05, 0.5 * target);
    const int n = std::max(2, int(std::ceil((target - a0) / 0.01)));
    std::vector<double> grid;
    for (int k = 0; k < n; ++k) grid.push_back(a0 + (target - a0) * k / n);
    grid.push_back(target);
    const auto rows = scan_impl(pb, kind, grid, opt, params, [](const ReplicaSolver& r) { return r.solve(); });
    s = rows.back();
    if (s.converged) s.method += "+continuation";
    return s;
}

}  // namespace detail

// Fresh solves that miss fall back to continuation in alpha from a small-alpha start.
inline ReplicaSolution solve_rs(const ReplicaProblem& pb, const std::optional<ReplicaSolution>& init = std::nullopt,
                                SolverOptions opt = {}) {
    ReplicaSolver s(pb, opt);
    if (init) return s.solve(*init);
    ReplicaSolution r = s.solve();
    if (r.converged) return r;
    ReplicaSolution c = detail::solve_by_continuation(pb, opt);
    return c.converged ? c : r;
}

// Continuation over an increasing alpha grid with linear extrapolation of the seed.
inline std::vector<ReplicaSolution> scan_alpha(const ReplicaProblem& base, const std::string& kind,
                                               const std::vector<double>& alphas, SolverOptions opt = {},
                                               const std::map<std::string, double>& params = {}) {
    return detail::scan_impl(base, kind, alphas, opt, params,
                             [&](const ReplicaSolver& r) { return solve_rs(r.problem(), std::nullopt, opt); });
}

// KL divergence per output between generative and recognition posteriors.
inline double kl_divergence(const ReplicaSolution& sol_P, const ReplicaSolution& sol_Q) {
    if (std::abs(sol_P.alpha - sol_Q.alpha) > 1e-14) throw ReplicaError("kl_divergence: mismatched alpha");
    return (sol_Q.free_energy - sol_P.free_energy) / sol_P.alpha;
}

// The generative prior as a normalized measure (a counting Ising prior is renormalized).
inline PriorPtr normalized_prior(const PriorPtr& p) {
    if (auto ip = std::dynamic_pointer_cast<const IsingPrior>(p); ip && ip->counting())
        return std::make_shared<IsingPrior>(false);
    return p;
}

inline ReplicaProblem matched(const ReplicaProblem& pb) {
    ReplicaProblem m = pb;
    m.q_prior = normalized_prior(pb.q_prior);
    m.p_prior = m.q_prior;
    m.p_channel = pb.q_channel;
    return m;
}

inline double mutual_information(const ReplicaSolution& matched_sol, const Channel& q_channel, double T_hat_u) {
    return q_channel.neg_output_entropy(T_hat_u) - matched_sol.free_energy / matched_sol.alpha;
}

inline double mutual_information(const SpectrumModel& spec, const PriorPtr& q_prior, const ChannelPtr& q_channel,
                                 SolverOptions opt = {}) {
    ReplicaProblem pb{spec, normalized_prior(q_prior), q_channel, normalized_prior(q_prior), q_channel};
    const ReplicaSolution sol = solve_rs(pb, std::nullopt, opt);
    if (!sol.converged) throw ReplicaError("mutual_information: matched solve did not converge");
    return mutual_information(sol, *q_channel, ReplicaSolver(pb, opt).T_hat_u());
}

// Fills kl and mutual_info from the matched run.
inline void attach_information(ReplicaSolution& sol, const ReplicaProblem& pb, SolverOptions opt = {}) {
    const ReplicaProblem m = matched(pb);
    const ReplicaSolution q = solve_rs(m, std::nullopt, opt);
    if (!q.converged) return;
    sol.kl = kl_divergence(sol, q);
    sol.mutual_info = mutual_information(q, *pb.q_channel, ReplicaSolver(m, opt).T_hat_u());
}

struct GaussianRouteResult {
    double free_energy = 0;
    double chi_w = 0, q_w = 0, m_w = 0;
    int iterations = 0;
    double residual = 0;
    bool converged = false;
};

// Gaussian recognition channel: the u-side integrates out exactly, leaving
//   K = G(x) + c G'(x),  x = -chi_w/s2,  c = -(T_w - 2 m_w + q_w)/s2 + s02 chi_w/s2^2,
// and f = extr { K + A_w } - (alpha/2)(ln(2 pi s2) + s02/s2).
inline GaussianRouteResult gaussian_channel_free_energy(const SpectrumModel& spec, const PriorPtr& p_prior,
                                                        const PriorPtr& q_prior, double sigma2, double sigma02,
                                                        SolverOptions opt = {}) {
    if (!(sigma2 > 0) || !(sigma02 >= 0)) throw ReplicaError("gaussian route: invalid noise variances");
    const FFunction ff(spec);
    const double Tw = q_prior->second_moment();
    const double a = spec.alpha;
    const auto qm = q_prior->measure();
    const double s2 = sigma2, s4 = sigma2 * sigma2;

    struct Eval {
        double K, cw_hat, qw_hat, mw_hat;
        detail::WAverages wa;
    };
    auto eval = [&](const detail::Vec& v) {
        const double cw = v[0], qw = v[1], mw = v[2];
        if (!(cw > 0)) throw ReplicaError("gaussian route: chi_w <= 0");
        const GEvaluation g = ff.evaluate_G(-cw / s2);
        const double c = -(Tw - 2.0 * mw + qw) / s2 + sigma02 * cw / s4;
        Eval e;
        e.K = g.value + c * g.dG;
        e.cw_hat = 2.0 * g.dG / s2;
        e.mw_hat = 2.0 * g.dG / s2;
        const double dK = -g.dG / s2 + (sigma02 / s4) * g.dG - c * g.d2G / s2;
        e.qw_hat = e.cw_hat + 2.0 * dK;
        if (!(e.qw_hat >= 0)) throw ReplicaError("gaussian route: q_w_hat < 0");
        e.wa = detail::w_side(*p_prior, qm, e.cw_hat, e.qw_hat, e.mw_hat);
        return e;
    };
    auto res = [&](const detail::Vec& v) -> std::optional<detail::Vec> {
        try {
            const Eval e = eval(v);
            detail::Vec g(3);
            g << e.wa.chi - v[0], e.wa.q - v[1], e.wa.m - v[2];
            if (!g.allFinite()) return std::nullopt;
            return g;
        } catch (const std::exception&) {
            return std::nullopt;
        }
    };

    detail::Vec v(3);
    v << 0.5 * Tw, 0.5 * Tw, 0.5 * Tw;
    GaussianRouteResult out;
    double r = std::numeric_limits<double>::infinity();
    int it = 0;
    try {
        for (; it < opt.max_iter; ++it) {
            const Eval e = eval(v);
            detail::Vec nv(3);
            nv << e.wa.chi, e.wa.q, e.wa.m;
            r = (nv - v).cwiseAbs().maxCoeff();
            if (!std::isfinite(r) || r < opt.tol) break;
            v = opt.damping * nv + (1.0 - opt.damping) * v;
        }
    } catch (const std::exception&) {
        r = std::numeric_limits<double>::infinity();
    }
    if (!(r < opt.tol)) {
        auto nr = detail::newton(res, v, opt.tol, opt.newton_iter);
        v = nr.x;
        r = nr.residual;
        it += nr.iterations;
    }
    const Eval e = eval(v);
    const double cw = v[0], qw = v[1], mw = v[2];
    const double Aw = 0.5 * e.cw_hat * (cw + qw) - 0.5 * e.qw_hat * cw - e.mw_hat * mw + e.wa.logZ;
    out.free_energy = e.K + Aw - 0.5 * a * (std::log(2.0 * std::numbers::pi * s2) + sigma02 / s2);
    out.chi_w = cw, out.q_w = qw, out.m_w = mw;
    out.iterations = it;
    out.residual = r;
    out.converged = r < opt.tol;
    return out;
}

struct CapacityResult {
    std::optional<double> alpha_c, alpha_at;
    std::vector<ReplicaSolution> scan;
};

// Scan alpha and bisect on the signs of entropy and AT margin to resolution `res`.
inline CapacityResult locate_capacity(const ReplicaProblem& base, const std::string& kind, double a_lo, double a_hi,
                                      double step = 0.01, double res = 1e-3, SolverOptions opt = {},
                                      const std::map<std::string, double>& params = {}) {
    std::vector<double> grid;
    for (int k = 0;; ++k) {
        const double a = a_lo + k * step;
        if (a > a_hi + 1e-12) break;
        grid.push_back(a);
    }
    CapacityResult out;
    out.scan = scan_alpha(base, kind, grid, opt, params);
    auto bisect = [&](std::size_t i, const std::function<double(const ReplicaSolution&)>& g) -> std::optional<double> {
        double lo = grid[i], hi = grid[i + 1];
        ReplicaSolution seed = out.scan[i];
        const double glo = g(seed);
        while (hi - lo > res) {
            const double mid = 0.5 * (lo + hi);
            ReplicaSolver solver(with_alpha(base, kind, mid, params), opt);
            const ReplicaSolution s = solver.solve(seed);
            if (!s.converged) return std::nullopt;
            if ((g(s) > 0) == (glo > 0)) {
                lo = mid;
                seed = s;
            } else {
                hi = mid;
            }
        }
        return 0.5 * (lo + hi);
    };
    auto find = [&](const std::function<double(const ReplicaSolution&)>& g) -> std::optional<double> {
        for (std::size_t i = 0; i + 1 < out.scan.size(); ++i) {
            const auto &s0 = out.scan[i], &s1 = out.scan[i + 1];
            if (!s0.converged || !s1.converged) continue;
            if ((g(s0) > 0) != (g(s1) > 0)) return bisect(i, g);
        }
        return std::nullopt;
    };
    out.alpha_c = find([](const ReplicaSolution& s) { return s.entropy; });
    out.alpha_at = find([](const ReplicaSolution& s) { return s.at_margin; });
    return out;
}

}  // namespace corrpat
