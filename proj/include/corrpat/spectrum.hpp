#pragma once
// Eigenvalue spectra rho(lambda) of X^T X as atoms plus pre-quadratured continuous parts.

#include "quadrature.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace corrpat {

struct SpectrumError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SpectrumModel {
    std::string label = "empirical";
    double alpha = 1.0;
    std::vector<std::pair<double, double>> atoms;  // (location, weight)
    std::vector<std::pair<double, double>> nodes;  // continuous part, (location, weight)
    // support of the continuous part (meaningful only when nodes non-empty)
    double cont_lo = 0.0;
    double cont_hi = 0.0;

    double zero_weight() const {
        double w = 0;
        for (auto [l, a] : atoms)
            if (l == 0.0) w += a;
        return w;
    }

    double total_weight() const {
        double w = 0;
        for (auto [l, a] : atoms) w += a;
        for (auto [l, a] : nodes) w += a;
        return w;
    }

    // smallest strictly positive support point (continuous edge if present)
    double min_positive() const {
        double m = std::numeric_limits<double>::infinity();
        for (auto [l, a] : atoms)
            if (l > 0) m = std::min(m, l);
        if (!nodes.empty()) m = std::min(m, cont_lo);
        return m;
    }

    double max_support() const {
        double m = 0;
        for (auto [l, a] : atoms) m = std::max(m, l);
        if (!nodes.empty()) m = std::max(m, cont_hi);
        return m;
    }

    double min_support() const {
        double m = std::numeric_limits<double>::infinity();
        for (auto [l, a] : atoms) m = std::min(m, l);
        if (!nodes.empty()) m = std::min(m, cont_lo);
        return m;
    }

    bool has_continuous() const { return !nodes.empty(); }

    template <class F>
    void for_each(F&& f) const {
        for (auto [l, w] : atoms) f(l, w);
        for (auto [l, w] : nodes) f(l, w);
    }

    template <class F>
    void for_each_positive(F&& f) const {
        for (auto [l, w] : atoms)
            if (l > 0) f(l, w);
        for (auto [l, w] : nodes) f(l, w);
    }

    double mean() const {
        double m = 0;
        for_each([&](double l, double w) { m += w * l; });
        return m;
    }
};

// <f(lambda)>_rho
inline double expect(const SpectrumModel& s, const std::function<double(double)>& f) {
    double acc = 0;
    s.for_each([&](double l, double w) {
        const double v = f(l);
        if (!std::isfinite(v)) throw SpectrumError("expect: non-finite value at lambda=" + std::to_string(l));
        acc += w * v;
    });
    return acc;
}

inline void validate(const SpectrumModel& s) {
    if (!(s.alpha > 0)) throw SpectrumError("alpha must be positive");
    s.for_each([](double l, double w) {
        if (l < 0) throw SpectrumError("negative support point");
        if (!(w > 0)) throw SpectrumError("non-positive weight");
    });
    if (std::abs(s.total_weight() - 1.0) > 1e-12) throw SpectrumError("spectrum not normalized");
}

inline SpectrumModel marchenko_pastur(double alpha, int n_nodes = 400) {
    if (!(alpha > 0)) throw SpectrumError("marchenko_pastur: alpha must be positive");
    if (n_nodes < 200) throw SpectrumError("marchenko_pastur: need at least 200 nodes");
    SpectrumModel s;
    s.label = "marchenko_pastur";
    s.alpha = alpha;
    const double r = std::sqrt(alpha);
    s.cont_lo = (r - 1) * (r - 1);
    s.cont_hi = (r + 1) * (r + 1);
    const double a = 0.5 * (s.cont_lo + s.cont_hi), b = 0.5 * (s.cont_hi - s.cont_lo);
    const double mass = std::min(1.0, alpha);
    if (alpha < 1) s.atoms.push_back({0.0, 1.0 - alpha});
    // lambda = a + b cos(theta): the sqrt edges become analytic in theta
    const Rule gl = gauss_legendre(n_nodes);
    double tot = 0;
    for (std::size_t k = 0; k < gl.size(); ++k) {
        const double th = 0.5 * std::numbers::pi * (gl.x[k] + 1.0);
        const double lam = a + b * std::cos(th);
        const double sn = b * std::sin(th);
        const double w = 0.5 * std::numbers::pi * gl.w[k] * sn * sn / (2.0 * std::numbers::pi * lam);
        s.nodes.push_back({lam, w});
        tot += w;
    }
    for (auto& n : s.nodes) n.second *= mass / tot;
    std::sort(s.nodes.begin(), s.nodes.end());
    return s;
}

inline SpectrumModel random_orthogonal(double alpha) {
    if (!(alpha > 0) || !(alpha <= 1)) throw SpectrumError("random_orthogonal requires 0 < alpha <= 1");
    SpectrumModel s;
    s.label = "random_orthogonal";
    s.alpha = alpha;
    if (alpha < 1) s.atoms.push_back({0.0, 1.0 - alpha});
    s.atoms.push_back({1.0, alpha});
    return s;
}

inline SpectrumModel single_atom(double alpha, double lambda) {
    if (!(alpha > 0)) throw SpectrumError("single_atom: alpha must be positive");
    if (!(lambda >= 0)) throw SpectrumError("single_atom: negative location");
    SpectrumModel s;
    s.label = "single_atom";
    s.alpha = alpha;
    s.atoms = {{lambda, 1.0}};
    return s;
}

inline SpectrumModel make_spectrum(const std::string& kind, double alpha,
                                   const std::map<std::string, double>& params = {}) {
    auto get = [&](const char* k, double d) {
        auto it = params.find(k);
        return it == params.end() ? d : it->second;
    };
    if (kind == "marchenko_pastur") return marchenko_pastur(alpha, int(get("nodes", 400)));
    if (kind == "random_orthogonal") return random_orthogonal(alpha);
    if (kind == "single_atom") return single_atom(alpha, get("lambda", 1.0));
    throw SpectrumError("unknown spectrum kind: " + kind);
}

// Eigenvalues of X^T X (possibly only the nonzero ones) -> atoms with weight multiplicity/N.
inline SpectrumModel empirical_spectrum(std::vector<double> eig, int N, double alpha = -1) {
    if (N <= 0) throw SpectrumError("empirical_spectrum: N must be positive");
    if (eig.size() > std::size_t(N)) throw SpectrumError("empirical_spectrum: more eigenvalues than N");
    SpectrumModel s;
    s.label = "empirical";
    s.alpha = alpha > 0 ? alpha : 1.0;
    std::sort(eig.begin(), eig.end());
    int zeros = N - int(eig.size());
    std::vector<std::pair<double, double>> pos;
    for (double l : eig) {
        if (l < -1e-10) throw SpectrumError("empirical_spectrum: negative eigenvalue");
        if (l <= 1e-10) {
            ++zeros;
            continue;
        }
        if (!pos.empty() && l - pos.back().first <= 1e-12 * std::max(1.0, l)) {
            auto& [loc, cnt] = pos.back();
            loc = (loc * cnt + l) / (cnt + 1);
            cnt += 1;
        } else {
            pos.push_back({l, 1.0});
        }
    }
    if (zeros > 0) s.atoms.push_back({0.0, double(zeros) / N});
    for (auto [l, c] : pos) s.atoms.push_back({l, c / N});
    return s;
}

inline SpectrumModel scaled(const SpectrumModel& s, double c) {
    if (!(c > 0)) throw SpectrumError("scaled: factor must be positive");
    SpectrumModel t = s;
    t.label = "empirical";
    for (auto& a : t.atoms) a.first *= c;
    for (auto& a : t.nodes) a.first *= c;
    t.cont_lo *= c;
    t.cont_hi *= c;
    return t;
}

inline nlohmann::json to_json(const SpectrumModel& s) {
    nlohmann::json j;
    j["label"] = s.label;
    j["alpha"] = s.alpha;
    j["atoms"] = nlohmann::json::array();
    for (auto [l, w] : s.atoms) j["atoms"].push_back({l, w});
    j["nodes"] = nlohmann::json::array();
    for (auto [l, w] : s.nodes) j["nodes"].push_back({l, w});
    if (!s.nodes.empty()) j["support"] = {s.cont_lo, s.cont_hi};
    return j;
}

inline SpectrumModel spectrum_from_json(const nlohmann::json& j) {
    SpectrumModel s;
    s.label = j.value("label", "empirical");
    s.alpha = j.at("alpha").get<double>();
    for (auto& a : j.at("atoms")) s.atoms.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    if (j.contains("nodes"))
        for (auto& a : j.at("nodes")) s.nodes.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    if (!s.nodes.empty()) {
        if (j.contains("support")) {
            s.cont_lo = j["support"].at(0).get<double>();
            s.cont_hi = j["support"].at(1).get<double>();
        } else {
            s.cont_lo = s.nodes.front().first;
            s.cont_hi = s.nodes.front().first;
            for (auto [l, w] : s.nodes) {
                s.cont_lo = std::min(s.cont_lo, l);
                s.cont_hi = std::max(s.cont_hi, l);
            }
        }
    }
    validate(s);
    return s;
}

}  // namespace corrpat
