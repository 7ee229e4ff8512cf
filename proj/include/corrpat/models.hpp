#pragma once
// Single-site priors P(w) and channels P(y|Delta).

#include "quadrature.hpp"
#include "rng.hpp"
#include "special.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrpat {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PriorResult {
    double logZ = 0, mean = 0, var = 0;
};

struct ChannelResult {
    double logL = 0, d1 = 0, d2 = 0;
};

// A weighted output value of the smoothed generative channel, with d(log weight)/d(mu).
struct OutputNode {
    double y, weight, dlog;
};

class Prior {
public:
    virtual ~Prior() = default;
    virtual std::string kind() const = 0;
    // ln Tr_w P(w) exp(-chi_hat w^2/2 + h w), with its first two h-derivatives
    virtual PriorResult log_partition(double chi_hat, double h) const = 0;
    virtual double second_moment() const = 0;
    virtual double sample(Philox& rng) const = 0;
    // nodes of the normalized measure, for averages over w0 ~ Q(w0)
    virtual std::vector<std::pair<double, double>> measure() const = 0;
    virtual bool continuous() const = 0;
};

class IsingPrior final : public Prior {
public:
    explicit IsingPrior(bool counting = true) : counting_(counting) {}
    std::string kind() const override { return "ising_pm1"; }
    PriorResult log_partition(double chi_hat, double h) const override {
        const double a = std::abs(h);
        PriorResult r;
        r.logZ = a + std::log1p(std::exp(-2.0 * a)) - 0.5 * chi_hat;
        if (!counting_) r.logZ -= std::numbers::ln2;
        r.mean = std::tanh(h);
        r.var = 1.0 - r.mean * r.mean;
        return r;
    }
    double second_moment() const override { return 1.0; }
    double sample(Philox& rng) const override { return rng.sign(); }
    std::vector<std::pair<double, double>> measure() const override { return {{-1.0, 0.5}, {1.0, 0.5}}; }
    bool continuous() const override { return false; }
    bool counting() const { return counting_; }

private:
    bool counting_;
};

class GaussianPrior final : public Prior {
public:
    explicit GaussianPrior(double variance = 1.0) : v_(variance) {
        if (!(v_ > 0)) throw ModelError("gaussian prior: variance must be positive");
    }
    std::string kind() const override { return "gaussian_unit"; }
    PriorResult log_partition(double chi_hat, double h) const override {
        const double d = 1.0 + v_ * chi_hat;
        if (!(d > 0)) throw ModelError("gaussian prior: divergent partition (chi_hat <= -1/variance)");
        PriorResult r;
        r.logZ = -0.5 * std::log(d) + 0.5 * v_ * h * h / d;
        r.mean = v_ * h / d;
        r.var = v_ / d;
        return r;
    }
    double second_moment() const override { return v_; }
    double sample(Philox& rng) const override { return std::sqrt(v_) * rng.normal(); }
    std::vector<std::pair<double, double>> measure() const override {
        const Rule& gh = hermite96();
        std::vector<std::pair<double, double>> m(gh.size());
        for (std::size_t k = 0; k < gh.size(); ++k) m[k] = {std::sqrt(v_) * gh.x[k], gh.w[k]};
        return m;
    }
    bool continuous() const override { return true; }
    double variance() const { return v_; }

private:
    double v_;
};

class Channel {
public:
    virtual ~Channel() = default;
    virtual std::string kind() const = 0;
    // ln int Dx P(y | sqrt(chi_hat) x + h), with first two h-derivatives
    virtual ChannelResult log_evidence(double chi_hat, double h, double y) const = 0;
    virtual double sample(double delta, Philox& rng) const = 0;
    // outputs of y ~ int Dx Q(y | sqrt(v) x + mu)
    virtual void output_measure(double v, double mu, std::vector<OutputNode>& out) const = 0;
    // sum_y int Dz Q(y|sqrt(T) z) ln Q(y|sqrt(T) z)
    virtual double neg_output_entropy(double T) const = 0;
    virtual bool discrete() const = 0;
};

class PerceptronChannel final : public Channel {
public:
    std::string kind() const override { return "perceptron_step"; }
    ChannelResult log_evidence(double chi_hat, double h, double y) const override {
        ChannelResult r;
        if (chi_hat <= 0) {
            if (y * h > 0) return r;
            r.logL = -std::numeric_limits<double>::infinity();
            return r;
        }
        const double sc = std::sqrt(chi_hat);
        const double t = y * h / sc;
        const double R = inv_mills(t);
        r.logL = log_ncdf(t);
        r.d1 = y * R / sc;
        r.d2 = -R * (t + R) / chi_hat;
        return r;
    }
    double sample(double delta, Philox&) const override { return delta > 0 ? 1.0 : -1.0; }
    void output_measure(double v, double mu, std::vector<OutputNode>& out) const override {
        out.clear();
        for (double y : {-1.0, 1.0}) {
            if (v <= 0) {
                out.push_back({y, y * mu > 0 ? 1.0 : 0.0, 0.0});
                continue;
            }
            const ChannelResult c = log_evidence(v, mu, y);
            out.push_back({y, std::exp(c.logL), c.d1});
        }
    }
    double neg_output_entropy(double) const override { return 0.0; }
    bool discrete() const override { return true; }
};

class GaussianChannel final : public Channel {
public:
    explicit GaussianChannel(double sigma2) : s2_(sigma2) {
        if (!(s2_ > 0)) throw ModelError("gaussian channel: sigma2 must be positive");
    }
    std::string kind() const override { return "gaussian_noise"; }
    ChannelResult log_evidence(double chi_hat, double h, double y) const override {
        const double v = s2_ + chi_hat;
        if (!(v > 0)) throw ModelError("gaussian channel: non-positive variance");
        ChannelResult r;
        const double d = y - h;
        r.logL = -0.5 * std::log(2.0 * std::numbers::pi * v) - 0.5 * d * d / v;
        r.d1 = d / v;
        r.d2 = -1.0 / v;
        return r;
    }
    double sample(double delta, Philox& rng) const override { return delta + std::sqrt(s2_) * rng.normal(); }
    void output_measure(double v, double mu, std::vector<OutputNode>& out) const override {
        const Rule& gh = hermite96();
        const double sd = std::sqrt(std::max(v, 0.0) + s2_);
        out.resize(gh.size());
        for (std::size_t k = 0; k < gh.size(); ++k) {
            const double y = mu + sd * gh.x[k];
            out[k] = {y, gh.w[k], (y - mu) / (sd * sd)};
        }
    }
    double neg_output_entropy(double) const override {
        return -0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * s2_);
    }
    bool discrete() const override { return false; }
    double sigma2() const { return s2_; }

private:
    double s2_;
};

class RandomLabelChannel final : public Channel {
public:
    std::string kind() const override { return "random_label"; }
    ChannelResult log_evidence(double, double, double) const override { return {-std::numbers::ln2, 0.0, 0.0}; }
    double sample(double, Philox& rng) const override { return rng.sign(); }
    void output_measure(double, double, std::vector<OutputNode>& out) const override {
        out.assign({{-1.0, 0.5, 0.0}, {1.0, 0.5, 0.0}});
    }
    double neg_output_entropy(double) const override { return -std::numbers::ln2; }
    bool discrete() const override { return true; }
};

using PriorPtr = std::shared_ptr<const Prior>;
using ChannelPtr = std::shared_ptr<const Channel>;

struct ModelPair {
    PriorPtr prior;
    ChannelPtr channel;
};

inline PriorPtr make_prior(const std::string& kind, const std::map<std::string, double>& params = {},
                           const std::string& measure = "") {
    auto get = [&](const char* k, double d) {
        auto it = params.find(k);
        return it == params.end() ? d : it->second;
    };
    if (kind == "ising_pm1" || kind == "ising") {
        if (!measure.empty() && measure != "counting" && measure != "normalized")
            throw ModelError("unknown measure convention: " + measure);
        return std::make_shared<IsingPrior>(measure != "normalized");
    }
    if (kind == "gaussian_unit" || kind == "gaussian") return std::make_shared<GaussianPrior>(get("variance", 1.0));
    throw ModelError("unknown prior kind: " + kind);
}

inline ChannelPtr make_channel(const std::string& kind, const std::map<std::string, double>& params = {}) {
    auto get = [&](const char* k, double d) {
        auto it = params.find(k);
        return it == params.end() ? d : it->second;
    };
    if (kind == "perceptron_step") return std::make_shared<PerceptronChannel>();
    if (kind == "gaussian_noise") return std::make_shared<GaussianChannel>(get("sigma2", 1.0));
    if (kind == "random_label") return std::make_shared<RandomLabelChannel>();
    throw ModelError("unknown channel kind: " + kind);
}

inline PriorResult prior_log_partition(const Prior& p, double chi_hat, double h) {
    return p.log_partition(chi_hat, h);
}

inline ChannelResult channel_log_evidence(const Channel& c, double chi_hat_u, double h, double y) {
    if (chi_hat_u < 0) throw ModelError("channel_log_evidence: chi_hat_u must be >= 0");
    return c.log_evidence(chi_hat_u, h, y);
}

inline double generative_second_moment(const Prior& p) { return p.second_moment(); }

}  // namespace corrpat
