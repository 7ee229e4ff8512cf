#include <corrpat/models.hpp>

#include <gtest/gtest.h>

#include <numeric>

using namespace corrpat;

namespace {

const double h = 1e-5;

void check_prior(const Prior& p, double chat, double hh) {
    const auto r = p.log_partition(chat, hh);
    const double dz = (p.log_partition(chat, hh + h).logZ - p.log_partition(chat, hh - h).logZ) / (2 * h);
    const double dm = (p.log_partition(chat, hh + h).mean - p.log_partition(chat, hh - h).mean) / (2 * h);
    EXPECT_NEAR(r.mean, dz, 1e-7) << p.kind();
    EXPECT_NEAR(r.var, dm, 1e-7) << p.kind();
}

void check_channel(const Channel& c, double chat, double hh, double y) {
    const auto r = c.log_evidence(chat, hh, y);
    const double d1 = (c.log_evidence(chat, hh + h, y).logL - c.log_evidence(chat, hh - h, y).logL) / (2 * h);
    const double d2 = (c.log_evidence(chat, hh + h, y).d1 - c.log_evidence(chat, hh - h, y).d1) / (2 * h);
    EXPECT_NEAR(r.d1, d1, 1e-6 * std::max(1.0, std::abs(d1))) << c.kind();
    EXPECT_NEAR(r.d2, d2, 1e-6 * std::max(1.0, std::abs(d2))) << c.kind();
}

}  // namespace

TEST(Priors, DerivativesMatchFiniteDifferences) {
    IsingPrior ising;
    GaussianPrior g(1.7);
    for (double hh : {-2.0, -0.3, 0.0, 0.8, 3.0}) {
        check_prior(ising, 0.4, hh);
        check_prior(g, 0.4, hh);
        check_prior(g, -0.2, hh);
    }
}

TEST(Priors, MeasureConventions) {
    IsingPrior counting(true), normalized(false);
    EXPECT_NEAR(counting.log_partition(0, 0).logZ, std::log(2.0), 1e-15);
    EXPECT_NEAR(normalized.log_partition(0, 0).logZ, 0.0, 1e-15);
    GaussianPrior g(2.0);
    EXPECT_NEAR(g.log_partition(0, 0).logZ, 0.0, 1e-15);
    EXPECT_THROW(g.log_partition(-0.6, 0.0), ModelError);
    for (const PriorPtr& p : {PriorPtr(std::make_shared<IsingPrior>()), PriorPtr(std::make_shared<GaussianPrior>(2.0))}) {
        double w = 0, m2 = 0;
        for (auto [x, a] : p->measure()) w += a, m2 += a * x * x;
        EXPECT_NEAR(w, 1.0, 1e-12);
        EXPECT_NEAR(m2, p->second_moment(), 1e-12);
    }
}

TEST(Priors, LargeFieldsStayFinite) {
    IsingPrior p;
    const auto r = p.log_partition(0.0, 800.0);
    EXPECT_NEAR(r.logZ, 800.0, 1e-12);
    EXPECT_EQ(r.mean, 1.0);
}

TEST(Channels, DerivativesMatchFiniteDifferences) {
    PerceptronChannel step;
    GaussianChannel g(0.5);
    for (double y : {-1.0, 1.0})
        for (double hh : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
            check_channel(step, 0.6, hh, y);
            check_channel(g, 0.6, hh, y);
        }
}

TEST(Channels, PerceptronDeepInTheForbiddenRegion) {
    PerceptronChannel step;
    const auto r = step.log_evidence(1.0, -30.0, 1.0);
    EXPECT_TRUE(std::isfinite(r.logL));
    EXPECT_NEAR(r.d1, 30.0, 0.1);  // inverse Mills ratio ~ |t|
    EXPECT_LT(r.d2, 0);
    EXPECT_EQ(step.log_evidence(0.0, 1.0, 1.0).logL, 0.0);
    EXPECT_TRUE(std::isinf(step.log_evidence(0.0, -1.0, 1.0).logL));
}

TEST(Channels, OutputMeasuresAreNormalized) {
    std::vector<OutputNode> out;
    for (const ChannelPtr& c : {ChannelPtr(std::make_shared<PerceptronChannel>()),
                                ChannelPtr(std::make_shared<GaussianChannel>(0.3)),
                                ChannelPtr(std::make_shared<RandomLabelChannel>())}) {
        c->output_measure(0.8, 0.4, out);
        double w = 0;
        for (const auto& o : out) w += o.weight;
        EXPECT_NEAR(w, 1.0, 1e-12) << c->kind();
    }
}

TEST(Channels, Sampling) {
    Philox rng(3, 0);
    PerceptronChannel step;
    EXPECT_EQ(step.sample(0.2, rng), 1.0);
    EXPECT_EQ(step.sample(-0.2, rng), -1.0);
    GaussianChannel g(0.25);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int k = 0; k < n; ++k) {
        const double y = g.sample(1.0, rng);
        s += y, s2 += y * y;
    }
    EXPECT_NEAR(s / n, 1.0, 0.01);
    EXPECT_NEAR(s2 / n - 1.0, 0.25, 0.01);
}

TEST(Factories, KnownAndUnknownKinds) {
    EXPECT_EQ(make_prior("ising_pm1")->kind(), "ising_pm1");
    EXPECT_EQ(make_prior("gaussian_unit", {{"variance", 2.0}})->second_moment(), 2.0);
    EXPECT_THROW(make_prior("laplace"), ModelError);
    EXPECT_THROW(make_prior("ising_pm1", {}, "lebesgue"), ModelError);
    EXPECT_EQ(make_channel("gaussian_noise", {{"sigma2", 0.3}})->kind(), "gaussian_noise");
    EXPECT_THROW(make_channel("logistic"), ModelError);
    EXPECT_THROW(make_channel("gaussian_noise", {{"sigma2", -1.0}}), ModelError);
    EXPECT_THROW(channel_log_evidence(PerceptronChannel{}, -0.1, 0.0, 1.0), ModelError);
}
