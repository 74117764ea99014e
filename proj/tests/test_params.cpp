#include "daebayes/params.hpp"
#include "daebayes/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace daebayes;

namespace {

struct P9 {
    NetworkCase c = builtin_case_ieee9();
    ParamLayout layout{c};
    PriorSpec prior = default_priors(c);
};

}  // namespace

TEST(Latent, ZeroMapsToNominal) {
    P9 p;
    const Vector th = to_physical(Vector::Zero(p.prior.size()), p.prior).flat();
    const Vector nom = nominal_params(p.c).flat();
    for (Index i = 0; i < th.size(); ++i) EXPECT_DOUBLE_EQ(th[i], nom[i]) << i;
}

TEST(Latent, UnitStepClosedForm) {
    P9 p;
    Vector eta = Vector::Zero(p.prior.size());
    const Index m1 = p.layout.indices(ParamClass::M)[0];
    eta[m1] = 1.0;
    const double expected = nominal_params(p.c).M[0] * std::pow(1.3, 1.0 / kZ975);
    EXPECT_NEAR(to_physical(eta, p.prior).M[0], expected, 1e-14);
}

TEST(Latent, RoundTrip) {
    P9 p;
    Philox4x32 rng(7, streams::kTest);
    std::normal_distribution<double> n;
    for (int k = 0; k < 20; ++k) {
        Vector eta(p.prior.size());
        for (Index i = 0; i < eta.size(); ++i) eta[i] = n(rng);
        EXPECT_LT((to_latent(to_physical(eta, p.prior), p.prior) - eta).cwiseAbs().maxCoeff(), 1e-12);
        const ParamVector th = to_physical(eta, p.prior);
        const Vector back = to_physical(to_latent(th, p.prior), p.prior).flat();
        EXPECT_LT(((back - th.flat()).array() / th.flat().array()).abs().maxCoeff(), 1e-12);
    }
    EXPECT_LT(to_latent(nominal_params(p.c), p.prior).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Latent, RejectsNonpositiveAndBadSizes) {
    P9 p;
    ParamVector th = nominal_params(p.c);
    th.r[0] = 0.0;
    EXPECT_THROW(to_latent(th, p.prior), InvalidInput);
    EXPECT_THROW(to_physical(Vector::Zero(3), p.prior), InvalidInput);
}

TEST(Prior, LogDensityAndTruncation) {
    P9 p;
    Vector eta = Vector::Zero(p.prior.size());
    EXPECT_EQ(log_prior(eta, p.prior), 0.0);
    eta[0] = 1.0;
    eta[5] = -1.0;
    eta[10] = 1.0;
    eta[20] = 1.0;
    EXPECT_DOUBLE_EQ(log_prior(eta, p.prior), -2.0);
    eta[3] = p.prior.eta_max[3] + 1e-9;
    EXPECT_EQ(log_prior(eta, p.prior), -kInf);
    eta[3] = p.prior.eta_min[3] - 1e-9;
    EXPECT_EQ(log_prior(eta, p.prior), -kInf);
}

TEST(Prior, DefaultWidthsAndBoxes) {
    P9 p;
    const double sM = std::log(1.3) / 1.959963984540054;
    EXPECT_NEAR(sM, 0.13386, 1e-5);
    for (Index i : p.layout.indices(ParamClass::M)) {
        EXPECT_NEAR(p.prior.sigma_lambda[i], sM, 1e-15);
        Vector eta = Vector::Zero(p.prior.size());
        eta[i] = p.prior.eta_max[i];
        const double hi = to_physical(eta, p.prior).flat()[i] / nominal_params(p.c).flat()[i];
        eta[i] = p.prior.eta_min[i];
        const double lo = to_physical(eta, p.prior).flat()[i] / nominal_params(p.c).flat()[i];
        EXPECT_NEAR(hi, 1.5, 1e-12);
        EXPECT_NEAR(lo, 1.0 / 1.5, 1e-12);
    }
    const double widths[4] = {0.30, 0.60, 0.25, 0.25};
    for (ParamClass c : kParamClasses)
        for (Index i : p.layout.indices(c))
            EXPECT_NEAR(p.prior.sigma_lambda[i], std::log1p(widths[static_cast<int>(c)]) / kZ975, 1e-15);
}

TEST(Prior, MonteCarloUpperQuantileOfInertia) {
    P9 p;
    const double s = p.prior.sigma_lambda[p.layout.indices(ParamClass::M)[0]];
    EXPECT_NEAR(std::exp(s * kZ975), 1.30, 1e-12);
    Philox4x32 rng(11, streams::kTest);
    std::normal_distribution<double> n;
    const int N = 1000000;
    std::vector<double> ratio(N);
    for (int k = 0; k < N; ++k) ratio[static_cast<std::size_t>(k)] = std::exp(s * n(rng));
    std::nth_element(ratio.begin(), ratio.begin() + static_cast<long>(0.975 * N), ratio.end());
    // Quantile SE at 1e6 draws is ~6e-4 here, so the tolerance is 3e-3.
    EXPECT_NEAR(ratio[static_cast<std::size_t>(0.975 * N)], 1.30, 3e-3);
}

TEST(Prior, RejectsNonpositiveWidth) {
    P9 p;
    PriorWidths w;
    w.width[1] = 0.0;
    EXPECT_THROW(default_priors(p.c, w), InvalidInput);
    w = PriorWidths{};
    w.box[2] = -0.1;
    EXPECT_THROW(default_priors(p.c, w), InvalidInput);
}

TEST(Layout, NamesAndClasses) {
    P9 p;
    ASSERT_EQ(p.layout.size(), 21);
    EXPECT_EQ(p.layout.names[0], "M1");
    EXPECT_EQ(p.layout.names[3], "D1");
    EXPECT_EQ(p.layout.class_of(6), ParamClass::r);
    EXPECT_EQ(p.layout.indices(ParamClass::x).size(), 9u);
    const auto r = p.layout.indices(ParamClass::r);
    EXPECT_EQ(r.size(), 6u);  // transformer branches carry no resistance
}
