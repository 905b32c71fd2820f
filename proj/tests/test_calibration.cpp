#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fibag/calibration.hpp"

using namespace fibag;
using namespace fibag::calib;

namespace {

// prior mean written out from the formula, independent of calibrate()
double prior_mean_direct(double s) {
    const double ss = std::max(s, 1e-6);
    const double g = 0.5 * (1.0 / (1.0 + std::pow(ss / 3.0, -2.75)) + 1.0);
    const double f = 16.0 * g * g * g * g;
    return f / (f + 1.0 / f);
}

} // namespace

TEST(Calibrate, PublishedPriorMeans) {
    EXPECT_NEAR(calibrate(0.25).prior_mean, 0.502, 1e-3);
    EXPECT_NEAR(calibrate(0.75).prior_mean, 0.543, 1e-3);
    EXPECT_NEAR(calibrate(1.5).prior_mean, 0.726, 1e-3);
    EXPECT_NEAR(calibrate(3.0).prior_mean, 0.962, 1e-3);
}

TEST(Calibrate, NonPositiveEvidenceIsUniform) {
    for (double s : {0.0, -0.1, -3.0, -1e6}) {
        const auto p = calibrate(s);
        EXPECT_NEAR(p.beta_a, 1.0, 1e-12) << s;
        EXPECT_NEAR(p.beta_b, 1.0, 1e-12) << s;
        EXPECT_NEAR(p.prior_mean, 0.5, 1e-12) << s;
    }
}

TEST(Calibrate, MatchesFormulaAndProperties) {
    double prev = 0.0;
    for (double s = -5.0; s <= 10.0; s += 1e-3) {
        const auto p = calibrate(s);
        EXPECT_NEAR(p.prior_mean, prior_mean_direct(s), 1e-12);
        EXPECT_NEAR(p.beta_a * p.beta_b, 1.0, 1e-12);
        EXPECT_GE(p.prior_mean, prev);
        prev = p.prior_mean;
    }
    // F is bounded by 16, so the prior mean saturates at 256/257
    EXPECT_GT(calibrate(10.0).prior_mean, 0.995);
    EXPECT_LE(calibrate(1e6).prior_mean, 256.0 / 257.0);
    EXPECT_NEAR(calibrate(1e6).prior_mean, 256.0 / 257.0, 1e-12);
    EXPECT_THROW(calibrate(std::nan("")), Error);
    EXPECT_THROW(calibrate(INFINITY), Error);
}

TEST(Calibrate, ConstantsAreConfigurable) {
    CalibrationConfig cfg;
    cfg.midpoint = 1.0;
    EXPECT_GT(calibrate(1.0, cfg).prior_mean, calibrate(1.0).prior_mean);
}

TEST(Aggregate, Examples) {
    const std::vector<double> ev{0.2, 1.5, 3.0};
    EXPECT_EQ(aggregate(ev, {AggregationKind::Maximal, {}}), 3.0);
    EXPECT_NEAR(aggregate(ev, {AggregationKind::Average, {}}), 4.7 / 3.0, 1e-15);
    EXPECT_NEAR(aggregate(ev, {AggregationKind::PrecisionWeighted, {2.0, 2.0, 2.0}}),
                aggregate(ev, {AggregationKind::Average, {}}), 1e-12);
    EXPECT_NEAR(aggregate(ev, {AggregationKind::PrecisionWeighted, {3.0, 1.0, 1.0}}), 1.02, 1e-12);
}

TEST(Aggregate, OrderingAcrossSchemes) {
    Rng rng(8);
    for (int r = 0; r < 200; ++r) {
        std::vector<double> ev(1 + r % 6);
        for (double& e : ev) e = 3.0 * draw_normal(rng);
        const double mx = aggregate(ev, {AggregationKind::Maximal, {}});
        const double av = aggregate(ev, {AggregationKind::Average, {}});
        EXPECT_GE(mx, av);
        EXPECT_GE(av, *std::min_element(ev.begin(), ev.end()) - 1e-12);
    }
}

TEST(Aggregate, Errors) {
    auto kind = [](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::Usage;
    };
    EXPECT_EQ(kind([] { aggregate({}, {AggregationKind::Maximal, {}}); }), ErrorKind::EmptyEvidence);
    EXPECT_EQ(kind([] { aggregate({1.0, 2.0}, {AggregationKind::PrecisionWeighted, {1.0}}); }),
              ErrorKind::WeightMismatch);
    EXPECT_EQ(kind([] { parse_aggregation("median"); }), ErrorKind::InvalidConfig);
}

TEST(CalibrateAll, GroupsByCovariate) {
    using gp::Axis;
    std::vector<gp::MechanisticResult> res{
        {"YAP1", Axis::DriverGene, 2.5},
        {"CAV1", Axis::CascadingProtein, 2.2},
        {"CAV1", Axis::DriverProtein, 0.4},
    };
    const std::vector<std::string> order{"YAP1", "MYC", "CAV1"};
    const auto priors = calibrate_all(res, AggregationKind::Maximal, order);
    ASSERT_EQ(priors.size(), 3u);
    EXPECT_EQ(priors[0].covariate_id, "YAP1");
    EXPECT_DOUBLE_EQ(priors[0].prior_mean, calibrate(2.5).prior_mean);
    EXPECT_NEAR(priors[1].beta_a, 1.0, 1e-12);
    EXPECT_NEAR(priors[1].prior_mean, 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(priors[2].prior_mean, calibrate(2.2).prior_mean);

    const auto avg = calibrate_all(res, AggregationKind::Average, order);
    EXPECT_NEAR(avg[2].s, 1.3, 1e-15);

    res.push_back({"NOPE", Axis::DriverGene, 1.0});
    EXPECT_THROW(calibrate_all(res, AggregationKind::Maximal, order), Error);
}
