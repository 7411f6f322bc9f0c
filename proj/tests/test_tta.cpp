#include <gtest/gtest.h>

#include <algorithm>

#include "confreg/error.hpp"
#include "confreg/rng.hpp"
#include "confreg/tta.hpp"

using namespace confreg;

namespace {

std::vector<AugmentedPredictionBundle> random_bundles(CounterRng& rng, std::size_t n, std::size_t k) {
    std::vector<AugmentedPredictionBundle> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = 0.85 + 0.12 * rng.normal();
        const double pred = y + 0.1 * rng.normal();
        AugmentedPredictionBundle b{"b" + std::to_string(i), y, {}};
        for (std::size_t j = 0; j < k; ++j) b.aug_preds.push_back(pred + 0.03 * rng.normal());
        out.push_back(b);
    }
    return out;
}

}  // namespace

TEST(AggregatePoint, Mean) {
    EXPECT_EQ(aggregate_point({"a", 0, {0.8}}), 0.8);
    EXPECT_NEAR(aggregate_point({"a", 0, {0.7, 0.9}}), 0.8, 1e-15);
    EXPECT_NEAR(aggregate_point({"a", 0, {0.6, 0.8, 1.0, 0.8}}), 0.8, 1e-15);
    EXPECT_THROW(aggregate_point({"a", 0, {}}), ValidationError);
}

TEST(Traditional, SymmetricJitterCancels) {
    const std::vector<AugmentedPredictionBundle> one = {{"a", 1.0, {0.9, 1.1}}};
    const auto c = calibrate_traditional(one, 0.5);
    EXPECT_NEAR(c.q_radius(), 0.0, 1e-15);
    EXPECT_EQ(c.n_calib(), 1u);
}

TEST(Traditional, ReducesToPlainCalibration) {
    std::vector<AugmentedPredictionBundle> bundles;
    for (int i = 1; i <= 9; ++i) bundles.push_back({"b", 1.0, {1.0 - i / 10.0, 1.0 - i / 10.0}});
    // Each bundle mean is 1 - i/10, so scores are {0.1, ..., 0.9}.
    const auto c = calibrate_traditional(bundles, 0.1);
    EXPECT_NEAR(c.q_radius(), 0.9, 1e-12);
}

TEST(Traditional, KEqualOneMatchesRecords) {
    CounterRng rng(4);
    const auto bundles = random_bundles(rng, 300, 1);
    std::vector<PredictionRecord> records;
    for (const auto& b : bundles) records.push_back({b.id, b.y_true, b.aug_preds[0], {}});
    for (double a : {0.01, 0.05, 0.1}) {
        EXPECT_EQ(calibrate_traditional(bundles, a), fit_calibrator(nonconformity_scores(records), a));
    }
}

TEST(MultiSample, ScoreMultisetIsFlattening) {
    const std::vector<AugmentedPredictionBundle> b = {{"a", 1.0, {0.9, 1.3}}, {"b", 2.0, {1.8, 2.4}}};
    auto s = multi_sample_scores(b);
    std::sort(s.begin(), s.end());
    ASSERT_EQ(s.size(), 4u);
    const std::vector<double> expected = {0.1, 0.2, 0.3, 0.4};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s[i], expected[i], 1e-12);

    const auto c = calibrate_multi_sample(b, 0.5);
    EXPECT_EQ(c.n_calib(), 4u);
    EXPECT_FALSE(c.exchangeable());
}

TEST(MultiSample, FlatteningMatchesDoubleLoop) {
    CounterRng rng(8);
    const auto bundles = random_bundles(rng, 40, 6);
    std::vector<double> brute;
    for (std::size_t j = 0; j < bundles.size(); ++j) {
        for (std::size_t k = 0; k < 6; ++k) brute.push_back(std::abs(bundles[j].y_true - bundles[j].aug_preds[k]));
    }
    auto got = multi_sample_scores(bundles);
    std::sort(got.begin(), got.end());
    std::sort(brute.begin(), brute.end());
    EXPECT_EQ(got, brute);
}

TEST(MultiSample, PerfectAugmentationsGiveZeroRadius) {
    std::vector<AugmentedPredictionBundle> b;
    for (int i = 0; i < 50; ++i) b.push_back({"x", 0.7 + i * 0.001, std::vector<double>(4, 0.7 + i * 0.001)});
    EXPECT_EQ(calibrate_multi_sample(b, 0.05).q_radius(), 0.0);
}

TEST(Strategies, CoincideAtKOne) {
    CounterRng rng(21);
    const auto calib = random_bundles(rng, 250, 1);
    const auto test = random_bundles(rng, 100, 1);
    for (double a : {0.01, 0.05, 0.1}) {
        const auto t = calibrate_traditional(calib, a);
        const auto m = calibrate_multi_sample(calib, a);
        EXPECT_EQ(t, m);
        for (const auto& b : test) {
            EXPECT_EQ(predict_with_strategy(t, {TtaKind::traditional, 1}, b),
                      predict_with_strategy(m, {TtaKind::multi_sample, 1}, b));
        }
    }
}

TEST(Strategies, AugmentationOrderIsIrrelevant) {
    CounterRng rng(5);
    auto bundles = random_bundles(rng, 120, 5);
    const auto t = calibrate_traditional(bundles, 0.1);
    const auto m = calibrate_multi_sample(bundles, 0.1);
    for (auto& b : bundles) std::reverse(b.aug_preds.begin(), b.aug_preds.end());
    // Summation order changes the mean in the last ulp at most.
    EXPECT_NEAR(calibrate_traditional(bundles, 0.1).q_radius(), t.q_radius(), 1e-15);
    EXPECT_EQ(calibrate_multi_sample(bundles, 0.1), m);
}

TEST(Strategies, InconsistentKRejected) {
    const std::vector<AugmentedPredictionBundle> b = {{"a", 1, {1, 1}}, {"b", 1, {1}}};
    EXPECT_THROW(calibrate_traditional(b, 0.1), ValidationError);
    EXPECT_THROW(calibrate_multi_sample(b, 0.1), ValidationError);
    EXPECT_THROW(calibrate_traditional(std::span<const AugmentedPredictionBundle>{}, 0.1), ValidationError);
}

TEST(PredictWithStrategy, KnownRadii) {
    const ConformalCalibrator multi(0.05, 0.2597, 400, ScoreKind::absolute_residual, {}, false);
    const auto iv = predict_with_strategy(multi, {TtaKind::multi_sample, 2}, {"t", 0.0, {0.7, 0.8}});
    EXPECT_NEAR(iv.center, 0.75, 1e-15);
    EXPECT_NEAR(iv.lower, 0.4903, 1e-12);
    EXPECT_NEAR(iv.upper, 1.0097, 1e-12);

    const ConformalCalibrator trad(0.05, 0.2786, 100, ScoreKind::absolute_residual);
    const auto k1 = predict_with_strategy(trad, {TtaKind::traditional, 1}, {"t", 0.0, {0.75}});
    EXPECT_EQ(k1.lower, 0.75 - 0.2786);
    EXPECT_EQ(k1.upper, 0.75 + 0.2786);

    const ConformalCalibrator zero(0.05, 0.0, 100, ScoreKind::absolute_residual);
    const auto p = predict_with_strategy(zero, {TtaKind::multi_sample, 3}, {"t", 0.0, {0.5, 0.5, 0.5}});
    EXPECT_EQ(p.lower, p.upper);

    EXPECT_THROW(predict_with_strategy(trad, {TtaKind::traditional, 2}, {"t", 0.0, {0.75}}), ValidationError);
}

TEST(PredictWithStrategy, NormalizedWidthFollowsSpread) {
    const ConformalCalibrator c(0.1, 2.0, 100, ScoreKind::normalized_residual);
    const auto narrow = predict_with_strategy(c, {TtaKind::traditional, 2}, {"a", 0, {0.9, 1.1}});
    const auto wide = predict_with_strategy(c, {TtaKind::traditional, 2}, {"b", 0, {0.8, 1.2}});
    EXPECT_NEAR(narrow.width(), 2 * 2.0 * 0.1, 1e-12);
    EXPECT_NEAR(wide.width(), 2 * 2.0 * 0.2, 1e-12);
}

TEST(TtaKind, Parsing) {
    EXPECT_EQ(parse_tta_kind("none"), TtaKind::none);
    EXPECT_EQ(parse_tta_kind("traditional"), TtaKind::traditional);
    EXPECT_EQ(parse_tta_kind("multi"), TtaKind::multi_sample);
    EXPECT_THROW(parse_tta_kind("both"), ValidationError);
}
