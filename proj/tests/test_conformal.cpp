#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

#include "confreg/conformal.hpp"
#include "confreg/error.hpp"
#include "confreg/rng.hpp"
#include "oracles.hpp"

using namespace confreg;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST(Scores, AbsoluteResiduals) {
    const std::vector<PredictionRecord> perfect = {{"a", 1.0, 1.0, {}}};
    EXPECT_EQ(nonconformity_scores(perfect), std::vector<double>{0.0});
    const std::vector<PredictionRecord> off = {{"a", 0.8, 1.1, {}}};
    EXPECT_NEAR(nonconformity_scores(off)[0], 0.3, 1e-15);

    const std::vector<PredictionRecord> three = {{"a", 1, 0.9, {}}, {"b", 2, 2.5, {}}, {"c", 3, 3, {}}};
    const auto s = nonconformity_scores(three);
    ASSERT_EQ(s.size(), 3u);
    EXPECT_NEAR(s[0], 0.1, 1e-15);
    EXPECT_DOUBLE_EQ(s[1], 0.5);
    EXPECT_DOUBLE_EQ(s[2], 0.0);
    EXPECT_THROW(nonconformity_scores(std::span<const PredictionRecord>{}), ValidationError);
}

TEST(Scores, NormalizedUsesPopulationSpreadWithFloor) {
    const std::vector<AugmentedPredictionBundle> b = {{"a", 1.0, {0.8, 1.0}}, {"b", 1.0, {0.7}}};
    const auto s = normalized_scores(b);
    // mean 0.9, spread 0.1 -> 0.1 / 0.1
    EXPECT_NEAR(s[0], 1.0, 1e-12);
    // single prediction: spread floors at 1e-6
    EXPECT_NEAR(s[1], 0.3 / kSpreadFloor, 1e-3);
}

TEST(Rank, MatchesIntegerArithmetic) {
    for (std::size_t n = 1; n <= 400; ++n) {
        for (int p : {1, 5, 10, 50, 100, 250, 500, 900, 999}) {
            ASSERT_EQ(conformal_rank(n, p / 1000.0), oracle::exact_rank(n, p)) << n << " " << p;
        }
    }
}

TEST(FitCalibrator, NineScoresAlphaTenPercent) {
    std::vector<double> scores;
    for (int i = 1; i <= 9; ++i) scores.push_back(i / 10.0);
    const auto c = fit_calibrator(scores, 0.1);
    EXPECT_EQ(conformal_rank(9, 0.1), 9u);
    EXPECT_DOUBLE_EQ(c.q_radius(), 0.9);
    EXPECT_EQ(c.n_calib(), 9u);
}

TEST(FitCalibrator, TooFewScoresGivesInfiniteRadius) {
    const std::vector<double> scores = {0.1, 0.2, 0.3, 0.4, 0.5};
    EXPECT_EQ(fit_calibrator(scores, 0.1).q_radius(), kInf);
}

TEST(FitCalibrator, ConstantScores) {
    const std::vector<double> scores(50, 0.37);
    for (double a : {0.01, 0.05, 0.1, 0.5, 0.9}) {
        const auto q = fit_calibrator(scores, a).q_radius();
        // n = 50 and alpha = 0.01 needs rank 51 > 50.
        if (conformal_rank(50, a) <= 50) EXPECT_EQ(q, 0.37);
    }
}

TEST(FitCalibrator, Errors) {
    const std::vector<double> ok = {0.1, 0.2};
    EXPECT_THROW(fit_calibrator(std::span<const double>{}, 0.1), ValidationError);
    EXPECT_THROW(fit_calibrator(ok, 0.0), ValidationError);
    EXPECT_THROW(fit_calibrator(ok, 1.0), ValidationError);
    const std::vector<double> nan = {0.1, std::nan("")};
    EXPECT_THROW(fit_calibrator(nan, 0.1), ValidationError);
}

TEST(FitCalibrator, MatchesCountingOracle) {
    CounterRng rng(2718);
    for (int trial = 0; trial < 3000; ++trial) {
        const std::size_t n = 1 + rng.below(1000);
        std::vector<double> scores(n);
        const bool ties = trial % 3 == 0;
        for (double& s : scores) s = ties ? static_cast<double>(rng.below(7)) / 4.0 : rng.uniform();
        for (int p : {10, 50, 100, 500}) {
            const auto c = fit_calibrator(scores, p / 1000.0);
            const double expected = oracle::kth_smallest_by_counting(scores, oracle::exact_rank(n, p));
            ASSERT_EQ(c.q_radius(), expected) << "n=" << n << " alpha=" << p / 1000.0;
        }
    }
}

TEST(FitCalibrator, RadiusNonIncreasingInAlpha) {
    CounterRng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> scores(5 + rng.below(300));
        for (double& s : scores) s = std::abs(rng.normal());
        double previous = kInf;
        for (double a : {0.01, 0.02, 0.05, 0.1, 0.2, 0.5}) {
            const double q = fit_calibrator(scores, a).q_radius();
            EXPECT_LE(q, previous);
            previous = q;
        }
    }
}

TEST(FitCalibrator, TranslationEquivariance) {
    CounterRng rng(13);
    std::vector<PredictionRecord> records, shifted;
    for (int i = 0; i < 200; ++i) {
        const double y = 0.8 + 0.1 * rng.normal();
        const double p = y + 0.05 * rng.normal();
        records.push_back({"r", y, p, {}});
        // Shift by a power of two so the residuals stay bit-identical.
        shifted.push_back({"r", y + 4.0, p + 4.0, {}});
    }
    const auto a = fit_calibrator(nonconformity_scores(records), 0.1);
    const auto b = fit_calibrator(nonconformity_scores(shifted), 0.1);
    EXPECT_NEAR(a.q_radius(), b.q_radius(), 1e-12);
}

TEST(Interval, KnownRadiusArithmetic) {
    const ConformalCalibrator c(0.05, 0.2792, 100, ScoreKind::absolute_residual);
    const auto iv = predict_interval(c, 0.75);
    EXPECT_EQ(iv.lower, 0.4708);
    EXPECT_EQ(iv.upper, 1.0292);
    EXPECT_EQ(iv.center, 0.75);
    EXPECT_EQ(iv.alpha, 0.05);
}

TEST(Interval, DegenerateAndVacuous) {
    const auto point = predict_interval(ConformalCalibrator(0.1, 0.0, 10, ScoreKind::absolute_residual), 0.9);
    EXPECT_EQ(point.lower, 0.9);
    EXPECT_EQ(point.upper, 0.9);
    const auto all = predict_interval(ConformalCalibrator(0.1, kInf, 5, ScoreKind::absolute_residual), 0.9);
    EXPECT_EQ(all.lower, -kInf);
    EXPECT_EQ(all.upper, kInf);
    EXPECT_THROW(predict_interval(ConformalCalibrator(0.1, 0.1, 5, ScoreKind::absolute_residual), kInf),
                 ValidationError);
}

TEST(Interval, ConstantWidthForAbsoluteScores) {
    const ConformalCalibrator c(0.1, 0.123, 50, ScoreKind::absolute_residual);
    CounterRng rng(1);
    const double w0 = predict_interval(c, 0.5).width();
    for (int i = 0; i < 100; ++i) {
        EXPECT_NEAR(predict_interval(c, 0.5 + 0.49 * rng.uniform()).width(), w0, 1e-15);
    }
}

TEST(Coverage, CountsClosedIntervals) {
    const std::vector<PredictionInterval> ivs = {{1, 0.5, 1.5, 0.1}, {2, 2, 3, 0.1}, {3, 3.5, 4, 0.1}};
    const std::vector<double> truths = {1, 2, 3};
    EXPECT_DOUBLE_EQ(empirical_coverage(ivs, truths), 2.0 / 3.0);
    const std::vector<PredictionInterval> all(3, PredictionInterval{0, -kInf, kInf, 0.1});
    EXPECT_EQ(empirical_coverage(all, truths), 1.0);
    EXPECT_THROW(empirical_coverage(ivs, std::vector<double>{1, 2}), ValidationError);
    EXPECT_THROW(empirical_coverage({}, {}), ValidationError);
}

TEST(Width, Average) {
    const ConformalCalibrator c(0.05, 0.2792, 100, ScoreKind::absolute_residual);
    std::vector<PredictionInterval> ivs;
    for (double p : {0.6, 0.75, 0.9}) ivs.push_back(predict_interval(c, p));
    EXPECT_NEAR(average_interval_width(ivs), 0.5584, 1e-12);
    EXPECT_EQ(average_interval_width(std::vector<PredictionInterval>{{1, 1, 1, 0.1}}), 0.0);
    const std::vector<PredictionInterval> mixed = {{0, -0.1, 0.1, 0.1}, {0, -0.3, 0.3, 0.1}};
    EXPECT_NEAR(average_interval_width(mixed), 0.4, 1e-15);
    const std::vector<PredictionInterval> unbounded = {{0, -0.1, 0.1, 0.1}, {0, -kInf, kInf, 0.1}};
    EXPECT_EQ(average_interval_width(unbounded), kInf);
}

TEST(CalibratorJson, RoundTripIsBitExact) {
    CounterRng rng(77);
    for (int i = 0; i < 500; ++i) {
        const double q = rng.uniform() * std::pow(10.0, static_cast<double>(rng.below(8)) - 4.0);
        const ConformalCalibrator c(0.05, q, 1 + rng.below(1000), ScoreKind::normalized_residual,
                                    "abc123", i % 2 == 0);
        const auto back = calibrator_from_json(nlohmann::json::parse(to_json(c).dump()));
        EXPECT_EQ(back, c);
    }
    const ConformalCalibrator inf(0.01, kInf, 5, ScoreKind::absolute_residual);
    const auto j = to_json(inf);
    EXPECT_EQ(j.at("q_radius"), "inf");
    EXPECT_EQ(calibrator_from_json(j), inf);
    EXPECT_THROW(calibrator_from_json(nlohmann::json{{"alpha", 0.1}}), ValidationError);
}
