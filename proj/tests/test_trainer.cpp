#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "confreg/error.hpp"
#include "confreg/rng.hpp"
#include "confreg/trainer.hpp"
#include "oracles.hpp"
#include "trainer_fixtures.hpp"

using namespace confreg;
using namespace confreg::trainer;

TEST(Huber, Values) {
    EXPECT_EQ(huber_loss(0.0, 0.5), 0.0);
    EXPECT_NEAR(huber_loss(0.3, 0.5), 0.045, 1e-15);
    EXPECT_NEAR(huber_loss(1.0, 0.5), 0.375, 1e-15);
    EXPECT_EQ(huber_loss(0.5, 0.5), 0.125);
    EXPECT_EQ(huber_loss(-0.5, 0.5), 0.125);
    // Linear branch evaluated at the kink gives the same value.
    EXPECT_EQ(0.5 * (0.5 - 0.25), 0.125);
    EXPECT_THROW(huber_loss(std::nan(""), 0.5), ValidationError);
    EXPECT_THROW(huber_loss(0.1, 0.0), ValidationError);
}

TEST(Huber, Gradient) {
    EXPECT_EQ(huber_grad(0.3, 0.5), 0.3);
    EXPECT_EQ(huber_grad(2.0, 0.5), 0.5);
    EXPECT_EQ(huber_grad(-2.0, 0.5), -0.5);
    EXPECT_THROW(huber_grad(std::numeric_limits<double>::infinity(), 0.5), ValidationError);
}

TEST(Huber, GradientMatchesFiniteDifferences) {
    CounterRng rng(31);
    int checked = 0;
    while (checked < 1000) {
        const double delta = 0.05 + 2.0 * rng.uniform();
        const double e = 6.0 * (rng.uniform() - 0.5);
        if (std::abs(std::abs(e) - delta) < 1e-4) continue;
        const double fd = oracle::central_difference([&](double r) { return huber_loss(r, delta); }, e, 1e-5);
        ASSERT_NEAR(huber_grad(e, delta), fd, 1e-6) << "e=" << e << " delta=" << delta;
        EXPECT_LE(std::abs(huber_grad(e, delta)), delta);
        ++checked;
    }
}

TEST(Schedule, EndpointsAndMidpoint) {
    EXPECT_EQ(cosine_warm_restart_lr(0, 10, 5e-4, 1e-6), 5e-4);
    EXPECT_EQ(cosine_warm_restart_lr(10, 10, 5e-4, 1e-6), 1e-6);
    EXPECT_NEAR(cosine_warm_restart_lr(5, 10, 5e-4, 1e-6), 2.505e-4, 1e-12);
    EXPECT_THROW(cosine_warm_restart_lr(0, 0, 5e-4, 1e-6), ValidationError);
    EXPECT_THROW(cosine_warm_restart_lr(11, 10, 5e-4, 1e-6), ValidationError);
}

TEST(Schedule, CycleLengthsAndRestarts) {
    const WarmRestartSchedule s(10, 2, 5e-4, 1e-6);
    EXPECT_EQ(s.cycle_lengths(4), (std::vector<std::size_t>{10, 20, 40, 80}));
    for (std::size_t boundary : {0u, 10u, 30u, 70u, 150u}) {
        EXPECT_EQ(s.lr(boundary), 5e-4) << boundary;
        EXPECT_EQ(s.position(boundary).t_cur, 0u);
    }
    EXPECT_EQ(s.position(29).t_cur, 19u);
    EXPECT_EQ(s.position(29).t_i, 20u);
    EXPECT_EQ(s.position(30).cycle, 2u);
}

TEST(Schedule, StaysInRangeAndDecreasesWithinCycle) {
    const WarmRestartSchedule s(10, 2, 5e-4, 1e-6);
    for (std::size_t e = 0; e < 310; ++e) {
        const double lr = s.lr(e);
        EXPECT_GE(lr, 1e-6);
        EXPECT_LE(lr, 5e-4);
        if (s.position(e + 1).t_cur != 0) EXPECT_LT(s.lr(e + 1), lr);
    }
    // Continuity inside a cycle: adjacent fractional positions differ little.
    for (int i = 0; i < 2000; ++i) {
        const double t = i * 0.01;
        EXPECT_LT(std::abs(cosine_warm_restart_lr((i + 1) * 0.01, 20, 5e-4, 1e-6) -
                           cosine_warm_restart_lr(t, 20, 5e-4, 1e-6)),
                  1e-6);
    }
}

TEST(Clip, Examples) {
    const std::vector<double> small = {0.3, 0.4};
    EXPECT_EQ(clip_gradient(small, 1.0), small);
    EXPECT_EQ(clip_gradient(std::vector<double>{2, 0}, 1.0), (std::vector<double>{1, 0}));
    const auto c = clip_gradient(std::vector<double>{3, 4}, 1.0);
    EXPECT_NEAR(c[0], 0.6, 1e-15);
    EXPECT_NEAR(c[1], 0.8, 1e-15);
    EXPECT_THROW(clip_gradient(std::vector<double>{std::nan("")}, 1.0), NumericalError);
    EXPECT_THROW(clip_gradient(small, 0.0), ValidationError);
}

TEST(Clip, NormAndIdempotence) {
    CounterRng rng(3);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> g(1 + rng.below(20));
        const double scale = std::pow(10.0, 3.0 * rng.uniform() - 1.5);
        for (double& v : g) v = scale * rng.normal();
        double before = 0.0;
        for (double v : g) before += v * v;
        before = std::sqrt(before);
        const auto once = clip_gradient(g, 1.0);
        double after = 0.0;
        for (double v : once) after += v * v;
        after = std::sqrt(after);
        EXPECT_NEAR(after, std::min(before, 1.0), 1e-12 * std::max(1.0, before));
        const auto twice = clip_gradient(once, 1.0);
        for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(twice[j], once[j], 1e-15);
    }
}

TEST(Optimizer, ZeroGradientNoDecayIsIdentity) {
    TrainConfig c;
    c.weight_decay = 0.0;
    std::vector<double> p = {0.3, -1.2};
    OptimizerState s(2);
    optimizer_step(p, std::vector<double>{0, 0}, s, 0.1, c);
    EXPECT_EQ(p, (std::vector<double>{0.3, -1.2}));
}

TEST(Optimizer, DecoupledDecayClosedForm) {
    TrainConfig c;
    c.weight_decay = 0.01;
    std::vector<double> p = {0.3, -1.2};
    OptimizerState s(2);
    optimizer_step(p, std::vector<double>{0, 0}, s, 0.1, c);
    EXPECT_DOUBLE_EQ(p[0], 0.3 * (1 - 0.001));
    EXPECT_DOUBLE_EQ(p[1], -1.2 * (1 - 0.001));
}

TEST(Optimizer, MatchesScalarRecurrence) {
    for (double g : {0.7, -0.02, 3.0}) {
        TrainConfig c;
        std::vector<double> p = {0.4};
        OptimizerState s(1);
        for (int t = 0; t < 50; ++t) optimizer_step(p, std::vector<double>{g}, s, 1e-3, c);
        EXPECT_NEAR(p[0], oracle::scalar_adamw(0.4, g, 50, 1e-3, 0.01), 1e-15);
    }
}

TEST(Optimizer, ShapeMismatch) {
    TrainConfig c;
    std::vector<double> p = {0.1, 0.2};
    OptimizerState s(2);
    EXPECT_THROW(optimizer_step(p, std::vector<double>{1.0}, s, 0.1, c), ValidationError);
}

namespace {

void check_objective_gradient(std::size_t hidden, std::uint64_t seed) {
    CounterRng rng(seed);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(20), d = 1 + rng.below(5);
        std::vector<double> x(n * d), y(n);
        for (double& v : x) v = rng.normal();
        for (double& v : y) v = rng.normal();
        Model m = Model::initialized(d, hidden, seed + trial);
        for (double& p : m.parameters()) p += 0.5 * rng.normal();
        const FeatureMatrix fx(x, n, d);
        const double delta = 0.2 + rng.uniform();

        // Skip draws that put a residual near the kink, where the loss is not twice differentiable.
        const auto pred = m.predict(fx);
        bool near_kink = false;
        for (std::size_t i = 0; i < n; ++i) near_kink |= std::abs(std::abs(pred[i] - y[i]) - delta) < 1e-3;
        if (near_kink) continue;

        const auto grad = objective_gradient(m, fx, y, delta);
        for (std::size_t k = 0; k < m.parameter_count(); ++k) {
            const double saved = m.parameters()[k];
            const double fd = oracle::central_difference(
                [&](double v) {
                    m.parameters()[k] = v;
                    return objective(m, fx, y, delta);
                },
                saved, 1e-6);
            m.parameters()[k] = saved;
            ASSERT_NEAR(grad[k], fd, 1e-5 * std::max(1.0, std::abs(fd))) << "param " << k;
        }
    }
}

}  // namespace

TEST(Model, LinearGradientMatchesFiniteDifferences) { check_objective_gradient(0, 100); }
TEST(Model, HiddenLayerGradientMatchesFiniteDifferences) { check_objective_gradient(4, 200); }

TEST(Model, JsonRoundTrip) {
    const Model m = Model::initialized(5, 3, 8);
    EXPECT_EQ(model_from_json(nlohmann::json::parse(to_json(m).dump())), m);
    auto bad = to_json(m);
    bad["parameters"].erase(0);
    EXPECT_THROW(model_from_json(bad), ValidationError);
}

TEST(Config, JsonAndValidation) {
    const auto c = config_from_json(nlohmann::json{{"max_epochs", 50}, {"batch_size", 16}});
    EXPECT_EQ(c.max_epochs, 50u);
    EXPECT_EQ(c.batch_size, 16u);
    EXPECT_EQ(c.delta, 0.5);
    EXPECT_EQ(c.lr_max, 5e-4);
    EXPECT_EQ(c.weight_decay, 0.01);
    EXPECT_EQ(c.t0, 10u);
    EXPECT_EQ(c.t_mult, 2.0);
    EXPECT_EQ(c.lr_min, 1e-6);
    EXPECT_EQ(c.clip_norm, 1.0);
    EXPECT_EQ(c.patience, 15u);
    EXPECT_THROW(config_from_json(nlohmann::json{{"learning_rate", 1}}), ValidationError);
    EXPECT_THROW(config_from_json(nlohmann::json{{"delta", -1}}), ValidationError);
    EXPECT_THROW(config_from_json(nlohmann::json{{"lr_min", 1e-3}}), ValidationError);
    EXPECT_THROW(config_from_json(nlohmann::json{{"patience", 0}}), ValidationError);
}

TEST(Train, RecoversNoiseFreeLinearTarget) {
    const auto w = fixtures::bmd_like_weights(8, 1);
    const auto tr = fixtures::linear_data(200, 8, w, 10);
    const auto va = fixtures::linear_data(100, 8, w, 11);
    TrainConfig c;
    c.batch_size = 16;
    const auto result = train(FeatureMatrix(tr.x, 200, 8), tr.y, FeatureMatrix(va.x, 100, 8), va.y, c);
    EXPECT_GE(result.best_val_r, 0.999);
    // The returned snapshot reproduces its logged best r.
    EXPECT_EQ(validation_pearson_r(result.model, FeatureMatrix(va.x, 100, 8), va.y), result.best_val_r);
    ASSERT_GE(result.best_epoch, 1u);
    EXPECT_EQ(result.log.at(result.best_epoch - 1).val_pearson_r, result.best_val_r);
    for (std::size_t i = 0; i < result.log.size(); ++i) EXPECT_EQ(result.log[i].epoch, i + 1);
}

TEST(Train, FrozenParametersStopAfterPatience) {
    const auto w = fixtures::bmd_like_weights(4, 2);
    const auto tr = fixtures::linear_data(60, 4, w, 20);
    const auto va = fixtures::linear_data(30, 4, w, 21);
    TrainConfig c;
    c.lr_max = 0.0;
    c.lr_min = 0.0;
    const auto result = train(FeatureMatrix(tr.x, 60, 4), tr.y, FeatureMatrix(va.x, 30, 4), va.y, c);
    EXPECT_TRUE(result.stopped_early);
    EXPECT_EQ(result.log.size(), 15u);
    EXPECT_EQ(result.best_epoch, 0u);
    Model initial = Model::initialized(4, 0, c.seed);
    initial.parameters().back() = std::accumulate(tr.y.begin(), tr.y.end(), 0.0) / 60.0;
    EXPECT_EQ(result.model, initial);
}

TEST(Train, DeterministicUnderSeed) {
    const auto w = fixtures::bmd_like_weights(3, 3);
    const auto tr = fixtures::linear_data(80, 3, w, 30, 0.05);
    const auto va = fixtures::linear_data(40, 3, w, 31, 0.05);
    TrainConfig c;
    c.batch_size = 8;
    c.max_epochs = 40;
    c.seed = 5;
    const FeatureMatrix x(tr.x, 80, 3), xv(va.x, 40, 3);
    const auto a = train(x, tr.y, xv, va.y, c);
    const auto b = train(x, tr.y, xv, va.y, c);
    EXPECT_EQ(a.model, b.model);
    EXPECT_EQ(render_log_jsonl(a.log), render_log_jsonl(b.log));
}

TEST(Train, HiddenLayerModelTrains) {
    const auto w = fixtures::bmd_like_weights(4, 4);
    const auto tr = fixtures::linear_data(200, 4, w, 40);
    const auto va = fixtures::linear_data(100, 4, w, 41);
    TrainConfig c;
    c.hidden_units = 6;
    c.batch_size = 16;
    c.max_epochs = 150;
    const auto result = train(FeatureMatrix(tr.x, 200, 4), tr.y, FeatureMatrix(va.x, 100, 4), va.y, c);
    EXPECT_GT(result.best_val_r, 0.95);
}

TEST(Train, ConstantValidationTargetsRejected) {
    const std::vector<double> x = {1, 2, 3, 4}, y = {1, 2, 3, 4}, yv = {0.8, 0.8};
    const std::vector<double> xv = {1, 2};
    EXPECT_THROW(train(FeatureMatrix(x, 4, 1), y, FeatureMatrix(xv, 2, 1), yv, TrainConfig{}), NumericalError);
}

TEST(Train, LogIsJsonLines) {
    const std::vector<EpochRecord> log = {{1, 5e-4, 0.02, 0.5, 0.5}, {2, 4.9e-4, 0.01, 0.4, 0.5}};
    const auto text = render_log_jsonl(log);
    std::size_t lines = 0, start = 0;
    while (start < text.size()) {
        const auto end = text.find('\n', start);
        const auto j = nlohmann::json::parse(text.substr(start, end - start));
        for (const char* key : {"epoch", "lr", "train_loss", "val_pearson_r", "best_so_far"}) {
            EXPECT_TRUE(j.contains(key)) << key;
        }
        ++lines;
        start = end + 1;
    }
    EXPECT_EQ(lines, 2u);
}
