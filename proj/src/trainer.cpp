#include "confreg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "confreg/error.hpp"
#include "confreg/metrics.hpp"
#include "confreg/rng.hpp"

namespace confreg::trainer {

void TrainConfig::validate() const {
    auto require = [](bool ok, const char* msg) {
        if (!ok) throw ValidationError(std::string("train config: ") + msg);
    };
    require(std::isfinite(delta) && delta > 0.0, "delta must be > 0");
    require(std::isfinite(lr_max) && lr_max >= 0.0, "lr_max must be >= 0");
    require(std::isfinite(lr_min) && lr_min >= 0.0 && lr_min <= lr_max,
            "lr_min must lie in [0, lr_max]");
    require(std::isfinite(weight_decay) && weight_decay >= 0.0, "weight_decay must be >= 0");
    require(t0 >= 1, "t0 must be >= 1");
    require(std::isfinite(t_mult) && t_mult >= 1.0, "t_mult must be >= 1");
    require(std::isfinite(clip_norm) && clip_norm > 0.0, "clip_norm must be > 0");
    require(patience >= 1, "patience must be >= 1");
    require(max_epochs >= 1, "max_epochs must be >= 1");
    require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
    require(eps_moment > 0.0, "eps_moment must be > 0");
}

TrainConfig config_from_json(const nlohmann::json& j, TrainConfig c) {
    if (!j.is_object()) throw ValidationError("train config must be a JSON object");
    static const std::set<std::string> known = {
        "delta", "lr_max", "weight_decay", "t0", "t_mult", "lr_min", "clip_norm", "patience",
        "max_epochs", "seed", "beta1", "beta2", "eps_moment", "batch_size", "hidden_units"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ValidationError("train config: unknown key '" + key + "'");
    }
    try {
        c.delta = j.value("delta", c.delta);
        c.lr_max = j.value("lr_max", c.lr_max);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.t0 = j.value("t0", c.t0);
        c.t_mult = j.value("t_mult", c.t_mult);
        c.lr_min = j.value("lr_min", c.lr_min);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.patience = j.value("patience", c.patience);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.seed = j.value("seed", c.seed);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.eps_moment = j.value("eps_moment", c.eps_moment);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.hidden_units = j.value("hidden_units", c.hidden_units);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"delta", c.delta},          {"lr_max", c.lr_max},       {"weight_decay", c.weight_decay},
            {"t0", c.t0},                {"t_mult", c.t_mult},       {"lr_min", c.lr_min},
            {"clip_norm", c.clip_norm},  {"patience", c.patience},   {"max_epochs", c.max_epochs},
            {"seed", c.seed},            {"beta1", c.beta1},         {"beta2", c.beta2},
            {"eps_moment", c.eps_moment}, {"batch_size", c.batch_size},
            {"hidden_units", c.hidden_units}};
}

// ---------------------------------------------------------------------------

double huber_loss(double e, double delta) {
    if (!std::isfinite(e)) throw ValidationError("huber_loss: non-finite residual");
    if (!(delta > 0.0)) throw ValidationError("huber_loss: delta must be > 0");
    const double a = std::abs(e);
    return a <= delta ? 0.5 * e * e : delta * (a - 0.5 * delta);
}

double huber_grad(double e, double delta) {
    if (!std::isfinite(e)) throw ValidationError("huber_grad: non-finite residual");
    if (!(delta > 0.0)) throw ValidationError("huber_grad: delta must be > 0");
    if (std::abs(e) <= delta) return e;
    return e > 0.0 ? delta : -delta;
}

// ---------------------------------------------------------------------------

double cosine_warm_restart_lr(double t_cur, double t_i, double lr_max, double lr_min) {
    if (!(t_i > 0.0)) throw ValidationError("schedule: cycle length must be > 0");
    if (!(t_cur >= 0.0 && t_cur <= t_i)) throw ValidationError("schedule: t_cur outside [0, t_i]");
    // std::lerp is exact at weight 0 and 1, so the ends hit lr_max and lr_min bit-for-bit.
    const double weight = 0.5 * (1.0 - std::cos(std::numbers::pi * t_cur / t_i));
    return std::lerp(lr_max, lr_min, weight);
}

WarmRestartSchedule::WarmRestartSchedule(std::size_t t0, double t_mult, double lr_max, double lr_min)
    : t0_(t0), t_mult_(t_mult), lr_max_(lr_max), lr_min_(lr_min) {
    if (t0 < 1) throw ValidationError("schedule: t0 must be >= 1");
    if (!(t_mult >= 1.0)) throw ValidationError("schedule: t_mult must be >= 1");
    if (!(lr_min <= lr_max)) throw ValidationError("schedule: lr_min must not exceed lr_max");
}

std::size_t WarmRestartSchedule::cycle_length(std::size_t cycle) const {
    const double len = static_cast<double>(t0_) * std::pow(t_mult_, static_cast<double>(cycle));
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(len)));
}

WarmRestartSchedule::Position WarmRestartSchedule::position(std::size_t epoch) const {
    Position p;
    std::size_t remaining = epoch;
    while (true) {
        const std::size_t len = cycle_length(p.cycle);
        if (remaining < len) {
            p.t_cur = remaining;
            p.t_i = len;
            return p;
        }
        remaining -= len;
        ++p.cycle;
    }
}

double WarmRestartSchedule::lr(std::size_t epoch) const {
    const auto p = position(epoch);
    return cosine_warm_restart_lr(static_cast<double>(p.t_cur), static_cast<double>(p.t_i),
                                  lr_max_, lr_min_);
}

std::vector<std::size_t> WarmRestartSchedule::cycle_lengths(std::size_t n_cycles) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n_cycles; ++i) out.push_back(cycle_length(i));
    return out;
}

// ---------------------------------------------------------------------------

double clip_gradient_in_place(std::span<double> grad, double max_norm) {
    if (!(max_norm > 0.0)) throw ValidationError("clip_gradient: max_norm must be > 0");
    double sq = 0.0;
    for (double g : grad) {
        if (!std::isfinite(g)) throw NumericalError("clip_gradient: non-finite gradient entry");
        sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (double& g : grad) g *= scale;
    }
    return norm;
}

std::vector<double> clip_gradient(std::span<const double> grad, double max_norm) {
    std::vector<double> out(grad.begin(), grad.end());
    clip_gradient_in_place(out, max_norm);
    return out;
}

void optimizer_step(std::span<double> params, std::span<const double> grads,
                    OptimizerState& state, double lr, const TrainConfig& c) {
    if (grads.size() != params.size() || state.m.size() != params.size() ||
        state.v.size() != params.size()) {
        throw ValidationError(fmt::format("optimizer_step: shape mismatch (params {}, grads {}, state {})",
                                          params.size(), grads.size(), state.m.size()));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(c.beta1, t);
    const double bias2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / bias1;
        const double v_hat = state.v[i] / bias2;
        // Decay acts on the parameter directly, outside the moment estimates.
        params[i] -= lr * (m_hat / (std::sqrt(v_hat) + c.eps_moment)) + lr * c.weight_decay * params[i];
    }
}

// ---------------------------------------------------------------------------

FeatureMatrix::FeatureMatrix(std::span<const double> values, std::size_t n_rows, std::size_t n_cols)
    : data(values), rows(n_rows), cols(n_cols) {
    if (values.size() != n_rows * n_cols) {
        throw ValidationError(fmt::format("feature matrix: {} values for {} x {}", values.size(),
                                          n_rows, n_cols));
    }
}

Model::Model(std::size_t input_dim, std::size_t hidden_units)
    : input_dim_(input_dim), hidden_units_(hidden_units) {
    if (input_dim < 1) throw ValidationError("model needs at least one feature");
    const std::size_t n = hidden_units == 0 ? input_dim + 1
                                            : hidden_units * input_dim + 2 * hidden_units + 1;
    params_.assign(n, 0.0);
}

Model Model::initialized(std::size_t input_dim, std::size_t hidden_units, std::uint64_t seed) {
    Model m(input_dim, hidden_units);
    CounterRng rng(seed, /*stream=*/0x1417);
    auto fill = [&](std::size_t first, std::size_t count, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < count; ++i) m.params_[first + i] = bound * (2.0 * rng.uniform() - 1.0);
    };
    // Output layer starts at zero so the untrained model predicts a constant.
    if (hidden_units > 0) fill(0, hidden_units * input_dim, input_dim);
    return m;
}

double Model::predict(std::span<const double> x) const {
    if (x.size() != input_dim_) throw ValidationError("model input has the wrong dimension");
    const std::size_t d = input_dim_;
    if (hidden_units_ == 0) {
        double out = params_[d];
        for (std::size_t j = 0; j < d; ++j) out += params_[j] * x[j];
        return out;
    }
    const std::size_t h = hidden_units_;
    const double* w1 = params_.data();
    const double* b1 = w1 + h * d;
    const double* w2 = b1 + h;
    double out = w2[h];
    for (std::size_t u = 0; u < h; ++u) {
        double z = b1[u];
        for (std::size_t j = 0; j < d; ++j) z += w1[u * d + j] * x[j];
        out += w2[u] * std::tanh(z);
    }
    return out;
}

std::vector<double> Model::predict(const FeatureMatrix& x) const {
    if (x.cols != input_dim_) throw ValidationError("feature matrix has the wrong width");
    std::vector<double> out(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) out[i] = predict(x.row(i));
    return out;
}

void Model::accumulate_gradient(std::span<const double> x, double upstream,
                                std::span<double> grad) const {
    const std::size_t d = input_dim_;
    if (hidden_units_ == 0) {
        for (std::size_t j = 0; j < d; ++j) grad[j] += upstream * x[j];
        grad[d] += upstream;
        return;
    }
    const std::size_t h = hidden_units_;
    const double* w1 = params_.data();
    const double* b1 = w1 + h * d;
    const double* w2 = b1 + h;
    double* g_w1 = grad.data();
    double* g_b1 = g_w1 + h * d;
    double* g_w2 = g_b1 + h;
    for (std::size_t u = 0; u < h; ++u) {
        double z = b1[u];
        for (std::size_t j = 0; j < d; ++j) z += w1[u * d + j] * x[j];
        const double a = std::tanh(z);
        g_w2[u] += upstream * a;
        const double dz = upstream * w2[u] * (1.0 - a * a);
        g_b1[u] += dz;
        for (std::size_t j = 0; j < d; ++j) g_w1[u * d + j] += dz * x[j];
    }
    g_w2[h] += upstream;
}

nlohmann::json to_json(const Model& m) {
    return {{"input_dim", m.input_dim()},
            {"hidden_units", m.hidden_units()},
            {"parameters", std::vector<double>(m.parameters().begin(), m.parameters().end())}};
}

Model model_from_json(const nlohmann::json& j) {
    try {
        Model m(j.at("input_dim").get<std::size_t>(), j.value("hidden_units", std::size_t{0}));
        const auto params = j.at("parameters").get<std::vector<double>>();
        if (params.size() != m.parameter_count()) {
            throw ValidationError("model JSON: parameter count does not match the layout");
        }
        std::copy(params.begin(), params.end(), m.parameters().begin());
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed model JSON: ") + e.what());
    }
}

double objective(const Model& model, const FeatureMatrix& x, std::span<const double> y, double delta) {
    if (y.size() != x.rows || x.rows == 0) throw ValidationError("objective: bad batch shape");
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) total += huber_loss(model.predict(x.row(i)) - y[i], delta);
    return total / static_cast<double>(x.rows);
}

std::vector<double> objective_gradient(const Model& model, const FeatureMatrix& x,
                                       std::span<const double> y, double delta) {
    if (y.size() != x.rows || x.rows == 0) throw ValidationError("objective_gradient: bad batch shape");
    std::vector<double> grad(model.parameter_count(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double e = model.predict(x.row(i)) - y[i];
        model.accumulate_gradient(x.row(i), huber_grad(e, delta) * inv_n, grad);
    }
    return grad;
}

// ---------------------------------------------------------------------------

double validation_pearson_r(const Model& model, const FeatureMatrix& x, std::span<const double> y) {
    const auto pred = model.predict(x);
    const auto [lo, hi] = std::minmax_element(pred.begin(), pred.end());
    if (*lo == *hi) return 0.0;
    return metrics::pearson_r(pred, y);
}

namespace {

void check_inputs(const FeatureMatrix& x, std::span<const double> y, const char* what) {
    if (x.rows < 1 || x.cols < 1) throw ValidationError(fmt::format("{}: empty feature matrix", what));
    if (y.size() != x.rows) throw ValidationError(fmt::format("{}: target count mismatch", what));
    for (double v : x.data) {
        if (!std::isfinite(v)) throw ValidationError(fmt::format("{}: non-finite feature", what));
    }
    for (double v : y) {
        if (!std::isfinite(v)) throw ValidationError(fmt::format("{}: non-finite target", what));
    }
}

}  // namespace

TrainResult train(const FeatureMatrix& x, std::span<const double> y, const FeatureMatrix& x_val,
                  std::span<const double> y_val, const TrainConfig& config) {
    config.validate();
    check_inputs(x, y, "train");
    check_inputs(x_val, y_val, "validation");
    if (x_val.cols != x.cols) throw ValidationError("validation features have a different width");
    if (y_val.size() < 2) throw ValidationError("validation set needs at least two cases");
    {
        const auto [lo, hi] = std::minmax_element(y_val.begin(), y_val.end());
        if (*lo == *hi) throw NumericalError("validation targets have zero variance; Pearson r undefined");
    }

    Model model = Model::initialized(x.cols, config.hidden_units, config.seed);
    model.parameters().back() = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    const WarmRestartSchedule schedule(config.t0, config.t_mult, config.lr_max, config.lr_min);
    const std::size_t batch = config.batch_size == 0 ? x.rows : std::min(config.batch_size, x.rows);

    TrainState state{0, OptimizerState(model.parameter_count()),
                     validation_pearson_r(model, x_val, y_val), 0, model};
    TrainResult result{model, state.best_val_r, 0, false, {}};

    CounterRng shuffle_root(config.seed, /*stream=*/0xba7c4);
    std::vector<std::size_t> order(x.rows);
    std::vector<double> batch_x(batch * x.cols);
    std::vector<double> batch_y(batch);

    for (state.epoch = 1; state.epoch <= config.max_epochs; ++state.epoch) {
        const double lr = schedule.lr(state.epoch - 1);
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (batch < x.rows) {
            CounterRng rng = shuffle_root.split(state.epoch);
            shuffle_in_place(order, rng);
        }

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < x.rows; start += batch) {
            const std::size_t n = std::min(batch, x.rows - start);
            batch_x.resize(n * x.cols);
            batch_y.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto row = x.row(order[start + i]);
                std::copy(row.begin(), row.end(), batch_x.begin() + static_cast<std::ptrdiff_t>(i * x.cols));
                batch_y[i] = y[order[start + i]];
            }
            const FeatureMatrix bx(batch_x, n, x.cols);
            loss_sum += objective(model, bx, batch_y, config.delta) * static_cast<double>(n);
            auto grad = objective_gradient(model, bx, batch_y, config.delta);
            clip_gradient_in_place(grad, config.clip_norm);
            optimizer_step(model.parameters(), grad, state.optimizer, lr, config);
        }
        for (double p : model.parameters()) {
            if (!std::isfinite(p)) throw NumericalError("training diverged: non-finite parameter");
        }

        const double r = validation_pearson_r(model, x_val, y_val);
        if (r > state.best_val_r) {
            state.best_val_r = r;
            state.best_model = model;
            state.epochs_since_improvement = 0;
            result.best_epoch = state.epoch;
        } else {
            ++state.epochs_since_improvement;
        }
        result.log.push_back({state.epoch, lr, loss_sum / static_cast<double>(x.rows), r,
                              state.best_val_r});
        if (state.epochs_since_improvement >= config.patience) {
            result.stopped_early = true;
            break;
        }
    }
    result.model = state.best_model;
    result.best_val_r = state.best_val_r;
    return result;
}

std::string render_log_jsonl(std::span<const EpochRecord> log) {
    std::string out;
    for (const auto& e : log) {
        nlohmann::json j = {{"epoch", e.epoch},
                            {"lr", e.lr},
                            {"train_loss", e.train_loss},
                            {"val_pearson_r", e.val_pearson_r},
                            {"best_so_far", e.best_so_far}};
        out += j.dump() + '\n';
    }
    return out;
}

}  // namespace confreg::trainer
