#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace confreg::trainer {

struct TrainConfig {
    double delta = 0.5;
    double lr_max = 5e-4;
    double weight_decay = 0.01;
    std::size_t t0 = 10;
    double t_mult = 2.0;
    double lr_min = 1e-6;
    double clip_norm = 1.0;
    std::size_t patience = 15;
    std::size_t max_epochs = 310;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_moment = 1e-8;
    /// 0 means full batch.
    std::size_t batch_size = 0;
    /// 0 gives a linear model; otherwise one tanh hidden layer of this width.
    std::size_t hidden_units = 0;

    void validate() const;
};

/// Reads a config object; absent keys keep their defaults, unknown keys are rejected.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const TrainConfig& config);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// 0.5 e^2 for |e| <= delta, delta (|e| - delta / 2) beyond.
double huber_loss(double residual, double delta = 0.5);
/// Derivative of huber_loss with respect to the residual; bounded by delta.
double huber_grad(double residual, double delta = 0.5);

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

/// lr_min + (lr_max - lr_min) (1 + cos(pi t_cur / t_i)) / 2, exact at both ends.
double cosine_warm_restart_lr(double t_cur, double t_i, double lr_max, double lr_min);

/// Epoch-granular cosine annealing with warm restarts. Cycle i lasts
/// t0 * t_mult^i epochs and t_cur restarts at 0 on every boundary.
class WarmRestartSchedule {
public:
    WarmRestartSchedule(std::size_t t0, double t_mult, double lr_max, double lr_min);

    struct Position {
        std::size_t cycle = 0;
        std::size_t t_cur = 0;
        std::size_t t_i = 0;
    };

    /// Cycle position of 0-based `epoch`.
    Position position(std::size_t epoch) const;
    double lr(std::size_t epoch) const;
    std::vector<std::size_t> cycle_lengths(std::size_t n_cycles) const;

private:
    std::size_t cycle_length(std::size_t cycle) const;

    std::size_t t0_;
    double t_mult_;
    double lr_max_;
    double lr_min_;
};

// ---------------------------------------------------------------------------
// Gradient clipping and the optimizer
// ---------------------------------------------------------------------------

/// Rescales `grad` in place to L2 norm at most max_norm. Returns the norm before clipping.
double clip_gradient_in_place(std::span<double> grad, double max_norm);
std::vector<double> clip_gradient(std::span<const double> grad, double max_norm);

/// Adam moments with decoupled weight decay.
struct OptimizerState {
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    explicit OptimizerState(std::size_t n_params = 0) : m(n_params, 0.0), v(n_params, 0.0) {}
};

/// params <- params - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * params
void optimizer_step(std::span<double> params, std::span<const double> grads,
                    OptimizerState& state, double lr, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Row-major view of an N x D feature matrix.
struct FeatureMatrix {
    std::span<const double> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    FeatureMatrix(std::span<const double> values, std::size_t n_rows, std::size_t n_cols);
    std::span<const double> row(std::size_t i) const { return data.subspan(i * cols, cols); }
};

/// Linear regressor, or a one-hidden-layer tanh network when hidden_units > 0.
/// Parameters live in one flat vector:
///   linear: [w_0 .. w_{D-1}, b]
///   hidden: [W1 (H x D, row-major), b1 (H), w2 (H), b2]
class Model {
public:
    Model(std::size_t input_dim, std::size_t hidden_units = 0);

    /// Seeded initialization: hidden weights uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); output layer and biases zero.
    /// The last parameter is always the output bias.
    static Model initialized(std::size_t input_dim, std::size_t hidden_units, std::uint64_t seed);

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t hidden_units() const noexcept { return hidden_units_; }
    std::size_t parameter_count() const noexcept { return params_.size(); }

    std::span<double> parameters() noexcept { return params_; }
    std::span<const double> parameters() const noexcept { return params_; }

    double predict(std::span<const double> x) const;
    std::vector<double> predict(const FeatureMatrix& x) const;

    /// Adds d(prediction)/d(params) * upstream into `grad`.
    void accumulate_gradient(std::span<const double> x, double upstream, std::span<double> grad) const;

    friend bool operator==(const Model&, const Model&) = default;

private:
    std::size_t input_dim_;
    std::size_t hidden_units_;
    std::vector<double> params_;
};

nlohmann::json to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

/// Mean Huber loss of the model's predictions.
double objective(const Model& model, const FeatureMatrix& x, std::span<const double> y, double delta);
/// Analytic gradient of objective() with respect to the flat parameters.
std::vector<double> objective_gradient(const Model& model, const FeatureMatrix& x,
                                       std::span<const double> y, double delta);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_pearson_r = 0.0;
    double best_so_far = 0.0;
};

/// Mutable state of one fit.
struct TrainState {
    std::size_t epoch = 0;
    OptimizerState optimizer;
    double best_val_r = 0.0;
    std::size_t epochs_since_improvement = 0;
    Model best_model;
};

struct TrainResult {
    Model model;
    double best_val_r = 0.0;
    /// 0 means the initial parameters were never beaten.
    std::size_t best_epoch = 0;
    bool stopped_early = false;
    std::vector<EpochRecord> log;
};

/// Validation score used for early stopping: Pearson r of predictions against
/// targets, or 0 when the predictions are constant.
double validation_pearson_r(const Model& model, const FeatureMatrix& x, std::span<const double> y);

/// Huber-loss fit with clipping, AdamW and warm-restart cosine schedule.
/// The initial model sets the baseline validation r; an epoch counts as an
/// improvement only when it beats the best r strictly. Stops after `patience`
/// epochs without improvement or at max_epochs and returns the best snapshot.
TrainResult train(const FeatureMatrix& x, std::span<const double> y, const FeatureMatrix& x_val,
                  std::span<const double> y_val, const TrainConfig& config);

/// One JSON object per line: epoch, lr, train_loss, val_pearson_r, best_so_far.
std::string render_log_jsonl(std::span<const EpochRecord> log);

}  // namespace confreg::trainer
