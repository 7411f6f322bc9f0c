#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "confreg/conformal.hpp"
#include "confreg/metrics.hpp"
#include "confreg/rng.hpp"
#include "confreg/tta.hpp"
#include "confreg/types.hpp"

namespace confreg::synthlab {

enum class NoiseModel {
    gaussian,         ///< N(0, sigma^2)
    heteroscedastic,  ///< N(0, (sigma * s(x))^2), s(x) = 0.5 + |x_0|
    heavy_tail        ///< sigma * Student-t(dof)
};

enum class JitterMode {
    additive,       ///< aug = pred + sigma_aug * z
    multiplicative  ///< aug = pred * (1 + sigma_aug * z)
};

/// Desk-scale regression task: y = intercept + x . w + noise with x ~ N(0, I).
/// Point predictions come from least squares on the training split; the K
/// augmented predictions are that prediction plus i.i.d. jitter. Under the
/// heteroscedastic model the jitter is scaled by the same s(x) as the noise, so
/// augmentation spread tracks case difficulty.
struct SyntheticTask {
    std::string name = "default";
    std::size_t n_train = 1000;
    std::size_t n_val = 200;
    std::size_t n_calib = 500;
    std::size_t n_test = 2000;
    std::size_t dim = 8;
    double intercept = 0.85;
    /// Each true weight is weight_scale * N(0, 1), drawn from the seed.
    double weight_scale = 0.05;
    NoiseModel noise = NoiseModel::gaussian;
    double sigma = 0.1;
    int dof = 3;
    double sigma_aug = 0.02;
    JitterMode jitter = JitterMode::additive;
    std::size_t k_augment = 8;
    std::uint64_t seed = 2024;

    void validate() const;
};

struct Split {
    std::vector<double> features;  ///< row-major n x dim
    std::vector<double> targets;
    /// Noise scale factor s(x) per case (1 unless heteroscedastic).
    std::vector<double> scale;
};

/// Least-squares fit used as the "trained model".
struct LinearPredictor {
    std::vector<double> weights;
    double bias = 0.0;

    double predict(std::span<const double> x) const;
};

struct SyntheticDataset {
    std::vector<double> true_weights;
    Split train, val, calib, test;
    LinearPredictor model;
    std::vector<AugmentedPredictionBundle> calib_bundles;
    std::vector<AugmentedPredictionBundle> test_bundles;
};

std::vector<double> true_weights(const SyntheticTask& task);

/// Draws n cases from the task distribution using `rng`.
Split draw_split(const SyntheticTask& task, std::span<const double> weights, std::size_t n,
                 CounterRng& rng);

LinearPredictor fit_least_squares(const Split& split, std::size_t dim);

/// Builds K augmented predictions per case around the model's prediction.
std::vector<AugmentedPredictionBundle> make_bundles(const SyntheticTask& task, const Split& split,
                                                    const LinearPredictor& model,
                                                    std::string_view id_prefix, CounterRng& rng);

/// Deterministic in task.seed.
SyntheticDataset generate(const SyntheticTask& task);

// ---------------------------------------------------------------------------

struct Scenario {
    SyntheticTask task;
    std::vector<double> alphas = {0.1, 0.05, 0.01};
    std::vector<TtaKind> strategies = {TtaKind::none, TtaKind::traditional, TtaKind::multi_sample};
    std::size_t n_trials = 200;
    ScoreKind score = ScoreKind::absolute_residual;

    void validate() const;
};

/// Unknown keys and malformed values raise ValidationError.
Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Scenario& scenario);

struct CoverageSummary {
    double mean_coverage = 0.0;
    double coverage_stderr = 0.0;
    /// +inf when any trial produced unbounded intervals.
    double mean_width = 0.0;
    std::size_t n_trials = 0;
    std::size_t n_calib_scores = 0;
    bool exchangeable = true;

    friend bool operator==(const CoverageSummary&, const CoverageSummary&) = default;
};

struct FaceOffRow {
    TtaKind strategy = TtaKind::none;
    double alpha = 0.0;
    CoverageSummary summary;

    friend bool operator==(const FaceOffRow&, const FaceOffRow&) = default;
};

struct FaceOffResult {
    std::vector<FaceOffRow> rows;
    /// One report per strategy; levels hold trial-mean radius (half the mean
    /// width), coverage and width; point metrics are trial means.
    std::vector<metrics::EvaluationReport> reports;
};

/// Worker threads for Monte Carlo loops: CONFREG_THREADS when set, else the
/// hardware concurrency. Results never depend on this value.
std::size_t worker_threads();

/// Each trial redraws calibration and test cases from an independent stream
/// (task.seed, trial), calibrates every strategy at every alpha on the same
/// draw and measures coverage and width on the test cases.
FaceOffResult strategy_face_off(const SyntheticTask& task, std::span<const double> alphas,
                                std::span<const TtaKind> strategies, std::size_t n_trials,
                                ScoreKind score = ScoreKind::absolute_residual);

FaceOffResult run_scenario(const Scenario& scenario);

CoverageSummary coverage_trial(const SyntheticTask& task, double alpha, TtaKind strategy,
                               std::size_t n_trials,
                               ScoreKind score = ScoreKind::absolute_residual);

nlohmann::json to_json(const FaceOffResult& result);
/// Radius table (as render_table) followed by a coverage table with Monte Carlo stderr.
std::string render_face_off(const FaceOffResult& result);

}  // namespace confreg::synthlab
