#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "confreg/types.hpp"

namespace confreg {

enum class ScoreKind { absolute_residual, normalized_residual };

std::string_view score_kind_name(ScoreKind kind);
ScoreKind parse_score_kind(std::string_view name);

/// Floor applied to the per-case augmentation spread for normalized scores.
inline constexpr double kSpreadFloor = 1e-6;

/// Fitted split-conformal radius for one significance level. Immutable once
/// built; copies are cheap.
class ConformalCalibrator {
public:
    ConformalCalibrator(double alpha, double q_radius, std::size_t n_calib, ScoreKind kind,
                        std::string created_from = {}, bool exchangeable = true);

    double alpha() const noexcept { return alpha_; }
    /// Nonconformity quantile; +inf when the calibration set is too small for alpha.
    double q_radius() const noexcept { return q_radius_; }
    std::size_t n_calib() const noexcept { return n_calib_; }
    ScoreKind score_kind() const noexcept { return kind_; }
    const std::string& created_from() const noexcept { return created_from_; }
    /// False when scores were pooled from correlated samples (multi-sample TTA).
    bool exchangeable() const noexcept { return exchangeable_; }

    /// Interval radius for a case. `scale` is the case's augmentation spread and
    /// only matters for normalized scores.
    double radius(double scale = 1.0) const;

    ConformalCalibrator with_provenance(std::string created_from) const;

    friend bool operator==(const ConformalCalibrator&, const ConformalCalibrator&) = default;

private:
    double alpha_;
    double q_radius_;
    std::size_t n_calib_;
    ScoreKind kind_;
    std::string created_from_;
    bool exchangeable_;
};

/// |y_true - y_pred| per record, in input order.
std::vector<double> nonconformity_scores(std::span<const PredictionRecord> records);

/// Population standard deviation of the augmented predictions.
double augmentation_spread(std::span<const double> aug_preds);

/// |y_true - mean| / max(spread, kSpreadFloor) per bundle.
std::vector<double> normalized_scores(std::span<const AugmentedPredictionBundle> bundles);

/// 1-based rank ceil((n + 1)(1 - alpha)) of the order statistic used as radius.
/// May exceed n.
std::size_t conformal_rank(std::size_t n, double alpha);

/// Radius = k-th smallest score with k = conformal_rank(n, alpha), or +inf when k > n.
ConformalCalibrator fit_calibrator(std::span<const double> scores, double alpha,
                                   ScoreKind kind = ScoreKind::absolute_residual);

PredictionInterval predict_interval(const ConformalCalibrator& calibrator, double y_pred,
                                    double scale = 1.0);

/// Fraction of cases with lower <= y_true <= upper.
double empirical_coverage(std::span<const PredictionInterval> intervals,
                          std::span<const double> truths);

/// Mean width; +inf if any interval is unbounded.
double average_interval_width(std::span<const PredictionInterval> intervals);

nlohmann::json to_json(const ConformalCalibrator& calibrator);
ConformalCalibrator calibrator_from_json(const nlohmann::json& j);

}  // namespace confreg
