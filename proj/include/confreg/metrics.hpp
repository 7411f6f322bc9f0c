#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "confreg/conformal.hpp"
#include "confreg/tta.hpp"
#include "confreg/types.hpp"

namespace confreg::metrics {

double mae(std::span<const double> y_true, std::span<const double> y_pred);
double rmse(std::span<const double> y_true, std::span<const double> y_pred);
/// Mean absolute percentage error, in percent. Every truth must be non-zero.
double mape(std::span<const double> y_true, std::span<const double> y_pred);
/// Sample Pearson correlation, two-pass mean-centred. Throws NumericalError on
/// zero variance.
double pearson_r(std::span<const double> x, std::span<const double> y);

/// Pearson r between |y_true - center| and interval width. Undefined (throws
/// NumericalError) when all widths are equal, as with plain split CP.
double error_width_correlation(std::span<const double> truths,
                               std::span<const PredictionInterval> intervals);

/// error_width_correlation when it is defined: every width finite, widths not
/// constant up to 1e-12 relative rounding, errors not all equal. Empty otherwise.
std::optional<double> error_width_correlation_if_defined(std::span<const double> truths,
                                                         std::span<const PredictionInterval> intervals);

struct PointMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;
    double pearson_r = 0.0;

    friend bool operator==(const PointMetrics&, const PointMetrics&) = default;
};

struct LevelMetrics {
    double alpha = 0.0;
    double cp_radius = 0.0;
    double empirical_coverage = 0.0;
    double avg_width = 0.0;

    friend bool operator==(const LevelMetrics&, const LevelMetrics&) = default;
};

struct EvaluationReport {
    std::string label;
    std::size_t n_test = 0;
    /// Absent for rows that only report interval radii.
    std::optional<PointMetrics> point;
    std::vector<LevelMetrics> levels;
    std::optional<double> error_width_correlation;

    friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

/// Point metrics on the augmentation means and, per calibrator, the radius,
/// coverage and mean width of the strategy's intervals.
EvaluationReport build_report(std::span<const AugmentedPredictionBundle> test,
                              std::span<const ConformalCalibrator> calibrators,
                              const TtaStrategy& strategy, std::string label = {});
EvaluationReport build_report(std::span<const PredictionRecord> test,
                              std::span<const ConformalCalibrator> calibrators,
                              std::string label = {});

/// One significance level of already-built intervals, aligned with the truths.
struct LevelIntervals {
    double alpha = 0.0;
    double cp_radius = 0.0;
    std::vector<PredictionInterval> intervals;
};

EvaluationReport build_report_from_intervals(std::span<const double> truths,
                                             std::span<const double> centers,
                                             std::span<const LevelIntervals> levels,
                                             std::string label = {});

nlohmann::json to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const nlohmann::json& j);

/// Plain-text table with the columns Model, MAE, R, RMSE, MAPE and one
/// "CP xx%" radius column per level (highest confidence first). Values use
/// four decimals; missing values print as "--".
std::string render_table(std::span<const EvaluationReport> reports);

/// Per-level coverage and mean width, one line per (report, level).
std::string render_coverage_table(std::span<const EvaluationReport> reports);

/// `y_true,y_pred,abs_error` rows for external scatter plots.
std::string render_plot_data(std::span<const double> truths, std::span<const double> preds);

}  // namespace confreg::metrics
