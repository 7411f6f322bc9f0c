#include "confreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "confreg/csv_io.hpp"
#include "confreg/error.hpp"

namespace confreg::metrics {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size()) {
        throw ValidationError(fmt::format("{}: length mismatch ({} vs {})", what, a.size(), b.size()));
    }
    if (a.empty()) throw ValidationError(fmt::format("{}: empty input", what));
}

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

double mae(std::span<const double> y_true, std::span<const double> y_pred) {
    check_pair(y_true, y_pred, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i) s += std::abs(y_true[i] - y_pred[i]);
    return s / static_cast<double>(y_true.size());
}

double rmse(std::span<const double> y_true, std::span<const double> y_pred) {
    check_pair(y_true, y_pred, "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const double d = y_true[i] - y_pred[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(y_true.size()));
}

double mape(std::span<const double> y_true, std::span<const double> y_pred) {
    check_pair(y_true, y_pred, "mape");
    // Running mean: identical per-case percentages give back that percentage exactly.
    double m = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] == 0.0) throw ValidationError("mape: zero ground-truth value");
        const double pct = 100.0 * (std::abs(y_true[i] - y_pred[i]) / std::abs(y_true[i]));
        m += (pct - m) / static_cast<double>(i + 1);
    }
    return m;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y, "pearson_r");
    if (x.size() < 2) throw ValidationError("pearson_r: need at least two samples");
    const double mx = mean_of(x);
    const double my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericalError("pearson_r: zero variance");
    // The (n - 1) factors cancel.
    const double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

double error_width_correlation(std::span<const double> truths,
                               std::span<const PredictionInterval> intervals) {
    if (truths.size() != intervals.size()) {
        throw ValidationError("error_width_correlation: length mismatch");
    }
    std::vector<double> errors, widths;
    errors.reserve(truths.size());
    widths.reserve(truths.size());
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const double w = intervals[i].width();
        if (!std::isfinite(w)) throw NumericalError("error_width_correlation: unbounded interval");
        errors.push_back(std::abs(truths[i] - intervals[i].center));
        widths.push_back(w);
    }
    return pearson_r(errors, widths);
}

std::optional<double> error_width_correlation_if_defined(std::span<const double> truths,
                                                         std::span<const PredictionInterval> intervals) {
    if (truths.size() != intervals.size() || truths.size() < 2) return std::nullopt;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& iv : intervals) {
        const double w = iv.width();
        if (!std::isfinite(w)) return std::nullopt;
        lo = std::min(lo, w);
        hi = std::max(hi, w);
    }
    if (hi - lo <= 1e-12 * hi) return std::nullopt;
    const double e0 = std::abs(truths[0] - intervals[0].center);
    bool constant_error = true;
    for (std::size_t i = 1; i < truths.size() && constant_error; ++i) {
        constant_error = std::abs(truths[i] - intervals[i].center) == e0;
    }
    if (constant_error) return std::nullopt;
    return error_width_correlation(truths, intervals);
}

EvaluationReport build_report_from_intervals(
    std::span<const double> truths, std::span<const double> centers,
    std::span<const LevelIntervals> levels, std::string label) {
    check_pair(truths, centers, "build_report");
    EvaluationReport report;
    report.label = std::move(label);
    report.n_test = truths.size();
    report.point = PointMetrics{mae(truths, centers), rmse(truths, centers), mape(truths, centers),
                                pearson_r(truths, centers)};
    for (const auto& level : levels) {
        const auto& ivs = level.intervals;
        if (ivs.size() != truths.size()) {
            throw ValidationError(fmt::format("build_report: level {} has {} intervals for {} cases",
                                              level.alpha, ivs.size(), truths.size()));
        }
        report.levels.push_back({level.alpha, level.cp_radius, empirical_coverage(ivs, truths),
                                 average_interval_width(ivs)});
        if (!report.error_width_correlation) {
            report.error_width_correlation = error_width_correlation_if_defined(truths, ivs);
        }
    }
    return report;
}

EvaluationReport build_report(std::span<const AugmentedPredictionBundle> test,
                              std::span<const ConformalCalibrator> calibrators,
                              const TtaStrategy& strategy, std::string label) {
    if (test.empty()) throw ValidationError("build_report: empty test set");
    std::vector<double> truths, centers;
    for (const auto& b : test) {
        truths.push_back(b.y_true);
        centers.push_back(aggregate_point(b));
    }
    std::vector<LevelIntervals> levels;
    for (const auto& c : calibrators) {
        auto& level = levels.emplace_back(LevelIntervals{c.alpha(), c.q_radius(), {}});
        level.intervals.reserve(test.size());
        for (const auto& b : test) level.intervals.push_back(predict_with_strategy(c, strategy, b));
    }
    return build_report_from_intervals(truths, centers, levels, std::move(label));
}

EvaluationReport build_report(std::span<const PredictionRecord> test,
                              std::span<const ConformalCalibrator> calibrators, std::string label) {
    std::vector<AugmentedPredictionBundle> bundles;
    bundles.reserve(test.size());
    for (const auto& r : test) {
        validate(r);
        bundles.push_back(as_bundle(r));
    }
    return build_report(bundles, calibrators, TtaStrategy{TtaKind::none, 1}, std::move(label));
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json number_or_inf(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

double read_number_or_inf(const nlohmann::json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw ValidationError("expected a number or \"inf\", got '" + s + "'");
    }
    return j.get<double>();
}

}  // namespace

nlohmann::json to_json(const EvaluationReport& r) {
    nlohmann::json j;
    j["label"] = r.label;
    j["n_test"] = r.n_test;
    if (r.point) {
        j["mae"] = r.point->mae;
        j["rmse"] = r.point->rmse;
        j["mape"] = r.point->mape;
        j["pearson_r"] = r.point->pearson_r;
    } else {
        j["mae"] = j["rmse"] = j["mape"] = j["pearson_r"] = nullptr;
    }
    j["levels"] = nlohmann::json::array();
    for (const auto& l : r.levels) {
        j["levels"].push_back({{"alpha", l.alpha},
                               {"cp_radius", number_or_inf(l.cp_radius)},
                               {"empirical_coverage", l.empirical_coverage},
                               {"avg_width", number_or_inf(l.avg_width)}});
    }
    j["error_width_correlation"] =
        r.error_width_correlation ? nlohmann::json(*r.error_width_correlation) : nlohmann::json();
    return j;
}

EvaluationReport report_from_json(const nlohmann::json& j) {
    try {
        EvaluationReport r;
        r.label = j.value("label", std::string{});
        r.n_test = j.value("n_test", std::size_t{0});
        if (j.contains("mae") && !j.at("mae").is_null()) {
            r.point = PointMetrics{j.at("mae").get<double>(), j.at("rmse").get<double>(),
                                   j.at("mape").get<double>(), j.at("pearson_r").get<double>()};
        }
        for (const auto& l : j.at("levels")) {
            r.levels.push_back({l.at("alpha").get<double>(), read_number_or_inf(l.at("cp_radius")),
                                l.value("empirical_coverage", 0.0),
                                l.contains("avg_width") ? read_number_or_inf(l.at("avg_width")) : 0.0});
        }
        if (j.contains("error_width_correlation") && !j.at("error_width_correlation").is_null()) {
            r.error_width_correlation = j.at("error_width_correlation").get<double>();
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed report JSON: ") + e.what());
    }
}

namespace {

std::string fixed4(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return fmt::format("{:.4f}", v);
}

std::string level_header(double alpha) {
    return fmt::format("CP {:g}%", std::round((1.0 - alpha) * 1000.0) / 10.0);
}

std::string render_grid(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths(rows.front().size(), 0);
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
    }
    std::string out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::string line;
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            if (c > 0) line += " | ";
            line += fmt::format("{:<{}}", rows[r][c], widths[c]);
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + '\n';
        if (r == 0) {
            std::string rule;
            for (std::size_t c = 0; c < widths.size(); ++c) {
                if (c > 0) rule += "-|-";
                rule += std::string(widths[c], '-');
            }
            out += rule + '\n';
        }
    }
    return out;
}

/// Distinct alphas across reports, ascending (highest confidence first).
std::vector<double> all_alphas(std::span<const EvaluationReport> reports) {
    std::vector<double> alphas;
    for (const auto& r : reports) {
        for (const auto& l : r.levels) {
            if (std::find(alphas.begin(), alphas.end(), l.alpha) == alphas.end()) {
                alphas.push_back(l.alpha);
            }
        }
    }
    std::sort(alphas.begin(), alphas.end());
    return alphas;
}

const LevelMetrics* find_level(const EvaluationReport& r, double alpha) {
    for (const auto& l : r.levels) {
        if (l.alpha == alpha) return &l;
    }
    return nullptr;
}

}  // namespace

std::string render_table(std::span<const EvaluationReport> reports) {
    const auto alphas = all_alphas(reports);
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {"Model", "MAE", "R", "RMSE", "MAPE"};
    for (double a : alphas) header.push_back(level_header(a));
    rows.push_back(std::move(header));
    for (const auto& r : reports) {
        std::vector<std::string> row = {r.label};
        if (r.point) {
            for (double v : {r.point->mae, r.point->pearson_r, r.point->rmse, r.point->mape}) {
                row.push_back(fixed4(v));
            }
        } else {
            row.insert(row.end(), 4, "--");
        }
        for (double a : alphas) {
            const auto* l = find_level(r, a);
            row.push_back(l ? fixed4(l->cp_radius) : "--");
        }
        rows.push_back(std::move(row));
    }
    return render_grid(rows);
}

std::string render_coverage_table(std::span<const EvaluationReport> reports) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"Model", "Level", "Radius", "Coverage", "Avg width"});
    for (const auto& r : reports) {
        for (const auto& l : r.levels) {
            rows.push_back({r.label, fmt::format("{:g}%", std::round((1.0 - l.alpha) * 1000.0) / 10.0),
                            fixed4(l.cp_radius), fixed4(l.empirical_coverage), fixed4(l.avg_width)});
        }
    }
    return render_grid(rows);
}

std::string render_plot_data(std::span<const double> truths, std::span<const double> preds) {
    check_pair(truths, preds, "plot data");
    std::string out = "y_true,y_pred,abs_error\n";
    for (std::size_t i = 0; i < truths.size(); ++i) {
        out += io::format_double(truths[i]) + ',' + io::format_double(preds[i]) + ',' +
               io::format_double(std::abs(truths[i] - preds[i])) + '\n';
    }
    return out;
}

}  // namespace confreg::metrics
