#include "confreg/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "confreg/csv_io.hpp"
#include "confreg/error.hpp"

namespace confreg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ValidationError(fmt::format("alpha must lie in (0, 1), got {}", alpha));
    }
}

}  // namespace

std::string_view score_kind_name(ScoreKind kind) {
    return kind == ScoreKind::absolute_residual ? "absolute_residual" : "normalized_residual";
}

ScoreKind parse_score_kind(std::string_view name) {
    if (name == "absolute_residual" || name == "abs") return ScoreKind::absolute_residual;
    if (name == "normalized_residual" || name == "normalized") return ScoreKind::normalized_residual;
    throw ValidationError(fmt::format("unknown score kind '{}'", name));
}

ConformalCalibrator::ConformalCalibrator(double alpha, double q_radius, std::size_t n_calib,
                                         ScoreKind kind, std::string created_from,
                                         bool exchangeable)
    : alpha_(alpha),
      q_radius_(q_radius),
      n_calib_(n_calib),
      kind_(kind),
      created_from_(std::move(created_from)),
      exchangeable_(exchangeable) {
    check_alpha(alpha);
    if (std::isnan(q_radius) || q_radius < 0.0) throw ValidationError("q_radius must be >= 0");
    if (n_calib < 1) throw ValidationError("n_calib must be >= 1");
}

double ConformalCalibrator::radius(double scale) const {
    if (kind_ == ScoreKind::absolute_residual) return q_radius_;
    if (!std::isfinite(scale) || scale < 0.0) {
        throw ValidationError("normalized interval needs a finite non-negative spread");
    }
    if (std::isinf(q_radius_)) return kInf;
    return q_radius_ * std::max(scale, kSpreadFloor);
}

ConformalCalibrator ConformalCalibrator::with_provenance(std::string created_from) const {
    ConformalCalibrator copy = *this;
    copy.created_from_ = std::move(created_from);
    return copy;
}

std::vector<double> nonconformity_scores(std::span<const PredictionRecord> records) {
    if (records.empty()) throw ValidationError("nonconformity scores of an empty set");
    std::vector<double> scores;
    scores.reserve(records.size());
    for (const auto& r : records) {
        validate(r);
        scores.push_back(std::abs(r.y_true - r.y_pred));
    }
    return scores;
}

double augmentation_spread(std::span<const double> aug_preds) {
    if (aug_preds.empty()) throw ValidationError("spread of an empty bundle");
    const double n = static_cast<double>(aug_preds.size());
    const double mean = std::accumulate(aug_preds.begin(), aug_preds.end(), 0.0) / n;
    double ss = 0.0;
    for (double p : aug_preds) ss += (p - mean) * (p - mean);
    return std::sqrt(ss / n);
}

std::vector<double> normalized_scores(std::span<const AugmentedPredictionBundle> bundles) {
    if (bundles.empty()) throw ValidationError("normalized scores of an empty set");
    std::vector<double> scores;
    scores.reserve(bundles.size());
    for (const auto& b : bundles) {
        validate(b);
        const double mean = std::accumulate(b.aug_preds.begin(), b.aug_preds.end(), 0.0) /
                            static_cast<double>(b.aug_preds.size());
        const double spread = std::max(augmentation_spread(b.aug_preds), kSpreadFloor);
        scores.push_back(std::abs(b.y_true - mean) / spread);
    }
    return scores;
}

std::size_t conformal_rank(std::size_t n, double alpha) {
    check_alpha(alpha);
    const double x = static_cast<double>(n + 1) * (1.0 - alpha);
    // (n + 1)(1 - alpha) is often an exact integer in decimal (n = 19, alpha =
    // 0.05) but lands a few ulps above it in binary; snap before the ceiling.
    const double nearest = std::round(x);
    if (std::abs(x - nearest) <= 1e-12 * std::max(1.0, x)) return static_cast<std::size_t>(nearest);
    return static_cast<std::size_t>(std::ceil(x));
}

ConformalCalibrator fit_calibrator(std::span<const double> scores, double alpha, ScoreKind kind) {
    check_alpha(alpha);
    if (scores.empty()) throw ValidationError("cannot calibrate on an empty score set");
    for (double s : scores) {
        if (std::isnan(s)) throw ValidationError("NaN nonconformity score");
        if (s < 0.0) throw ValidationError("negative nonconformity score");
    }
    const std::size_t n = scores.size();
    const std::size_t k = conformal_rank(n, alpha);
    if (k > n) return ConformalCalibrator(alpha, kInf, n, kind);
    if (k == 0) return ConformalCalibrator(alpha, 0.0, n, kind);

    std::vector<double> sorted(scores.begin(), scores.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1),
                     sorted.end());
    return ConformalCalibrator(alpha, sorted[k - 1], n, kind);
}

PredictionInterval predict_interval(const ConformalCalibrator& calibrator, double y_pred,
                                    double scale) {
    if (!std::isfinite(y_pred)) throw ValidationError("prediction must be finite");
    const double r = calibrator.radius(scale);
    if (std::isinf(r)) return {y_pred, -kInf, kInf, calibrator.alpha()};
    return {y_pred, y_pred - r, y_pred + r, calibrator.alpha()};
}

double empirical_coverage(std::span<const PredictionInterval> intervals,
                          std::span<const double> truths) {
    if (intervals.size() != truths.size()) {
        throw ValidationError(fmt::format("coverage: {} intervals vs {} truths", intervals.size(),
                                          truths.size()));
    }
    if (intervals.empty()) throw ValidationError("coverage of an empty set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        if (intervals[i].contains(truths[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(intervals.size());
}

double average_interval_width(std::span<const PredictionInterval> intervals) {
    if (intervals.empty()) throw ValidationError("average width of an empty set");
    double total = 0.0;
    for (const auto& iv : intervals) {
        const double w = iv.width();
        if (std::isinf(w)) return kInf;
        total += w;
    }
    return total / static_cast<double>(intervals.size());
}

nlohmann::json to_json(const ConformalCalibrator& c) {
    nlohmann::json j;
    j["alpha"] = c.alpha();
    if (std::isinf(c.q_radius())) {
        j["q_radius"] = "inf";
    } else {
        j["q_radius"] = c.q_radius();
    }
    j["n_calib"] = c.n_calib();
    j["score_kind"] = std::string(score_kind_name(c.score_kind()));
    j["created_from"] = c.created_from();
    j["exchangeability"] = c.exchangeable() ? "exact" : "heuristic";
    return j;
}

ConformalCalibrator calibrator_from_json(const nlohmann::json& j) {
    try {
        const auto& q = j.at("q_radius");
        double q_radius = 0.0;
        if (q.is_string()) {
            if (q.get<std::string>() != "inf") throw ValidationError("q_radius string must be \"inf\"");
            q_radius = kInf;
        } else {
            q_radius = q.get<double>();
        }
        bool exchangeable = true;
        if (j.contains("exchangeability")) {
            const auto flag = j.at("exchangeability").get<std::string>();
            if (flag != "exact" && flag != "heuristic") {
                throw ValidationError("exchangeability must be \"exact\" or \"heuristic\"");
            }
            exchangeable = flag == "exact";
        }
        return ConformalCalibrator(j.at("alpha").get<double>(), q_radius,
                                   j.at("n_calib").get<std::size_t>(),
                                   parse_score_kind(j.at("score_kind").get<std::string>()),
                                   j.value("created_from", std::string{}), exchangeable);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed calibrator JSON: ") + e.what());
    }
}

}  // namespace confreg
