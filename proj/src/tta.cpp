#include "confreg/tta.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "confreg/error.hpp"

namespace confreg {

std::string_view tta_kind_name(TtaKind kind) {
    switch (kind) {
        case TtaKind::none: return "none";
        case TtaKind::traditional: return "traditional";
        case TtaKind::multi_sample: return "multi";
    }
    return "?";
}

TtaKind parse_tta_kind(std::string_view name) {
    if (name == "none") return TtaKind::none;
    if (name == "traditional" || name == "traditional_average_then_conformalize") {
        return TtaKind::traditional;
    }
    if (name == "multi" || name == "multi_sample" || name == "multi_sample_conformalize_each") {
        return TtaKind::multi_sample;
    }
    throw ValidationError(fmt::format("unknown TTA mode '{}' (expected none|traditional|multi)", name));
}

double aggregate_point(const AugmentedPredictionBundle& bundle) {
    validate(bundle);
    const double sum = std::accumulate(bundle.aug_preds.begin(), bundle.aug_preds.end(), 0.0);
    return sum / static_cast<double>(bundle.aug_preds.size());
}

namespace {

std::size_t checked_k(std::span<const AugmentedPredictionBundle> bundles) {
    return uniform_augmentation_count({bundles.begin(), bundles.end()});
}

double case_scale(const AugmentedPredictionBundle& b, ScoreKind kind) {
    return kind == ScoreKind::normalized_residual
               ? std::max(augmentation_spread(b.aug_preds), kSpreadFloor)
               : 1.0;
}

}  // namespace

ConformalCalibrator calibrate_traditional(std::span<const AugmentedPredictionBundle> calib,
                                          double alpha, ScoreKind kind) {
    checked_k(calib);
    std::vector<double> scores;
    scores.reserve(calib.size());
    for (const auto& b : calib) {
        scores.push_back(std::abs(b.y_true - aggregate_point(b)) / case_scale(b, kind));
    }
    return fit_calibrator(scores, alpha, kind);
}

std::vector<double> multi_sample_scores(std::span<const AugmentedPredictionBundle> calib,
                                        ScoreKind kind) {
    const std::size_t k = checked_k(calib);
    std::vector<double> scores;
    scores.reserve(calib.size() * k);
    for (const auto& b : calib) {
        const double scale = case_scale(b, kind);
        for (double p : b.aug_preds) scores.push_back(std::abs(b.y_true - p) / scale);
    }
    return scores;
}

ConformalCalibrator calibrate_multi_sample(std::span<const AugmentedPredictionBundle> calib,
                                           double alpha, ScoreKind kind) {
    const auto scores = multi_sample_scores(calib, kind);
    const auto fitted = fit_calibrator(scores, alpha, kind);
    const bool pooled = scores.size() > calib.size();
    return ConformalCalibrator(fitted.alpha(), fitted.q_radius(), fitted.n_calib(), kind,
                               fitted.created_from(), !pooled);
}

ConformalCalibrator calibrate_with_strategy(std::span<const AugmentedPredictionBundle> calib,
                                            double alpha, const TtaStrategy& strategy,
                                            ScoreKind kind) {
    switch (strategy.kind) {
        case TtaKind::none:
            if (checked_k(calib) != 1) {
                throw ValidationError("TTA mode 'none' needs single-prediction input (K = 1)");
            }
            return calibrate_traditional(calib, alpha, kind);
        case TtaKind::traditional: return calibrate_traditional(calib, alpha, kind);
        case TtaKind::multi_sample: return calibrate_multi_sample(calib, alpha, kind);
    }
    throw ValidationError("unknown TTA strategy");
}

PredictionInterval predict_with_strategy(const ConformalCalibrator& calibrator,
                                         const TtaStrategy& strategy,
                                         const AugmentedPredictionBundle& test_bundle) {
    validate(test_bundle);
    if (test_bundle.aug_preds.size() != strategy.k_augment) {
        throw ValidationError(fmt::format("bundle '{}' has K = {}, strategy expects {}",
                                          test_bundle.id, test_bundle.aug_preds.size(),
                                          strategy.k_augment));
    }
    return predict_interval(calibrator, aggregate_point(test_bundle),
                            case_scale(test_bundle, calibrator.score_kind()));
}

}  // namespace confreg
