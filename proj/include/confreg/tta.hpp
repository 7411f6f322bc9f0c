#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "confreg/conformal.hpp"
#include "confreg/types.hpp"

namespace confreg {

enum class TtaKind {
    none,         ///< plain split CP on single predictions
    traditional,  ///< average augmentations, then conformalize the averages
    multi_sample  ///< conformalize every augmented prediction as its own sample
};

std::string_view tta_kind_name(TtaKind kind);
/// Accepts the CLI spellings none|traditional|multi as well as the long names.
TtaKind parse_tta_kind(std::string_view name);

struct TtaStrategy {
    TtaKind kind = TtaKind::traditional;
    std::size_t k_augment = 1;
};

/// Arithmetic mean of the augmented predictions.
double aggregate_point(const AugmentedPredictionBundle& bundle);

ConformalCalibrator calibrate_traditional(std::span<const AugmentedPredictionBundle> calib,
                                          double alpha,
                                          ScoreKind kind = ScoreKind::absolute_residual);

/// Pools N*K residuals. For K > 1 the pooled scores are correlated within a
/// case, so the calibrator is flagged as not exchangeable.
ConformalCalibrator calibrate_multi_sample(std::span<const AugmentedPredictionBundle> calib,
                                           double alpha,
                                           ScoreKind kind = ScoreKind::absolute_residual);

/// The score multiset used by calibrate_multi_sample, bundle-major order.
std::vector<double> multi_sample_scores(std::span<const AugmentedPredictionBundle> calib,
                                        ScoreKind kind = ScoreKind::absolute_residual);

/// Dispatches on strategy.kind. `none` requires K = 1.
ConformalCalibrator calibrate_with_strategy(std::span<const AugmentedPredictionBundle> calib,
                                            double alpha, const TtaStrategy& strategy,
                                            ScoreKind kind = ScoreKind::absolute_residual);

/// Interval centred on the augmentation mean for every strategy.
PredictionInterval predict_with_strategy(const ConformalCalibrator& calibrator,
                                         const TtaStrategy& strategy,
                                         const AugmentedPredictionBundle& test_bundle);

}  // namespace confreg
