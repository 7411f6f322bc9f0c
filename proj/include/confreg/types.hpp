#pragma once

#include <optional>
#include <string>
#include <vector>

namespace confreg {

/// One calibration or test case with a single point prediction.
struct PredictionRecord {
    std::string id;
    double y_true = 0.0;
    double y_pred = 0.0;
    std::optional<std::string> group_id;
    friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// One case with K per-augmentation predictions (multi-sample TTA input).
struct AugmentedPredictionBundle {
    std::string id;
    double y_true = 0.0;
    std::vector<double> aug_preds;
    friend bool operator==(const AugmentedPredictionBundle&, const AugmentedPredictionBundle&) = default;
};

/// Closed symmetric interval [center - radius, center + radius].
struct PredictionInterval {
    double center = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double alpha = 0.0;

    double width() const noexcept { return upper - lower; }
    bool contains(double y) const noexcept { return lower <= y && y <= upper; }

    friend bool operator==(const PredictionInterval&, const PredictionInterval&) = default;
};

/// Throws ValidationError unless the record satisfies its invariants.
void validate(const PredictionRecord& record);
void validate(const AugmentedPredictionBundle& bundle);

/// Validates every bundle and checks that K is identical across all of them.
/// Returns K.
std::size_t uniform_augmentation_count(const std::vector<AugmentedPredictionBundle>& bundles);

/// A bundle with the single prediction of `record` (K = 1).
AugmentedPredictionBundle as_bundle(const PredictionRecord& record);

}  // namespace confreg
