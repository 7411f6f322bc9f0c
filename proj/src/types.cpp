#include "confreg/types.hpp"

#include <cmath>

#include "confreg/error.hpp"

namespace confreg {

void validate(const PredictionRecord& record) {
    if (record.id.empty()) throw ValidationError("prediction record with empty id");
    if (!std::isfinite(record.y_true) || !std::isfinite(record.y_pred)) {
        throw ValidationError("non-finite value in record '" + record.id + "'");
    }
}

void validate(const AugmentedPredictionBundle& bundle) {
    if (bundle.id.empty()) throw ValidationError("bundle with empty id");
    if (!std::isfinite(bundle.y_true)) {
        throw ValidationError("non-finite y_true in bundle '" + bundle.id + "'");
    }
    if (bundle.aug_preds.empty()) {
        throw ValidationError("bundle '" + bundle.id + "' has no augmented predictions");
    }
    for (double p : bundle.aug_preds) {
        if (!std::isfinite(p)) {
            throw ValidationError("non-finite prediction in bundle '" + bundle.id + "'");
        }
    }
}

std::size_t uniform_augmentation_count(const std::vector<AugmentedPredictionBundle>& bundles) {
    if (bundles.empty()) throw ValidationError("no bundles");
    const std::size_t k = bundles.front().aug_preds.size();
    for (const auto& b : bundles) {
        validate(b);
        if (b.aug_preds.size() != k) {
            throw ValidationError("inconsistent augmentation count: bundle '" + b.id + "' has " +
                                  std::to_string(b.aug_preds.size()) + ", expected " +
                                  std::to_string(k));
        }
    }
    return k;
}

AugmentedPredictionBundle as_bundle(const PredictionRecord& record) {
    return {record.id, record.y_true, {record.y_pred}};
}

}  // namespace confreg
