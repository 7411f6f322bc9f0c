#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "confreg/types.hpp"

namespace confreg {

// ---------------------------------------------------------------------------
// Dataset splitting
// ---------------------------------------------------------------------------

enum class Partition : std::size_t { train = 0, validation = 1, test = 2, calibration = 3 };

inline constexpr std::array<Partition, 4> kAllPartitions = {
    Partition::train, Partition::validation, Partition::test, Partition::calibration};

std::string_view partition_name(Partition p);

struct SplitSpec {
    /// Fractions for train, validation, test, calibration.
    std::array<double, 4> ratios = {0.7, 0.1, 0.1, 0.1};
    std::uint64_t seed = 42;
    bool group_aware = true;

    void validate() const;
};

struct SplitResult {
    /// Record indices per partition, each sorted ascending.
    std::array<std::vector<std::size_t>, 4> indices;

    const std::vector<std::size_t>& operator[](Partition p) const {
        return indices[static_cast<std::size_t>(p)];
    }
    friend bool operator==(const SplitResult&, const SplitResult&) = default;
};

/// Assigns every record to exactly one partition. Units (records, or groups
/// when spec.group_aware) are shuffled with a seeded generator and cut into
/// consecutive blocks whose sizes follow the ratios by largest remainder.
/// `group_ids` has one entry per record; entries may be empty only when the
/// split is not group-aware.
SplitResult split_dataset(std::span<const std::optional<std::string>> group_ids,
                          const SplitSpec& spec);
SplitResult split_dataset(std::span<const PredictionRecord> records, const SplitSpec& spec);

/// Block sizes for `n_units` units under `ratios` (largest-remainder rounding,
/// ties to the earlier partition).
std::array<std::size_t, 4> partition_sizes(std::size_t n_units, const std::array<double, 4>& ratios);

// ---------------------------------------------------------------------------
// Image / DXA pairing
// ---------------------------------------------------------------------------

using Date = std::chrono::year_month_day;

/// Parses a strict ISO-8601 calendar date (YYYY-MM-DD).
Date parse_iso_date(std::string_view text);
std::string format_iso_date(Date date);
/// Signed calendar-day difference b - a.
long days_between(Date a, Date b);

struct DatedVisit {
    std::string id;
    std::string subject;
    Date date;
};

struct VisitPair {
    std::string image_id;
    std::string dxa_id;
    long day_gap = 0;

    friend bool operator==(const VisitPair&, const VisitPair&) = default;
};

/// Matches each image to the nearest-dated DXA visit of the same subject with
/// |gap| <= window_days. Equal gaps go to the earlier DXA. Output follows the
/// order of `images`; unmatched images are dropped.
std::vector<VisitPair> pair_within_window(std::span<const DatedVisit> images,
                                          std::span<const DatedVisit> dxa,
                                          long window_days = 180);

// ---------------------------------------------------------------------------
// T-scores and WHO categories
// ---------------------------------------------------------------------------

struct TScoreReference {
    double mu_ref = 0.0;
    double sigma_ref = 1.0;

    void validate() const;
};

/// Ordered from lowest to highest bone density.
enum class WhoCategory { osteoporosis = 0, osteopenia = 1, normal = 2 };

std::string_view who_category_name(WhoCategory c);

double t_score(double bmd, const TScoreReference& ref);

/// T <= -2.5 osteoporosis, -2.5 < T < -1.0 osteopenia, T >= -1.0 normal.
WhoCategory who_category(double t);

/// Every category whose T-score band meets [t(lower), t(upper)]. Infinite
/// endpoints are allowed.
std::set<WhoCategory> who_category_set(const PredictionInterval& interval,
                                       const TScoreReference& ref);

}  // namespace confreg
