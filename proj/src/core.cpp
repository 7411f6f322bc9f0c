#include "confreg/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "confreg/error.hpp"
#include "confreg/rng.hpp"

namespace confreg {

std::string_view partition_name(Partition p) {
    switch (p) {
        case Partition::train: return "train";
        case Partition::validation: return "val";
        case Partition::test: return "test";
        case Partition::calibration: return "calib";
    }
    return "?";
}

void SplitSpec::validate() const {
    double total = 0.0;
    for (double r : ratios) {
        if (!std::isfinite(r) || r < 0.0) throw ValidationError("split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ValidationError(fmt::format("split ratios sum to {}, expected 1", total));
    }
}

std::array<std::size_t, 4> partition_sizes(std::size_t n_units, const std::array<double, 4>& ratios) {
    std::array<std::size_t, 4> sizes{};
    std::array<double, 4> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        const double exact = ratios[i] * static_cast<double>(n_units);
        // 1e-9 absorbs representation error such as 0.7 * 10 = 6.9999...
        const double whole = std::floor(exact + 1e-9);
        sizes[i] = static_cast<std::size_t>(whole);
        remainder[i] = std::max(0.0, exact - whole);
        assigned += sizes[i];
    }
    std::array<std::size_t, 4> order = {0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < n_units; i = (i + 1) % 4) {
        ++sizes[order[i]];
        ++assigned;
    }
    for (std::size_t i = 4; assigned > n_units; ) {
        i = (i == 0) ? 3 : i - 1;
        if (sizes[order[i]] > 0) {
            --sizes[order[i]];
            --assigned;
        }
    }
    return sizes;
}

SplitResult split_dataset(std::span<const std::optional<std::string>> group_ids,
                          const SplitSpec& spec) {
    spec.validate();
    if (group_ids.empty()) throw ValidationError("cannot split an empty dataset");

    // Each unit is a list of record indices that must land together.
    std::vector<std::vector<std::size_t>> units;
    if (spec.group_aware) {
        std::map<std::string, std::size_t> unit_of_group;
        for (std::size_t i = 0; i < group_ids.size(); ++i) {
            if (!group_ids[i] || group_ids[i]->empty()) {
                throw ValidationError(
                    fmt::format("group-aware split: record {} has no group_id", i));
            }
            auto [it, inserted] = unit_of_group.try_emplace(*group_ids[i], units.size());
            if (inserted) units.emplace_back();
            units[it->second].push_back(i);
        }
    } else {
        units.resize(group_ids.size());
        for (std::size_t i = 0; i < group_ids.size(); ++i) units[i].push_back(i);
    }

    std::vector<std::size_t> order(units.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(spec.seed, /*stream=*/0x5eed5917);
    shuffle_in_place(order, rng);

    const auto sizes = partition_sizes(units.size(), spec.ratios);
    SplitResult result;
    std::size_t cursor = 0;
    for (std::size_t p = 0; p < 4; ++p) {
        for (std::size_t n = 0; n < sizes[p]; ++n, ++cursor) {
            const auto& members = units[order[cursor]];
            result.indices[p].insert(result.indices[p].end(), members.begin(), members.end());
        }
        std::sort(result.indices[p].begin(), result.indices[p].end());
    }
    return result;
}

SplitResult split_dataset(std::span<const PredictionRecord> records, const SplitSpec& spec) {
    std::vector<std::optional<std::string>> groups;
    groups.reserve(records.size());
    for (const auto& r : records) groups.push_back(r.group_id);
    return split_dataset(groups, spec);
}

// ---------------------------------------------------------------------------

Date parse_iso_date(std::string_view text) {
    auto fail = [&]() -> Date {
        throw ValidationError(fmt::format("malformed date '{}', expected YYYY-MM-DD", text));
    };
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') return fail();
    auto field = [&](std::size_t pos, std::size_t len) {
        int value = 0;
        const char* first = text.data() + pos;
        const char* last = first + len;
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc{} || ptr != last) fail();
        return value;
    };
    const std::chrono::year_month_day date{std::chrono::year{field(0, 4)},
                                           std::chrono::month{static_cast<unsigned>(field(5, 2))},
                                           std::chrono::day{static_cast<unsigned>(field(8, 2))}};
    if (!date.ok()) return fail();
    return date;
}

std::string format_iso_date(Date date) {
    return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(date.year()),
                       static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
}

long days_between(Date a, Date b) {
    return static_cast<long>((std::chrono::sys_days{b} - std::chrono::sys_days{a}).count());
}

std::vector<VisitPair> pair_within_window(std::span<const DatedVisit> images,
                                          std::span<const DatedVisit> dxa, long window_days) {
    if (window_days < 0) throw ValidationError("pairing window must be non-negative");
    for (const auto& v : images) {
        if (!v.date.ok()) throw ValidationError("invalid image date for '" + v.id + "'");
    }
    for (const auto& v : dxa) {
        if (!v.date.ok()) throw ValidationError("invalid DXA date for '" + v.id + "'");
    }

    std::multimap<std::string, const DatedVisit*> dxa_by_subject;
    for (const auto& v : dxa) dxa_by_subject.emplace(v.subject, &v);

    std::vector<VisitPair> pairs;
    for (const auto& image : images) {
        const DatedVisit* best = nullptr;
        long best_gap = 0;
        auto [first, last] = dxa_by_subject.equal_range(image.subject);
        for (auto it = first; it != last; ++it) {
            const DatedVisit* candidate = it->second;
            const long gap = days_between(image.date, candidate->date);
            if (std::labs(gap) > window_days) continue;
            const bool closer = best == nullptr || std::labs(gap) < std::labs(best_gap);
            const bool tie_earlier = best != nullptr && std::labs(gap) == std::labs(best_gap) &&
                                     std::chrono::sys_days{candidate->date} <
                                         std::chrono::sys_days{best->date};
            if (closer || tie_earlier) {
                best = candidate;
                best_gap = gap;
            }
        }
        if (best != nullptr) pairs.push_back({image.id, best->id, best_gap});
    }
    return pairs;
}

// ---------------------------------------------------------------------------

void TScoreReference::validate() const {
    if (!std::isfinite(mu_ref)) throw ValidationError("T-score reference mean must be finite");
    if (!std::isfinite(sigma_ref) || sigma_ref <= 0.0) {
        throw ValidationError("T-score reference sigma must be finite and > 0");
    }
}

std::string_view who_category_name(WhoCategory c) {
    switch (c) {
        case WhoCategory::osteoporosis: return "Osteoporosis";
        case WhoCategory::osteopenia: return "Osteopenia";
        case WhoCategory::normal: return "Normal";
    }
    return "?";
}

double t_score(double bmd, const TScoreReference& ref) {
    ref.validate();
    if (!std::isfinite(bmd)) throw ValidationError("T-score of a non-finite BMD");
    return (bmd - ref.mu_ref) / ref.sigma_ref;
}

namespace {

WhoCategory category_of(double t) {
    if (t <= -2.5) return WhoCategory::osteoporosis;
    if (t < -1.0) return WhoCategory::osteopenia;
    return WhoCategory::normal;
}

}  // namespace

WhoCategory who_category(double t) {
    if (!std::isfinite(t)) throw ValidationError("WHO category of a non-finite T-score");
    return category_of(t);
}

std::set<WhoCategory> who_category_set(const PredictionInterval& interval,
                                       const TScoreReference& ref) {
    ref.validate();
    if (std::isnan(interval.lower) || std::isnan(interval.upper) || interval.lower > interval.upper) {
        throw ValidationError("interval bounds out of order");
    }
    // t is increasing in BMD and the category is a monotone step function of t,
    // so the intersected bands are exactly those between the endpoint categories.
    const double t_lo = (interval.lower - ref.mu_ref) / ref.sigma_ref;
    const double t_hi = (interval.upper - ref.mu_ref) / ref.sigma_ref;
    std::set<WhoCategory> out;
    for (int c = static_cast<int>(category_of(t_lo)); c <= static_cast<int>(category_of(t_hi)); ++c) {
        out.insert(static_cast<WhoCategory>(c));
    }
    return out;
}

}  // namespace confreg
