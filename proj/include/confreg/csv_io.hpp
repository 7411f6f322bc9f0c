#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "confreg/types.hpp"

namespace confreg::io {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Strict decimal parse: the whole field must be consumed and the result finite.
double parse_double(std::string_view field, std::string_view context);

/// Splits one CSV line on commas. Quoted fields are rejected.
std::vector<std::string> split_csv_line(std::string_view line);

std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Readers skip blank lines and lines starting with '#'.

// `id,y_true,y_pred[,group_id]`
std::vector<PredictionRecord> parse_records_csv(std::string_view text);
std::string render_records_csv(const std::vector<PredictionRecord>& records);

// `id,y_true,aug_index,y_pred`, rows grouped by id, aug_index 0..K-1.
std::vector<AugmentedPredictionBundle> parse_bundles_csv(std::string_view text);
std::string render_bundles_csv(const std::vector<AugmentedPredictionBundle>& bundles);

/// True when the header line is the bundle layout.
bool looks_like_bundles_csv(std::string_view text);

/// Training table: `id,y_true,<feature_1>,...,<feature_D>`.
struct FeatureTable {
    std::vector<std::string> ids;
    std::vector<std::string> feature_names;
    std::vector<double> targets;
    /// Row-major N x D.
    std::vector<double> features;

    std::size_t rows() const noexcept { return targets.size(); }
    std::size_t cols() const noexcept { return feature_names.size(); }
};

FeatureTable parse_feature_csv(std::string_view text);
std::string render_feature_csv(const FeatureTable& table);

}  // namespace confreg::io
