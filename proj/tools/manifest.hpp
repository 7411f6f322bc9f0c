#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace confreg::cli {

inline constexpr std::string_view kToolkitVersion = "0.1.0";

std::string sha256_hex(std::string_view data);

/// Provenance of one CLI run. The hash covers everything except the timestamp,
/// so reruns with identical inputs produce identical hashes.
class RunManifest {
public:
    explicit RunManifest(std::string subcommand);

    /// Records the path and content hash; returns the file contents.
    std::string add_input(const std::filesystem::path& path);
    void add_input_hash(const std::string& label, const std::string& sha256);
    void set_config(nlohmann::json config) { config_ = std::move(config); }
    void set_seed(std::uint64_t seed) { seed_ = seed; }
    void add_output(const std::filesystem::path& path) { outputs_.push_back(path.string()); }

    nlohmann::json hashed_body() const;
    std::string hash() const;
    /// Body plus manifest_hash and timestamp.
    nlohmann::json to_json(std::string_view timestamp) const;

    /// Writes `<path>` atomically with the current UTC time as timestamp.
    void write(const std::filesystem::path& path) const;

private:
    std::string subcommand_;
    nlohmann::json inputs_ = nlohmann::json::array();
    nlohmann::json config_ = nlohmann::json::object();
    std::optional<std::uint64_t> seed_;
    std::vector<std::string> outputs_;
};

std::string utc_timestamp();

}  // namespace confreg::cli
