#include "manifest.hpp"

#include <chrono>
#include <ctime>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <openssl/evp.h>

#include "confreg/csv_io.hpp"
#include "confreg/error.hpp"

namespace confreg::cli {

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericalError("SHA-256 computation failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

RunManifest::RunManifest(std::string subcommand) : subcommand_(std::move(subcommand)) {}

std::string RunManifest::add_input(const std::filesystem::path& path) {
    std::string contents = io::read_file(path);
    add_input_hash(path.string(), sha256_hex(contents));
    return contents;
}

void RunManifest::add_input_hash(const std::string& label, const std::string& sha256) {
    inputs_.push_back({{"path", label}, {"sha256", sha256}});
}

nlohmann::json RunManifest::hashed_body() const {
    nlohmann::json j;
    j["subcommand"] = subcommand_;
    j["inputs"] = inputs_;
    j["config"] = config_;
    j["seed"] = seed_ ? nlohmann::json(*seed_) : nlohmann::json();
    j["outputs"] = outputs_;
    j["toolkit_version"] = std::string(kToolkitVersion);
    return j;
}

std::string RunManifest::hash() const { return sha256_hex(hashed_body().dump()); }

nlohmann::json RunManifest::to_json(std::string_view timestamp) const {
    nlohmann::json j = hashed_body();
    j["manifest_hash"] = hash();
    j["timestamp"] = std::string(timestamp);
    return j;
}

void RunManifest::write(const std::filesystem::path& path) const {
    io::write_file_atomic(path, to_json(utc_timestamp()).dump(2) + '\n');
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(now));
}

}  // namespace confreg::cli
