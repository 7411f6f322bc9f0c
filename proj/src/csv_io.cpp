#include "confreg/csv_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>
#include <unordered_set>

#include <fmt/format.h>

#include "confreg/error.hpp"

namespace confreg::io {

std::string format_double(double value) {
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc{}) throw NumericalError("cannot format double");
    return std::string(buf, ptr);
}

double parse_double(std::string_view field, std::string_view context) {
    double value = 0.0;
    const char* first = field.data();
    const char* last = first + field.size();
    if (!field.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || field.empty() || !std::isfinite(value)) {
        throw ValidationError(fmt::format("{}: '{}' is not a finite number", context, field));
    }
    return value;
}

std::vector<std::string> split_csv_line(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find('"') != std::string_view::npos) {
        throw ValidationError("quoted CSV fields are not supported");
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.emplace_back(line.substr(start));
            break;
        }
        fields.emplace_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write '" + tmp.string() + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw ValidationError("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ValidationError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

namespace {

/// Non-empty, non-comment ('#') lines; the first is the header.
std::vector<std::string_view> csv_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!line.empty() && line.front() != '#') lines.push_back(line);
        start = end + 1;
    }
    if (lines.empty()) throw ValidationError("empty CSV input");
    return lines;
}

std::string where(std::size_t line_no) { return fmt::format("line {}", line_no + 1); }

}  // namespace

std::vector<PredictionRecord> parse_records_csv(std::string_view text) {
    const auto lines = csv_lines(text);
    const auto header = split_csv_line(lines[0]);
    const bool has_group = header.size() == 4;
    if (!(header.size() == 3 || has_group) || header[0] != "id" || header[1] != "y_true" ||
        header[2] != "y_pred" || (has_group && header[3] != "group_id")) {
        throw ValidationError("records CSV header must be 'id,y_true,y_pred[,group_id]'");
    }
    if (lines.size() < 2) throw ValidationError("records CSV has no data rows");

    std::vector<PredictionRecord> records;
    records.reserve(lines.size() - 1);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = split_csv_line(lines[i]);
        if (f.size() != header.size()) {
            throw ValidationError(fmt::format("{}: expected {} fields, got {}", where(i),
                                              header.size(), f.size()));
        }
        PredictionRecord r;
        r.id = f[0];
        r.y_true = parse_double(f[1], where(i));
        r.y_pred = parse_double(f[2], where(i));
        if (has_group && !f[3].empty()) r.group_id = f[3];
        validate(r);
        records.push_back(std::move(r));
    }
    return records;
}

std::string render_records_csv(const std::vector<PredictionRecord>& records) {
    bool has_group = false;
    for (const auto& r : records) has_group = has_group || r.group_id.has_value();
    std::string out = has_group ? "id,y_true,y_pred,group_id\n" : "id,y_true,y_pred\n";
    for (const auto& r : records) {
        out += r.id + ',' + format_double(r.y_true) + ',' + format_double(r.y_pred);
        if (has_group) out += ',' + r.group_id.value_or("");
        out += '\n';
    }
    return out;
}

bool looks_like_bundles_csv(std::string_view text) {
    const auto header = split_csv_line(csv_lines(text).front());
    return header.size() == 4 && header[2] == "aug_index";
}

std::vector<AugmentedPredictionBundle> parse_bundles_csv(std::string_view text) {
    const auto lines = csv_lines(text);
    const auto header = split_csv_line(lines[0]);
    if (header != std::vector<std::string>{"id", "y_true", "aug_index", "y_pred"}) {
        throw ValidationError("bundle CSV header must be 'id,y_true,aug_index,y_pred'");
    }
    if (lines.size() < 2) throw ValidationError("bundle CSV has no data rows");

    std::vector<AugmentedPredictionBundle> bundles;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = split_csv_line(lines[i]);
        if (f.size() != 4) throw ValidationError(where(i) + ": expected 4 fields");
        const double y_true = parse_double(f[1], where(i));
        unsigned long aug_index = 0;
        {
            auto [ptr, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), aug_index);
            if (ec != std::errc{} || ptr != f[2].data() + f[2].size() || f[2].empty()) {
                throw ValidationError(where(i) + ": aug_index must be a non-negative integer");
            }
        }
        const double pred = parse_double(f[3], where(i));

        if (aug_index == 0) {
            if (!seen.insert(f[0]).second) throw ValidationError(where(i) + ": duplicate bundle id '" + f[0] + "'");
            bundles.push_back({f[0], y_true, {}});
        } else if (bundles.empty() || bundles.back().id != f[0]) {
            throw ValidationError(where(i) + ": bundle '" + f[0] + "' does not start at aug_index 0");
        }
        auto& b = bundles.back();
        if (b.id != f[0] || aug_index != b.aug_preds.size()) {
            throw ValidationError(where(i) + ": rows must be grouped by id with aug_index 0..K-1");
        }
        if (b.y_true != y_true) {
            throw ValidationError(where(i) + ": y_true differs within bundle '" + b.id + "'");
        }
        b.aug_preds.push_back(pred);
    }
    uniform_augmentation_count(bundles);
    return bundles;
}

std::string render_bundles_csv(const std::vector<AugmentedPredictionBundle>& bundles) {
    std::string out = "id,y_true,aug_index,y_pred\n";
    for (const auto& b : bundles) {
        for (std::size_t k = 0; k < b.aug_preds.size(); ++k) {
            out += fmt::format("{},{},{},{}\n", b.id, format_double(b.y_true), k,
                               format_double(b.aug_preds[k]));
        }
    }
    return out;
}

FeatureTable parse_feature_csv(std::string_view text) {
    const auto lines = csv_lines(text);
    const auto header = split_csv_line(lines[0]);
    if (header.size() < 3 || header[0] != "id" || header[1] != "y_true") {
        throw ValidationError("feature CSV header must be 'id,y_true,<feature>...'");
    }
    if (lines.size() < 2) throw ValidationError("feature CSV has no data rows");
    FeatureTable table;
    table.feature_names.assign(header.begin() + 2, header.end());
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = split_csv_line(lines[i]);
        if (f.size() != header.size()) {
            throw ValidationError(fmt::format("{}: expected {} fields, got {}", where(i),
                                              header.size(), f.size()));
        }
        if (f[0].empty()) throw ValidationError(where(i) + ": empty id");
        table.ids.push_back(f[0]);
        table.targets.push_back(parse_double(f[1], where(i)));
        for (std::size_t c = 2; c < f.size(); ++c) {
            table.features.push_back(parse_double(f[c], where(i)));
        }
    }
    return table;
}

std::string render_feature_csv(const FeatureTable& table) {
    std::string out = "id,y_true";
    for (const auto& name : table.feature_names) out += ',' + name;
    out += '\n';
    const std::size_t d = table.cols();
    for (std::size_t i = 0; i < table.rows(); ++i) {
        out += table.ids[i] + ',' + format_double(table.targets[i]);
        for (std::size_t c = 0; c < d; ++c) out += ',' + format_double(table.features[i * d + c]);
        out += '\n';
    }
    return out;
}

}  // namespace confreg::io
