#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "confreg/conformal.hpp"
#include "confreg/core.hpp"
#include "confreg/csv_io.hpp"
#include "confreg/error.hpp"
#include "confreg/metrics.hpp"
#include "confreg/synthlab.hpp"
#include "confreg/trainer.hpp"
#include "confreg/tta.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;

namespace confreg::cli {

namespace {

using nlohmann::json;

json parse_json(std::string_view text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(what + " is not valid JSON: " + e.what());
    }
}

std::string manifest_comment(const RunManifest& m) { return "# manifest: " + m.hash() + '\n'; }

fs::path sidecar(const fs::path& output) {
    fs::path p = output;
    p += ".manifest.json";
    return p;
}

/// Records or bundles, whichever layout the file uses; records become K = 1 bundles.
std::vector<AugmentedPredictionBundle> read_predictions(std::string_view text) {
    if (io::looks_like_bundles_csv(text)) return io::parse_bundles_csv(text);
    std::vector<AugmentedPredictionBundle> bundles;
    for (const auto& r : io::parse_records_csv(text)) bundles.push_back(as_bundle(r));
    return bundles;
}

std::vector<double> parse_number_list(const std::string& text, std::size_t expected,
                                      const char* what) {
    std::vector<double> out;
    for (const auto& field : io::split_csv_line(text)) out.push_back(io::parse_double(field, what));
    if (out.size() != expected) {
        throw ValidationError(fmt::format("{}: expected {} comma-separated numbers", what, expected));
    }
    return out;
}

// ---------------------------------------------------------------------------

struct SplitOptions {
    std::string input;
    std::string out_dir;
    std::string ratios = "0.7,0.1,0.1,0.1";
    std::uint64_t seed = 42;
    bool group_aware = false;
    bool no_group_aware = false;
};

int cmd_split(const SplitOptions& o, std::ostream& out) {
    RunManifest manifest("split");
    const auto text = manifest.add_input(o.input);
    const auto records = io::parse_records_csv(text);

    SplitSpec spec;
    const auto r = parse_number_list(o.ratios, 4, "--ratios");
    std::copy(r.begin(), r.end(), spec.ratios.begin());
    spec.seed = o.seed;
    if (o.group_aware && o.no_group_aware) {
        throw ValidationError("--group-aware and --no-group-aware are mutually exclusive");
    }
    const bool any_group = std::any_of(records.begin(), records.end(),
                                       [](const auto& rec) { return rec.group_id.has_value(); });
    spec.group_aware = o.no_group_aware ? false : (o.group_aware || any_group);
    spec.validate();

    const auto result = split_dataset(records, spec);

    manifest.set_seed(spec.seed);
    manifest.set_config({{"ratios", spec.ratios}, {"group_aware", spec.group_aware}});
    const fs::path dir(o.out_dir);
    fs::create_directories(dir);
    for (Partition p : kAllPartitions) manifest.add_output(dir / (std::string(partition_name(p)) + ".csv"));

    for (Partition p : kAllPartitions) {
        std::vector<PredictionRecord> part;
        for (std::size_t i : result[p]) part.push_back(records[i]);
        const auto path = dir / (std::string(partition_name(p)) + ".csv");
        io::write_file_atomic(path, manifest_comment(manifest) + io::render_records_csv(part));
        out << fmt::format("{:<6} {:>6} records -> {}\n", partition_name(p), part.size(), path.string());
    }
    manifest.write(dir / "manifest.json");
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string train;
    std::string val;
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_model;
    std::string log;
};

int cmd_train(const TrainOptions& o, std::ostream& out) {
    RunManifest manifest("train");
    const auto train_table = io::parse_feature_csv(manifest.add_input(o.train));
    const auto val_table = io::parse_feature_csv(manifest.add_input(o.val));
    if (train_table.feature_names != val_table.feature_names) {
        throw ValidationError("training and validation files have different feature columns");
    }
    trainer::TrainConfig config;
    if (!o.config.empty()) {
        config = trainer::config_from_json(parse_json(manifest.add_input(o.config), o.config));
    }
    if (o.seed) config.seed = *o.seed;
    config.validate();

    const trainer::FeatureMatrix x(train_table.features, train_table.rows(), train_table.cols());
    const trainer::FeatureMatrix xv(val_table.features, val_table.rows(), val_table.cols());
    const auto result = trainer::train(x, train_table.targets, xv, val_table.targets, config);

    const fs::path model_path(o.out_model);
    const fs::path log_path = o.log.empty() ? fs::path(o.out_model + ".log.jsonl") : fs::path(o.log);
    manifest.set_seed(config.seed);
    manifest.set_config(trainer::to_json(config));
    manifest.add_output(model_path);
    manifest.add_output(log_path);

    json model_json = {{"manifest_hash", manifest.hash()},
                       {"feature_names", train_table.feature_names},
                       {"model", trainer::to_json(result.model)},
                       {"best_val_pearson_r", result.best_val_r},
                       {"best_epoch", result.best_epoch},
                       {"epochs_run", result.log.size()},
                       {"stopped_early", result.stopped_early}};
    io::write_file_atomic(model_path, model_json.dump(2) + '\n');
    io::write_file_atomic(log_path, trainer::render_log_jsonl(result.log));
    manifest.write(sidecar(model_path));
    out << fmt::format("epochs run: {}  best epoch: {}  best validation r: {:.6f}\n",
                       result.log.size(), result.best_epoch, result.best_val_r);
    return kOk;
}

// ---------------------------------------------------------------------------

struct CalibrateOptions {
    std::string input;
    std::vector<double> alphas = {0.1, 0.05, 0.01};
    std::string tta = "none";
    std::string score = "abs";
    std::string out;
};

int cmd_calibrate(const CalibrateOptions& o, std::ostream& out) {
    RunManifest manifest("calibrate");
    const auto text = manifest.add_input(o.input);
    const auto bundles = read_predictions(text);
    const std::size_t k = uniform_augmentation_count(bundles);
    const TtaStrategy strategy{parse_tta_kind(o.tta), k};
    const ScoreKind kind = parse_score_kind(o.score);
    const std::string source = sha256_hex(text);

    json calibrators = json::array();
    for (double alpha : o.alphas) {
        const auto c = calibrate_with_strategy(bundles, alpha, strategy, kind).with_provenance(source);
        calibrators.push_back(to_json(c));
        out << fmt::format("alpha {:<6g} q_radius {:<12} n_calib {}{}\n", alpha,
                           io::format_double(c.q_radius()), c.n_calib(),
                           c.exchangeable() ? "" : "  (exchangeability: heuristic)");
    }
    manifest.set_config({{"alphas", o.alphas},
                         {"tta", std::string(tta_kind_name(strategy.kind))},
                         {"score", std::string(score_kind_name(kind))}});
    manifest.add_output(o.out);
    const json doc = {{"manifest_hash", manifest.hash()},
                      {"tta", std::string(tta_kind_name(strategy.kind))},
                      {"k_augment", k},
                      {"calibrators", calibrators}};
    io::write_file_atomic(o.out, doc.dump(2) + '\n');
    manifest.write(sidecar(o.out));
    return kOk;
}

// ---------------------------------------------------------------------------

struct PredictOptions {
    std::string calibrator;
    std::string input;
    std::string t_ref;
    std::string out;
};

int cmd_predict(const PredictOptions& o, std::ostream& out) {
    RunManifest manifest("predict");
    const json doc = parse_json(manifest.add_input(o.calibrator), o.calibrator);
    const auto bundles = read_predictions(manifest.add_input(o.input));

    TtaStrategy strategy;
    std::vector<ConformalCalibrator> calibrators;
    try {
        strategy.kind = parse_tta_kind(doc.at("tta").get<std::string>());
        strategy.k_augment = doc.at("k_augment").get<std::size_t>();
        for (const auto& c : doc.at("calibrators")) calibrators.push_back(calibrator_from_json(c));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("calibrator file: ") + e.what());
    }
    if (calibrators.empty()) throw ValidationError("calibrator file holds no calibrators");

    std::optional<TScoreReference> ref;
    if (!o.t_ref.empty()) {
        const auto v = parse_number_list(o.t_ref, 2, "--t-ref");
        ref = TScoreReference{v[0], v[1]};
        ref->validate();
    }

    json config = {{"tta", std::string(tta_kind_name(strategy.kind))}};
    if (ref) config["t_ref"] = {ref->mu_ref, ref->sigma_ref};
    manifest.set_config(config);
    manifest.add_output(o.out);

    std::string csv = manifest_comment(manifest);
    csv += ref ? "id,alpha,center,lower,upper,who_categories\n" : "id,alpha,center,lower,upper\n";
    for (const auto& b : bundles) {
        for (const auto& c : calibrators) {
            const auto iv = predict_with_strategy(c, strategy, b);
            csv += fmt::format("{},{},{},{},{}", b.id, io::format_double(c.alpha()),
                               io::format_double(iv.center), io::format_double(iv.lower),
                               io::format_double(iv.upper));
            if (ref) {
                std::string cats;
                for (auto cat : who_category_set(iv, *ref)) {
                    if (!cats.empty()) cats += ';';
                    cats += who_category_name(cat);
                }
                csv += ',' + cats;
            }
            csv += '\n';
        }
    }
    io::write_file_atomic(o.out, csv);
    manifest.write(sidecar(o.out));
    out << fmt::format("{} cases x {} levels -> {}\n", bundles.size(), calibrators.size(), o.out);
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvaluateOptions {
    std::string input;
    std::string intervals;
    std::string out;
    std::string table;
    std::string plot_data;
    std::string label = "model";
};

/// Intervals grouped by alpha in order of first appearance, keyed by id.
std::vector<std::pair<double, std::map<std::string, PredictionInterval>>> read_intervals(
    std::string_view text) {
    std::vector<std::pair<double, std::map<std::string, PredictionInterval>>> levels;
    bool header = true;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#' || line == "\r") continue;
        const auto f = io::split_csv_line(line);
        if (header) {
            if (f.size() < 5 || f[0] != "id" || f[1] != "alpha" || f[2] != "center" ||
                f[3] != "lower" || f[4] != "upper") {
                throw ValidationError("intervals CSV header must start with 'id,alpha,center,lower,upper'");
            }
            header = false;
            continue;
        }
        if (f.size() < 5) throw ValidationError(fmt::format("intervals line {}: too few fields", line_no));
        auto bound = [&](const std::string& s) {
            if (s == "inf") return std::numeric_limits<double>::infinity();
            if (s == "-inf") return -std::numeric_limits<double>::infinity();
            return io::parse_double(s, fmt::format("intervals line {}", line_no));
        };
        const double alpha = io::parse_double(f[1], "alpha");
        PredictionInterval iv{io::parse_double(f[2], "center"), bound(f[3]), bound(f[4]), alpha};
        auto it = std::find_if(levels.begin(), levels.end(), [&](const auto& l) { return l.first == alpha; });
        if (it == levels.end()) {
            levels.push_back({alpha, {}});
            it = std::prev(levels.end());
        }
        if (!it->second.emplace(f[0], iv).second) {
            throw ValidationError(fmt::format("intervals: duplicate id '{}' at alpha {}", f[0], alpha));
        }
    }
    if (levels.empty()) throw ValidationError("intervals file has no rows");
    return levels;
}

int cmd_evaluate(const EvaluateOptions& o, std::ostream& out) {
    RunManifest manifest("evaluate");
    const auto bundles = read_predictions(manifest.add_input(o.input));
    const auto levels = read_intervals(manifest.add_input(o.intervals));

    std::vector<double> truths, centers;
    for (const auto& b : bundles) {
        truths.push_back(b.y_true);
        centers.push_back(aggregate_point(b));
    }
    std::vector<metrics::LevelIntervals> level_intervals;
    for (const auto& [alpha, by_id] : levels) {
        if (by_id.size() != bundles.size()) {
            throw ValidationError(fmt::format("alpha {}: {} intervals for {} predictions", alpha,
                                              by_id.size(), bundles.size()));
        }
        metrics::LevelIntervals level{alpha, 0.0, {}};
        for (const auto& b : bundles) {
            const auto it = by_id.find(b.id);
            if (it == by_id.end()) {
                throw ValidationError(fmt::format("alpha {}: no interval for id '{}'", alpha, b.id));
            }
            level.intervals.push_back(it->second);
        }
        // Half the mean width; equals q_radius for constant-width intervals.
        level.cp_radius = average_interval_width(level.intervals) / 2.0;
        level_intervals.push_back(std::move(level));
    }
    const auto report = metrics::build_report_from_intervals(truths, centers, level_intervals, o.label);

    manifest.set_config({{"label", o.label}});
    manifest.add_output(o.out);
    if (!o.table.empty()) manifest.add_output(o.table);
    if (!o.plot_data.empty()) manifest.add_output(o.plot_data);

    const metrics::EvaluationReport one[] = {report};
    const std::string text = metrics::render_table(one) + '\n' + metrics::render_coverage_table(one);
    io::write_file_atomic(o.out, json{{"manifest_hash", manifest.hash()},
                                      {"report", metrics::to_json(report)}}.dump(2) + '\n');
    if (!o.table.empty()) io::write_file_atomic(o.table, manifest_comment(manifest) + text);
    if (!o.plot_data.empty()) {
        io::write_file_atomic(o.plot_data,
                              manifest_comment(manifest) + metrics::render_plot_data(truths, centers));
    }
    manifest.write(sidecar(o.out));
    out << text;
    return kOk;
}

// ---------------------------------------------------------------------------

int cmd_render(const std::vector<std::string>& files, std::ostream& out) {
    std::vector<metrics::EvaluationReport> reports;
    for (const auto& f : files) {
        const json doc = parse_json(io::read_file(f), f);
        auto add = [&](const json& j) { reports.push_back(metrics::report_from_json(j)); };
        if (doc.is_array()) {
            for (const auto& j : doc) add(j);
        } else if (doc.contains("reports")) {
            for (const auto& j : doc.at("reports")) add(j);
        } else if (doc.contains("report")) {
            add(doc.at("report"));
        } else {
            add(doc);
        }
    }
    out << metrics::render_table(reports);
    return kOk;
}

// ---------------------------------------------------------------------------

struct SimulateOptions {
    std::string scenario;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string table;
};

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
    RunManifest manifest("simulate");
    synthlab::Scenario scenario;
    if (!o.scenario.empty()) {
        scenario = synthlab::scenario_from_json(parse_json(manifest.add_input(o.scenario), o.scenario));
    }
    if (o.seed) scenario.task.seed = *o.seed;
    scenario.validate();
    if (scenario.strategies.size() < 2) {
        throw ValidationError("simulate compares strategies: list at least two");
    }

    const auto result = synthlab::run_scenario(scenario);
    manifest.set_seed(scenario.task.seed);
    manifest.set_config(synthlab::to_json(scenario));
    if (!o.out.empty()) manifest.add_output(o.out);
    if (!o.table.empty()) manifest.add_output(o.table);

    const std::string text = synthlab::render_face_off(result);
    if (!o.out.empty()) {
        json doc = synthlab::to_json(result);
        doc["manifest_hash"] = manifest.hash();
        doc["scenario"] = synthlab::to_json(scenario);
        io::write_file_atomic(o.out, doc.dump(2) + '\n');
        manifest.write(sidecar(o.out));
    }
    if (!o.table.empty()) io::write_file_atomic(o.table, manifest_comment(manifest) + text);
    out << "scenario: " << scenario.task.name << '\n' << text;
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"confreg: conformal prediction intervals for regression with test-time augmentation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolkitVersion));

    SplitOptions split_o;
    auto* split = app.add_subcommand("split", "Seeded train/val/test/calibration split of a records CSV");
    split->add_option("--input", split_o.input, "records CSV (id,y_true,y_pred[,group_id])")->required();
    split->add_option("--out-dir", split_o.out_dir, "directory for the four partition files")->required();
    split->add_option("--ratios", split_o.ratios, "train,val,test,calib fractions")->capture_default_str();
    split->add_option("--seed", split_o.seed, "shuffle seed")->capture_default_str();
    split->add_flag("--group-aware", split_o.group_aware, "keep each group_id in one partition (requires group_id)");
    split->add_flag("--no-group-aware", split_o.no_group_aware, "split individual records");

    TrainOptions train_o;
    auto* train = app.add_subcommand("train", "Fit the Huber-loss regressor with early stopping");
    train->add_option("--train", train_o.train, "feature CSV (id,y_true,features...)")->required();
    train->add_option("--val", train_o.val, "validation feature CSV")->required();
    train->add_option("--config", train_o.config, "JSON training config");
    train->add_option("--seed", train_o.seed, "overrides the config seed");
    train->add_option("--out-model", train_o.out_model, "model JSON output")->required();
    train->add_option("--log", train_o.log, "JSON-lines epoch log (default <model>.log.jsonl)");

    CalibrateOptions cal_o;
    auto* calibrate = app.add_subcommand("calibrate", "Fit conformal radii on a calibration set");
    calibrate->add_option("--input", cal_o.input, "records or bundle CSV")->required();
    calibrate->add_option("--alpha", cal_o.alphas, "significance levels")->capture_default_str();
    calibrate->add_option("--tta", cal_o.tta, "none|traditional|multi")->capture_default_str();
    calibrate->add_option("--score", cal_o.score, "abs|normalized")->capture_default_str();
    calibrate->add_option("--out", cal_o.out, "calibrator JSON output")->required();

    PredictOptions pred_o;
    auto* predict = app.add_subcommand("predict", "Build intervals for new predictions");
    predict->add_option("--calibrator", pred_o.calibrator, "calibrator JSON")->required();
    predict->add_option("--input", pred_o.input, "records or bundle CSV")->required();
    predict->add_option("--t-ref", pred_o.t_ref, "MU,SIGMA for WHO category sets");
    predict->add_option("--out", pred_o.out, "intervals CSV output")->required();

    EvaluateOptions eval_o;
    auto* evaluate = app.add_subcommand("evaluate", "Point and interval metrics for a test set");
    evaluate->add_option("--input", eval_o.input, "records or bundle CSV with truths")->required();
    evaluate->add_option("--intervals", eval_o.intervals, "intervals CSV from predict")->required();
    evaluate->add_option("--out", eval_o.out, "report JSON output")->required();
    evaluate->add_option("--table", eval_o.table, "also write the text table here");
    evaluate->add_option("--emit-plot-data", eval_o.plot_data, "y_true,y_pred,abs_error CSV");
    evaluate->add_option("--label", eval_o.label, "model name in the table")->capture_default_str();

    std::vector<std::string> render_files;
    auto* render = app.add_subcommand("render", "Render report JSON files as a text table");
    render->add_option("reports", render_files, "report JSON files")->required();

    SimulateOptions sim_o;
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo coverage study and strategy face-off");
    simulate->add_option("--scenario", sim_o.scenario, "scenario JSON (built-in default when omitted)");
    simulate->add_option("--seed", sim_o.seed, "overrides the scenario seed");
    simulate->add_option("--out", sim_o.out, "results JSON output");
    simulate->add_option("--table", sim_o.table, "also write the text table here");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kValidationError;
    }

    try {
        if (split->parsed()) return cmd_split(split_o, out);
        if (train->parsed()) return cmd_train(train_o, out);
        if (calibrate->parsed()) return cmd_calibrate(cal_o, out);
        if (predict->parsed()) return cmd_predict(pred_o, out);
        if (evaluate->parsed()) return cmd_evaluate(eval_o, out);
        if (render->parsed()) return cmd_render(render_files, out);
        if (simulate->parsed()) return cmd_simulate(sim_o, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kValidationError;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumericalError;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kValidationError;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kNumericalError;
    }
    return kValidationError;
}

}  // namespace confreg::cli
