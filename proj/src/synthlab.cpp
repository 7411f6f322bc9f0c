#include "confreg/synthlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <optional>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "confreg/error.hpp"

namespace confreg::synthlab {

namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kValStream = 2;
constexpr std::uint64_t kCalibStream = 3;
constexpr std::uint64_t kTestStream = 4;
constexpr std::uint64_t kWeightStream = 5;
constexpr std::uint64_t kTrialRoot = 6;

std::string_view noise_name(NoiseModel n) {
    switch (n) {
        case NoiseModel::gaussian: return "gaussian";
        case NoiseModel::heteroscedastic: return "heteroscedastic";
        case NoiseModel::heavy_tail: return "heavy_tail";
    }
    return "?";
}

NoiseModel parse_noise(std::string_view s) {
    if (s == "gaussian") return NoiseModel::gaussian;
    if (s == "heteroscedastic") return NoiseModel::heteroscedastic;
    if (s == "heavy_tail") return NoiseModel::heavy_tail;
    throw ValidationError(fmt::format("unknown noise model '{}'", s));
}

std::string_view jitter_name(JitterMode j) {
    return j == JitterMode::additive ? "additive" : "multiplicative";
}

JitterMode parse_jitter(std::string_view s) {
    if (s == "additive") return JitterMode::additive;
    if (s == "multiplicative") return JitterMode::multiplicative;
    throw ValidationError(fmt::format("unknown jitter mode '{}'", s));
}

}  // namespace

void SyntheticTask::validate() const {
    auto require = [](bool ok, const char* msg) {
        if (!ok) throw ValidationError(std::string("synthetic task: ") + msg);
    };
    require(n_train >= 1 && n_val >= 1 && n_calib >= 1 && n_test >= 1, "all split sizes must be >= 1");
    require(dim >= 1, "dim must be >= 1");
    require(n_train > dim, "n_train must exceed dim for the least-squares fit");
    require(std::isfinite(intercept), "intercept must be finite");
    require(std::isfinite(weight_scale) && weight_scale >= 0.0, "weight_scale must be >= 0");
    require(std::isfinite(sigma) && sigma >= 0.0, "sigma must be >= 0");
    require(dof >= 1, "dof must be >= 1");
    require(std::isfinite(sigma_aug) && sigma_aug >= 0.0, "sigma_aug must be >= 0");
    require(k_augment >= 1, "k_augment must be >= 1");
}

double LinearPredictor::predict(std::span<const double> x) const {
    double out = bias;
    for (std::size_t j = 0; j < weights.size(); ++j) out += weights[j] * x[j];
    return out;
}

std::vector<double> true_weights(const SyntheticTask& task) {
    CounterRng rng(task.seed, kWeightStream);
    std::vector<double> w(task.dim);
    for (double& v : w) v = task.weight_scale * rng.normal();
    return w;
}

Split draw_split(const SyntheticTask& task, std::span<const double> weights, std::size_t n,
                 CounterRng& rng) {
    const std::size_t d = task.dim;
    Split s;
    s.features.resize(n * d);
    s.targets.resize(n);
    s.scale.assign(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        double y = task.intercept;
        for (std::size_t j = 0; j < d; ++j) {
            const double x = rng.normal();
            s.features[i * d + j] = x;
            y += weights[j] * x;
        }
        switch (task.noise) {
            case NoiseModel::gaussian: y += task.sigma * rng.normal(); break;
            case NoiseModel::heteroscedastic:
                s.scale[i] = 0.5 + std::abs(s.features[i * d]);
                y += task.sigma * s.scale[i] * rng.normal();
                break;
            case NoiseModel::heavy_tail: y += task.sigma * rng.student_t(task.dof); break;
        }
        s.targets[i] = y;
    }
    return s;
}

LinearPredictor fit_least_squares(const Split& split, std::size_t dim) {
    // Normal equations on [x, 1] with a tiny ridge, solved by Cholesky.
    const std::size_t p = dim + 1;
    const std::size_t n = split.targets.size();
    std::vector<double> a(p * p, 0.0), b(p, 0.0), row(p);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(split.features.begin() + static_cast<std::ptrdiff_t>(i * dim), dim, row.begin());
        row[dim] = 1.0;
        for (std::size_t r = 0; r < p; ++r) {
            b[r] += row[r] * split.targets[i];
            for (std::size_t c = 0; c <= r; ++c) a[r * p + c] += row[r] * row[c];
        }
    }
    for (std::size_t r = 0; r < dim; ++r) a[r * p + r] += 1e-9 * static_cast<double>(n);
    std::vector<double> l(p * p, 0.0);
    for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c <= r; ++c) {
            double sum = a[r * p + c];
            for (std::size_t k = 0; k < c; ++k) sum -= l[r * p + k] * l[c * p + k];
            if (r == c) {
                if (!(sum > 0.0)) throw NumericalError("least squares: singular design matrix");
                l[r * p + r] = std::sqrt(sum);
            } else {
                l[r * p + c] = sum / l[c * p + c];
            }
        }
    }
    std::vector<double> z(p), beta(p);
    for (std::size_t r = 0; r < p; ++r) {
        double sum = b[r];
        for (std::size_t k = 0; k < r; ++k) sum -= l[r * p + k] * z[k];
        z[r] = sum / l[r * p + r];
    }
    for (std::size_t r = p; r-- > 0;) {
        double sum = z[r];
        for (std::size_t k = r + 1; k < p; ++k) sum -= l[k * p + r] * beta[k];
        beta[r] = sum / l[r * p + r];
    }
    return {std::vector<double>(beta.begin(), beta.begin() + static_cast<std::ptrdiff_t>(dim)), beta[dim]};
}

std::vector<AugmentedPredictionBundle> make_bundles(const SyntheticTask& task, const Split& split,
                                                    const LinearPredictor& model,
                                                    std::string_view id_prefix, CounterRng& rng) {
    const std::size_t n = split.targets.size();
    const std::size_t d = task.dim;
    std::vector<AugmentedPredictionBundle> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& b = out[i];
        b.id = fmt::format("{}{}", id_prefix, i);
        b.y_true = split.targets[i];
        const double pred = model.predict(std::span(split.features).subspan(i * d, d));
        const double jitter_sd = task.sigma_aug * split.scale[i];
        b.aug_preds.resize(task.k_augment);
        for (double& p : b.aug_preds) {
            const double z = jitter_sd == 0.0 ? 0.0 : rng.normal();
            p = task.jitter == JitterMode::additive ? pred + jitter_sd * z : pred * (1.0 + jitter_sd * z);
        }
    }
    return out;
}

namespace {

LinearPredictor fitted_model(const SyntheticTask& task, std::span<const double> weights) {
    CounterRng train_rng(task.seed, kTrainStream);
    return fit_least_squares(draw_split(task, weights, task.n_train, train_rng), task.dim);
}

}  // namespace

SyntheticDataset generate(const SyntheticTask& task) {
    task.validate();
    SyntheticDataset ds;
    ds.true_weights = true_weights(task);
    CounterRng train_rng(task.seed, kTrainStream);
    CounterRng val_rng(task.seed, kValStream);
    CounterRng calib_rng(task.seed, kCalibStream);
    CounterRng test_rng(task.seed, kTestStream);
    ds.train = draw_split(task, ds.true_weights, task.n_train, train_rng);
    ds.val = draw_split(task, ds.true_weights, task.n_val, val_rng);
    ds.calib = draw_split(task, ds.true_weights, task.n_calib, calib_rng);
    ds.test = draw_split(task, ds.true_weights, task.n_test, test_rng);
    ds.model = fit_least_squares(ds.train, task.dim);
    ds.calib_bundles = make_bundles(task, ds.calib, ds.model, "calib_", calib_rng);
    ds.test_bundles = make_bundles(task, ds.test, ds.model, "test_", test_rng);
    return ds;
}

// ---------------------------------------------------------------------------

void Scenario::validate() const {
    task.validate();
    if (alphas.empty()) throw ValidationError("scenario: at least one alpha required");
    for (double a : alphas) {
        if (!(a > 0.0 && a < 1.0)) throw ValidationError("scenario: alpha outside (0, 1)");
    }
    if (strategies.empty()) throw ValidationError("scenario: at least one strategy required");
    if (n_trials < 1) throw ValidationError("scenario: n_trials must be >= 1");
}

Scenario scenario_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("scenario must be a JSON object");
    static const std::set<std::string> known = {
        "name",  "seed",      "n_train",   "n_val",  "n_calib",   "n_test",     "dim",
        "intercept", "weight_scale", "noise", "sigma", "dof", "sigma_aug", "jitter",
        "k_augment", "n_trials", "alphas", "strategies", "score"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ValidationError("scenario: unknown key '" + key + "'");
    }
    Scenario s;
    auto& t = s.task;
    try {
        t.name = j.value("name", t.name);
        t.seed = j.value("seed", t.seed);
        t.n_train = j.value("n_train", t.n_train);
        t.n_val = j.value("n_val", t.n_val);
        t.n_calib = j.value("n_calib", t.n_calib);
        t.n_test = j.value("n_test", t.n_test);
        t.dim = j.value("dim", t.dim);
        t.intercept = j.value("intercept", t.intercept);
        t.weight_scale = j.value("weight_scale", t.weight_scale);
        if (j.contains("noise")) t.noise = parse_noise(j.at("noise").get<std::string>());
        t.sigma = j.value("sigma", t.sigma);
        t.dof = j.value("dof", t.dof);
        t.sigma_aug = j.value("sigma_aug", t.sigma_aug);
        if (j.contains("jitter")) t.jitter = parse_jitter(j.at("jitter").get<std::string>());
        t.k_augment = j.value("k_augment", t.k_augment);
        s.n_trials = j.value("n_trials", s.n_trials);
        if (j.contains("alphas")) s.alphas = j.at("alphas").get<std::vector<double>>();
        if (j.contains("strategies")) {
            s.strategies.clear();
            for (const auto& name : j.at("strategies")) {
                s.strategies.push_back(parse_tta_kind(name.get<std::string>()));
            }
        }
        if (j.contains("score")) s.score = parse_score_kind(j.at("score").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("scenario: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::json to_json(const Scenario& s) {
    const auto& t = s.task;
    nlohmann::json strategies = nlohmann::json::array();
    for (auto k : s.strategies) strategies.push_back(std::string(tta_kind_name(k)));
    return {{"name", t.name},
            {"seed", t.seed},
            {"n_train", t.n_train},
            {"n_val", t.n_val},
            {"n_calib", t.n_calib},
            {"n_test", t.n_test},
            {"dim", t.dim},
            {"intercept", t.intercept},
            {"weight_scale", t.weight_scale},
            {"noise", std::string(noise_name(t.noise))},
            {"sigma", t.sigma},
            {"dof", t.dof},
            {"sigma_aug", t.sigma_aug},
            {"jitter", std::string(jitter_name(t.jitter))},
            {"k_augment", t.k_augment},
            {"n_trials", s.n_trials},
            {"alphas", s.alphas},
            {"strategies", strategies},
            {"score", std::string(score_kind_name(s.score))}};
}

// ---------------------------------------------------------------------------

std::size_t worker_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CONFREG_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) n = std::min(n, static_cast<std::size_t>(v));
    }
    return n;
}

namespace {

struct CellOutcome {
    double coverage = 0.0;
    double width = 0.0;
    std::size_t n_scores = 0;
    bool exchangeable = true;
};

struct TrialOutcome {
    /// strategies x alphas, strategy-major.
    std::vector<CellOutcome> cells;
    /// One per strategy.
    std::vector<metrics::PointMetrics> point;
    /// Error-width correlation per strategy; absent when widths are constant or unbounded.
    std::vector<std::optional<double>> error_width;
};

TrialOutcome run_trial(const SyntheticTask& task, std::span<const double> weights,
                       const LinearPredictor& model, std::span<const double> alphas,
                       std::span<const TtaKind> strategies, ScoreKind score, std::size_t trial) {
    const CounterRng trial_rng = CounterRng(task.seed, kTrialRoot).split(trial);
    CounterRng calib_rng = trial_rng.split(kCalibStream);
    CounterRng test_rng = trial_rng.split(kTestStream);
    const Split calib = draw_split(task, weights, task.n_calib, calib_rng);
    const Split test = draw_split(task, weights, task.n_test, test_rng);
    const auto calib_aug = make_bundles(task, calib, model, "c", calib_rng);
    const auto test_aug = make_bundles(task, test, model, "t", test_rng);

    auto single = [&](const Split& split, std::string_view prefix) {
        SyntheticTask plain = task;
        plain.k_augment = 1;
        plain.sigma_aug = 0.0;
        CounterRng unused(0);
        return make_bundles(plain, split, model, prefix, unused);
    };
    const auto calib_plain = single(calib, "c");
    const auto test_plain = single(test, "t");

    TrialOutcome out;
    for (TtaKind kind : strategies) {
        const bool plain = kind == TtaKind::none;
        const auto& cal = plain ? calib_plain : calib_aug;
        const auto& tst = plain ? test_plain : test_aug;
        const TtaStrategy strategy{kind, plain ? 1 : task.k_augment};

        std::vector<double> truths, centers;
        truths.reserve(tst.size());
        centers.reserve(tst.size());
        for (const auto& b : tst) {
            truths.push_back(b.y_true);
            centers.push_back(aggregate_point(b));
        }
        out.point.push_back({metrics::mae(truths, centers), metrics::rmse(truths, centers),
                             metrics::mape(truths, centers), metrics::pearson_r(truths, centers)});

        std::vector<PredictionInterval> ivs(tst.size());
        auto& ewc = out.error_width.emplace_back();
        for (double alpha : alphas) {
            const auto calibrator = calibrate_with_strategy(cal, alpha, strategy, score);
            for (std::size_t i = 0; i < tst.size(); ++i) {
                ivs[i] = predict_with_strategy(calibrator, strategy, tst[i]);
            }
            out.cells.push_back({empirical_coverage(ivs, truths), average_interval_width(ivs),
                                 calibrator.n_calib(), calibrator.exchangeable()});
            if (!ewc) ewc = metrics::error_width_correlation_if_defined(truths, ivs);
        }
    }
    return out;
}

double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double stderr_of_mean(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

FaceOffResult strategy_face_off(const SyntheticTask& task, std::span<const double> alphas,
                                std::span<const TtaKind> strategies, std::size_t n_trials,
                                ScoreKind score) {
    task.validate();
    if (n_trials < 1) throw ValidationError("face-off: n_trials must be >= 1");
    if (alphas.empty() || strategies.empty()) {
        throw ValidationError("face-off: need at least one alpha and one strategy");
    }
    for (double a : alphas) {
        if (!(a > 0.0 && a < 1.0)) throw ValidationError("face-off: alpha outside (0, 1)");
    }

    const auto weights = true_weights(task);
    const LinearPredictor model = fitted_model(task, weights);

    std::vector<TrialOutcome> trials(n_trials);
    std::vector<std::exception_ptr> errors(n_trials);
    const std::size_t n_workers = std::min(worker_threads(), n_trials);
    {
        std::vector<std::jthread> workers;
        for (std::size_t w = 0; w < n_workers; ++w) {
            workers.emplace_back([&, w] {
                for (std::size_t t = w; t < n_trials; t += n_workers) {
                    try {
                        trials[t] = run_trial(task, weights, model, alphas, strategies, score, t);
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                }
            });
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    // Reduce in trial order so the result is independent of the thread count.
    FaceOffResult result;
    std::vector<double> cov(n_trials), width(n_trials);
    for (std::size_t s = 0; s < strategies.size(); ++s) {
        metrics::EvaluationReport report;
        report.label = std::string(tta_kind_name(strategies[s]));
        report.n_test = task.n_test;
        metrics::PointMetrics pm;
        for (const auto& tr : trials) {
            pm.mae += tr.point[s].mae;
            pm.rmse += tr.point[s].rmse;
            pm.mape += tr.point[s].mape;
            pm.pearson_r += tr.point[s].pearson_r;
        }
        const double nt = static_cast<double>(n_trials);
        report.point = metrics::PointMetrics{pm.mae / nt, pm.rmse / nt, pm.mape / nt, pm.pearson_r / nt};
        if (std::all_of(trials.begin(), trials.end(), [&](const auto& tr) { return tr.error_width[s].has_value(); })) {
            double sum = 0.0;
            for (const auto& tr : trials) sum += *tr.error_width[s];
            report.error_width_correlation = sum / nt;
        }

        for (std::size_t a = 0; a < alphas.size(); ++a) {
            const std::size_t cell = s * alphas.size() + a;
            bool exchangeable = true;
            for (std::size_t t = 0; t < n_trials; ++t) {
                cov[t] = trials[t].cells[cell].coverage;
                width[t] = trials[t].cells[cell].width;
                exchangeable = exchangeable && trials[t].cells[cell].exchangeable;
            }
            CoverageSummary summary;
            summary.mean_coverage = mean(cov);
            summary.coverage_stderr = stderr_of_mean(cov);
            summary.mean_width = std::any_of(width.begin(), width.end(),
                                             [](double w) { return std::isinf(w); })
                                     ? std::numeric_limits<double>::infinity()
                                     : mean(width);
            summary.n_trials = n_trials;
            summary.n_calib_scores = trials.front().cells[cell].n_scores;
            summary.exchangeable = exchangeable;
            result.rows.push_back({strategies[s], alphas[a], summary});
            report.levels.push_back({alphas[a], summary.mean_width / 2.0, summary.mean_coverage,
                                     summary.mean_width});
        }
        result.reports.push_back(std::move(report));
    }
    return result;
}

FaceOffResult run_scenario(const Scenario& scenario) {
    scenario.validate();
    return strategy_face_off(scenario.task, scenario.alphas, scenario.strategies, scenario.n_trials,
                             scenario.score);
}

CoverageSummary coverage_trial(const SyntheticTask& task, double alpha, TtaKind strategy,
                               std::size_t n_trials, ScoreKind score) {
    const double alphas[] = {alpha};
    const TtaKind strategies[] = {strategy};
    return strategy_face_off(task, alphas, strategies, n_trials, score).rows.front().summary;
}

namespace {

nlohmann::json number_or_inf(double v) {
    if (std::isinf(v)) return "inf";
    return v;
}

}  // namespace

nlohmann::json to_json(const FaceOffResult& result) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : result.rows) {
        rows.push_back({{"strategy", std::string(tta_kind_name(r.strategy))},
                        {"alpha", r.alpha},
                        {"mean_coverage", r.summary.mean_coverage},
                        {"coverage_stderr", r.summary.coverage_stderr},
                        {"mean_width", number_or_inf(r.summary.mean_width)},
                        {"n_trials", r.summary.n_trials},
                        {"n_calib_scores", r.summary.n_calib_scores},
                        {"exchangeability", r.summary.exchangeable ? "exact" : "heuristic"}});
    }
    nlohmann::json reports = nlohmann::json::array();
    for (const auto& rep : result.reports) reports.push_back(metrics::to_json(rep));
    return {{"rows", rows}, {"reports", reports}};
}

std::string render_face_off(const FaceOffResult& result) {
    std::string out = metrics::render_table(result.reports);
    out += '\n';
    std::string text = fmt::format("{:<12} {:>6} {:>9} {:>9} {:>9} {:>8}  {}\n", "Strategy", "Level",
                                   "Coverage", "Stderr", "Width", "Scores", "Exchangeability");
    for (const auto& r : result.rows) {
        text += fmt::format("{:<12} {:>5g}% {:>9.4f} {:>9.4f} {:>9} {:>8}  {}\n",
                            tta_kind_name(r.strategy), std::round((1.0 - r.alpha) * 1000.0) / 10.0,
                            r.summary.mean_coverage, r.summary.coverage_stderr,
                            std::isinf(r.summary.mean_width) ? std::string("inf")
                                                             : fmt::format("{:.4f}", r.summary.mean_width),
                            r.summary.n_calib_scores, r.summary.exchangeable ? "exact" : "heuristic");
    }
    return out + text;
}

}  // namespace confreg::synthlab
