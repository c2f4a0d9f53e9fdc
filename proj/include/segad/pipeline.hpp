#pragma once

// End-to-end orchestration: ingest, prep, optional segmentation, windowing,
// ensemble training, evaluation and health. Every artifact records the
// effective configuration that produced it.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "segad/changefinder.hpp"
#include "segad/config.hpp"
#include "segad/data_io.hpp"
#include "segad/detectors.hpp"
#include "segad/ensemble.hpp"
#include "segad/health.hpp"
#include "segad/prep.hpp"
#include "segad/serialize.hpp"
#include "segad/tuner.hpp"
#include "segad/windowing.hpp"

namespace segad {

enum class PipelineMode { segmented, unsegmented };

inline std::string to_string(PipelineMode m) { return m == PipelineMode::segmented ? "segmented" : "unsegmented"; }

inline PipelineMode pipeline_mode_from_string(const std::string& s) {
    if (s == "segmented") return PipelineMode::segmented;
    if (s == "unsegmented") return PipelineMode::unsegmented;
    throw Error("mode must be segmented or unsegmented, got '" + s + "'");
}

inline std::string to_string(ThresholdMode m) { return m == ThresholdMode::zscore ? "zscore" : "absolute"; }

inline ThresholdMode threshold_mode_from_string(const std::string& s) {
    if (s == "zscore") return ThresholdMode::zscore;
    if (s == "absolute") return ThresholdMode::absolute;
    throw Error("threshold mode must be zscore or absolute, got '" + s + "'");
}

struct PipelineConfig {
    std::uint64_t seed = 42;
    PipelineMode mode = PipelineMode::segmented;
    std::size_t threads = 1;  // never part of the provenance

    std::string data_path;
    std::string noc_path;
    std::string timestamp_column;
    std::string output_dir = "out";

    PrepConfig prep;
    double train_fraction = 0.5;

    ChangeFinderConfig changefinder = preset_f1();
    bool tune = true;
    Objective tune_objective = Objective::f1;
    ParamGrid grid{{0.02, 0.05}, {1}, {5, 10}, {1.8, 3.0, 6.0, 10.0}};
    std::size_t tune_tolerance = 0;

    std::size_t window_len = 0;  // 0 = 30 minutes at the median cadence
    std::size_t stride = 10;
    std::size_t horizon = 0;  // 0 = window_len
    bool drop_straddling = false;

    TrainConfig rf;
    TrainConfig gbt;
    TrainConfig iforest;
    std::size_t pca_components = 2;
    std::size_t kmeans_k = 2;
    std::vector<std::string> members{"random_forest", "gbt"};
    double decision_threshold = 0.5;

    HealthConfig health;

    static const std::vector<std::string>& known_keys() {
        static const std::vector<std::string> keys{
            "seed", "mode", "threads", "data.path", "data.noc", "data.timestamp_column", "output.dir",
            "prep.near_symmetric_skew", "prep.heavy_skew", "prep.heavy_kurtosis", "prep.winsor_lo",
            "prep.winsor_hi", "prep.variance_floor", "prep.top_k", "prep.mi_bins", "prep.collinearity_threshold",
            "split.train_fraction", "changefinder.preset", "changefinder.r", "changefinder.order",
            "changefinder.smooth", "changefinder.threshold", "changefinder.min_gap", "changefinder.threshold_mode",
            "tune.enabled", "tune.objective", "tune.r", "tune.order", "tune.smooth", "tune.threshold",
            "tune.tolerance", "window.len", "window.stride", "window.horizon", "window.drop_straddling",
            "model.class_weighting", "rf.n_trees", "rf.max_depth", "rf.min_samples_leaf", "rf.max_features",
            "rf.bootstrap", "gbt.rounds", "gbt.max_depth", "gbt.learning_rate", "gbt.reg_lambda", "gbt.gamma",
            "gbt.min_samples_leaf", "iforest.n_trees", "iforest.subsample", "pca.n_components", "kmeans.k",
            "ensemble.members", "ensemble.threshold", "health.smooth_window", "health.warning_threshold",
            "health.alert_threshold"};
        return keys;
    }

    static PipelineConfig from_config(const Config& c) {
        c.check_known(known_keys());
        PipelineConfig p;
        p.seed = c.get_u64("seed", p.seed);
        p.mode = pipeline_mode_from_string(c.get("mode", to_string(p.mode)));
        p.threads = c.get_size("threads", p.threads);
        p.data_path = c.get("data.path", p.data_path);
        p.noc_path = c.get("data.noc", p.noc_path);
        p.timestamp_column = c.get("data.timestamp_column", p.timestamp_column);
        p.output_dir = c.get("output.dir", p.output_dir);

        auto& pr = p.prep;
        pr.near_symmetric_skew = c.get_double("prep.near_symmetric_skew", pr.near_symmetric_skew);
        pr.heavy_skew = c.get_double("prep.heavy_skew", pr.heavy_skew);
        pr.heavy_kurtosis = c.get_double("prep.heavy_kurtosis", pr.heavy_kurtosis);
        pr.winsor_lo = c.get_double("prep.winsor_lo", pr.winsor_lo);
        pr.winsor_hi = c.get_double("prep.winsor_hi", pr.winsor_hi);
        pr.variance_floor = c.get_double("prep.variance_floor", pr.variance_floor);
        pr.top_k = c.get_size("prep.top_k", pr.top_k);
        pr.mi_bins = c.get_size("prep.mi_bins", pr.mi_bins);
        pr.collinearity_threshold = c.get_double("prep.collinearity_threshold", pr.collinearity_threshold);
        p.train_fraction = c.get_double("split.train_fraction", p.train_fraction);
        if (!(p.train_fraction > 0.0 && p.train_fraction < 1.0)) throw Error("split.train_fraction must lie in (0, 1)");

        auto& cf = p.changefinder;
        cf = changefinder_preset(c.get("changefinder.preset", "f1"));
        cf.r = c.get_double("changefinder.r", cf.r);
        cf.order = c.get_size("changefinder.order", cf.order);
        cf.smooth = c.get_size("changefinder.smooth", cf.smooth);
        cf.threshold = c.get_double("changefinder.threshold", cf.threshold);
        cf.min_gap = c.get_size("changefinder.min_gap", cf.min_gap);
        cf.mode = threshold_mode_from_string(c.get("changefinder.threshold_mode", to_string(cf.mode)));
        cf.validate();

        p.tune = c.get_bool("tune.enabled", p.tune);
        p.tune_objective = objective_from_string(c.get("tune.objective", to_string(p.tune_objective)));
        auto doubles = [&](const std::string& key, std::vector<double> fallback) {
            if (!c.has(key)) return fallback;
            std::vector<double> out;
            for (const auto& v : c.get_list(key, {})) out.push_back(parse_double(v));
            return out;
        };
        auto sizes = [&](const std::string& key, std::vector<std::size_t> fallback) {
            if (!c.has(key)) return fallback;
            std::vector<std::size_t> out;
            for (const auto& v : c.get_list(key, {})) {
                if (!detail::all_digits(v)) throw Error("config key '" + key + "' expects integers");
                out.push_back(std::stoul(v));
            }
            return out;
        };
        p.grid.r_values = doubles("tune.r", p.grid.r_values);
        p.grid.order_values = sizes("tune.order", p.grid.order_values);
        p.grid.smooth_values = sizes("tune.smooth", p.grid.smooth_values);
        p.grid.threshold_values = doubles("tune.threshold", p.grid.threshold_values);
        p.grid.validate();
        p.tune_tolerance = c.get_size("tune.tolerance", p.tune_tolerance);

        p.window_len = c.get_size("window.len", p.window_len);
        p.stride = c.get_size("window.stride", p.stride);
        p.horizon = c.get_size("window.horizon", p.horizon);
        p.drop_straddling = c.get_bool("window.drop_straddling", p.drop_straddling);

        const auto weighting = class_weighting_from_string(c.get("model.class_weighting", "inverse_frequency"));
        p.rf.class_weighting = p.gbt.class_weighting = weighting;
        p.rf.n_trees = c.get_size("rf.n_trees", p.rf.n_trees);
        p.rf.max_depth = c.get_size("rf.max_depth", p.rf.max_depth);
        p.rf.min_samples_leaf = c.get_size("rf.min_samples_leaf", p.rf.min_samples_leaf);
        p.rf.max_features = c.get_size("rf.max_features", p.rf.max_features);
        p.rf.bootstrap = c.get_bool("rf.bootstrap", p.rf.bootstrap);
        p.gbt.gbt_rounds = c.get_size("gbt.rounds", p.gbt.gbt_rounds);
        p.gbt.gbt_max_depth = c.get_size("gbt.max_depth", p.gbt.gbt_max_depth);
        p.gbt.learning_rate = c.get_double("gbt.learning_rate", p.gbt.learning_rate);
        p.gbt.reg_lambda = c.get_double("gbt.reg_lambda", p.gbt.reg_lambda);
        p.gbt.gamma = c.get_double("gbt.gamma", p.gbt.gamma);
        p.gbt.min_samples_leaf = c.get_size("gbt.min_samples_leaf", p.gbt.min_samples_leaf);
        p.iforest.n_trees = c.get_size("iforest.n_trees", p.iforest.n_trees);
        p.iforest.iforest_subsample = c.get_size("iforest.subsample", p.iforest.iforest_subsample);
        p.pca_components = c.get_size("pca.n_components", p.pca_components);
        p.kmeans_k = c.get_size("kmeans.k", p.kmeans_k);
        p.members = c.get_list("ensemble.members", p.members);
        for (const auto& m : p.members) detector_kind_from_string(m);
        p.decision_threshold = c.get_double("ensemble.threshold", p.decision_threshold);

        p.health.smooth_window = c.get_size("health.smooth_window", p.health.smooth_window);
        p.health.warning_threshold = c.get_double("health.warning_threshold", p.health.warning_threshold);
        p.health.alert_threshold = c.get_double("health.alert_threshold", p.health.alert_threshold);
        for (auto* t : {&p.rf, &p.gbt, &p.iforest}) {
            t->threads = p.threads;
            t->validate();
        }
        return p;
    }

    /// Effective configuration, every key spelled out. Threads are omitted
    /// because they never change results.
    Config to_config() const {
        Config c;
        auto join = [](const auto& values, auto fmt) {
            std::string s;
            for (const auto& v : values) s += (s.empty() ? "" : ", ") + fmt(v);
            return s;
        };
        auto num = [](double v) { return format_double(v); };
        auto cnt = [](std::size_t v) { return std::to_string(v); };
        c.set("seed", std::to_string(seed));
        c.set("mode", to_string(mode));
        c.set("data.path", data_path);
        c.set("data.noc", noc_path);
        c.set("data.timestamp_column", timestamp_column);
        c.set("output.dir", output_dir);
        c.set("prep.near_symmetric_skew", num(prep.near_symmetric_skew));
        c.set("prep.heavy_skew", num(prep.heavy_skew));
        c.set("prep.heavy_kurtosis", num(prep.heavy_kurtosis));
        c.set("prep.winsor_lo", num(prep.winsor_lo));
        c.set("prep.winsor_hi", num(prep.winsor_hi));
        c.set("prep.variance_floor", num(prep.variance_floor));
        c.set("prep.top_k", cnt(prep.top_k));
        c.set("prep.mi_bins", cnt(prep.mi_bins));
        c.set("prep.collinearity_threshold", num(prep.collinearity_threshold));
        c.set("split.train_fraction", num(train_fraction));
        c.set("changefinder.r", num(changefinder.r));
        c.set("changefinder.order", cnt(changefinder.order));
        c.set("changefinder.smooth", cnt(changefinder.smooth));
        c.set("changefinder.threshold", num(changefinder.threshold));
        c.set("changefinder.min_gap", cnt(changefinder.min_gap));
        c.set("changefinder.threshold_mode", to_string(changefinder.mode));
        c.set("tune.enabled", tune ? "true" : "false");
        c.set("tune.objective", to_string(tune_objective));
        c.set("tune.r", join(grid.r_values, num));
        c.set("tune.order", join(grid.order_values, cnt));
        c.set("tune.smooth", join(grid.smooth_values, cnt));
        c.set("tune.threshold", join(grid.threshold_values, num));
        c.set("tune.tolerance", cnt(tune_tolerance));
        c.set("window.len", cnt(window_len));
        c.set("window.stride", cnt(stride));
        c.set("window.horizon", cnt(horizon));
        c.set("window.drop_straddling", drop_straddling ? "true" : "false");
        c.set("model.class_weighting", to_string(rf.class_weighting));
        c.set("rf.n_trees", cnt(rf.n_trees));
        c.set("rf.max_depth", cnt(rf.max_depth));
        c.set("rf.min_samples_leaf", cnt(rf.min_samples_leaf));
        c.set("rf.max_features", cnt(rf.max_features));
        c.set("rf.bootstrap", rf.bootstrap ? "true" : "false");
        c.set("gbt.rounds", cnt(gbt.gbt_rounds));
        c.set("gbt.max_depth", cnt(gbt.gbt_max_depth));
        c.set("gbt.learning_rate", num(gbt.learning_rate));
        c.set("gbt.reg_lambda", num(gbt.reg_lambda));
        c.set("gbt.gamma", num(gbt.gamma));
        c.set("gbt.min_samples_leaf", cnt(gbt.min_samples_leaf));
        c.set("iforest.n_trees", cnt(iforest.n_trees));
        c.set("iforest.subsample", cnt(iforest.iforest_subsample));
        c.set("pca.n_components", cnt(pca_components));
        c.set("kmeans.k", cnt(kmeans_k));
        c.set("ensemble.members", join(members, [](const std::string& s) { return s; }));
        c.set("ensemble.threshold", num(decision_threshold));
        c.set("health.smooth_window", cnt(health.smooth_window));
        c.set("health.warning_threshold", num(health.warning_threshold));
        c.set("health.alert_threshold", num(health.alert_threshold));
        return c;
    }
};

// ---------------------------------------------------------------------------
// Provenance
// ---------------------------------------------------------------------------

inline json provenance_json(const Config& effective) {
    json cfg = json::object();
    for (const auto& [k, v] : effective.values()) cfg[k] = v;
    return {{"config", cfg}};
}

/// Comment header for CSV artifacts: schema version, kind and the config.
inline void write_csv_provenance(std::ostream& out, const std::string& kind, const Config& effective) {
    out << "# schema_version=" << kSchemaVersion << '\n' << "# kind=" << kind << '\n';
    for (const auto& [k, v] : effective.values()) out << "# config." << k << '=' << v << '\n';
}

inline void write_json_artifact(json j, const Config& effective, const std::filesystem::path& path) {
    j["provenance"] = provenance_json(effective);
    write_json_file(j, path.string());
}

template <typename Writer>
void write_csv_artifact(const std::filesystem::path& path, const std::string& kind, const Config& effective,
                        Writer&& body) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    write_csv_provenance(out, kind, effective);
    body(out);
}

inline json changefinder_params_json(const ChangeFinderConfig& cf) {
    return {{"schema_version", kSchemaVersion},
            {"kind", "changefinder_params"},
            {"r", number_to_json(cf.r)},
            {"order", cf.order},
            {"smooth", cf.smooth},
            {"threshold", number_to_json(cf.threshold)},
            {"min_gap", cf.min_gap},
            {"threshold_mode", to_string(cf.mode)}};
}

inline ChangeFinderConfig changefinder_params_from_json(const json& j) {
    expect_artifact(j, "changefinder_params");
    ChangeFinderConfig cf;
    try {
        cf.r = number_from_json(j.at("r"));
        cf.order = j.at("order").get<std::size_t>();
        cf.smooth = j.at("smooth").get<std::size_t>();
        cf.threshold = number_from_json(j.at("threshold"));
        cf.min_gap = j.at("min_gap").get<std::size_t>();
        cf.mode = threshold_mode_from_string(j.at("threshold_mode").get<std::string>());
    } catch (const json::exception& e) {
        throw Error(std::string("malformed ChangeFinder parameters: ") + e.what());
    }
    cf.validate();
    return cf;
}

// ---------------------------------------------------------------------------
// Training helpers shared with the CLI
// ---------------------------------------------------------------------------

/// Fits one ensemble member. Each model draws from its own stream of the
/// master seed.
inline DetectorModel fit_member(const std::string& name, const Matrix& X, std::span<const int> y,
                                const PipelineConfig& p) {
    auto with_seed = [&](TrainConfig t, const char* component) {
        t.seed = derive_seed(p.seed, component);
        t.threads = p.threads;
        return t;
    };
    switch (detector_kind_from_string(name)) {
        case DetectorKind::random_forest: return fit_random_forest(X, y, with_seed(p.rf, "model/random_forest"));
        case DetectorKind::gbt: return fit_gbt(X, y, with_seed(p.gbt, "model/gbt"));
        case DetectorKind::isolation_forest:
            return fit_isolation_forest(X, with_seed(p.iforest, "model/isolation_forest"));
        case DetectorKind::pca: {
            std::vector<std::size_t> normal_rows;
            for (std::size_t i = 0; i < y.size(); ++i)
                if (y[i] == 0) normal_rows.push_back(i);
            auto model = fit_pca_detector(X.select_rows(normal_rows), p.pca_components);
            model.calibration = MinMaxCalibration::fit(model.raw_scores(X, p.threads));
            return model;
        }
        case DetectorKind::kmeans: return fit_kmeans_detector(X, p.kmeans_k, derive_seed(p.seed, "model/kmeans"));
    }
    throw Error("unknown detector kind");
}

inline EnsembleModel fit_ensemble(const WindowDataset& train, const PipelineConfig& p) {
    EnsembleModel model;
    for (const auto& name : p.members) model.members.push_back(fit_member(name, train.features, train.labels, p));
    model.validate();
    return model;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct PipelineResult {
    EvalReport report;
    HealthSeries health;
    std::optional<ChangeFinderConfig> changefinder;
    std::size_t n_change_points = 0;
    std::size_t n_train = 0, n_test = 0;
};

/// Runs one stage, prefixing any failure with the stage name.
template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw Error("stage '" + stage + "' failed: " + e.what());
    }
}

inline TimeSeriesFrame ingest(const PipelineConfig& p) {
    if (p.data_path.empty()) throw Error("data.path is not set");
    auto frame = load_csv(p.data_path, p.timestamp_column);
    if (!p.noc_path.empty()) {
        if (!std::filesystem::exists(p.noc_path)) throw Error("NoC file '" + p.noc_path + "' does not exist");
        frame = label_from_noc(std::move(frame), load_noc(p.noc_path));
    }
    if (!frame.labels) throw Error("no labels: provide data.noc or a 'normal' column");
    return frame;
}

/// Runs the pipeline on an already labelled frame and writes all artifacts to
/// `p.output_dir` (unless it is empty).
inline PipelineResult run_pipeline_on(const TimeSeriesFrame& raw, const PipelineConfig& p) {
    const Config effective = p.to_config();
    const bool write = !p.output_dir.empty();
    const std::filesystem::path dir(p.output_dir);
    if (write) {
        std::filesystem::create_directories(dir);
        std::ofstream(dir / "config.txt") << "# schema_version=" << kSchemaVersion << "\n# kind=pipeline_config\n"
                                          << effective.dump();
    }
    PipelineResult result;
    const std::size_t n = raw.size();
    const auto split = static_cast<std::size_t>(std::floor(p.train_fraction * static_cast<double>(n)));

    const auto prepped = run_stage("prep", [&] {
        const auto train = raw.slice(0, split);
        auto plan = fit_prep(train, *train.labels, [&] {
            auto c = p.prep;
            c.threads = p.threads;
            return c;
        }());
        if (write) write_json_artifact(to_json(plan), effective, dir / "prep_plan.json");
        return apply_prep(plan, raw);
    });

    const WindowSpec spec = run_stage("windowing", [&] {
        WindowSpec s;
        s.window_len = p.window_len == 0 ? samples_for_duration(prepped, 30.0 * 60.0) : p.window_len;
        s.stride = p.stride;
        s.horizon = p.horizon == 0 ? s.window_len : p.horizon;
        s.validate();
        return s;
    });
    const auto thresholds = run_stage("windowing", [&] { return fit_exceedance_thresholds(prepped, split); });
    auto windows = run_stage("windowing", [&] { return make_windows(prepped, spec, thresholds, p.threads); });

    if (p.mode == PipelineMode::segmented) {
        const auto cf = run_stage("tune", [&] {
            if (!p.tune) return p.changefinder;
            const auto train = prepped.slice(0, split);
            GridSearchOptions opts{p.tune_objective, p.tune_tolerance, p.threads};
            const auto board = grid_search(train, *train.labels, p.grid, opts);
            if (write)
                write_csv_artifact(dir / "leaderboard.csv", "leaderboard", effective,
                                   [&](std::ostream& out) { write_leaderboard_csv(board, out); });
            auto best = board.best().config;
            best.min_gap = p.changefinder.min_gap;
            best.mode = p.changefinder.mode;
            return best;
        });
        result.changefinder = cf;
        windows = run_stage("segment", [&] {
            const auto scores = score_multichannel(prepped, cf, p.threads, split);
            const auto seg = detect_change_points(scores, cf);
            result.n_change_points = seg.change_points.size();
            if (write) {
                write_json_artifact(changefinder_params_json(cf),
                                    effective, dir / "changefinder.json");
                write_csv_artifact(dir / "change_points.txt", "change_points", effective, [&](std::ostream& out) {
                    for (auto cp : seg.change_points) out << cp << '\n';
                });
            }
            return augment_with_segmentation(windows, scores, seg, p.drop_straddling);
        });
    }

    const auto parts = run_stage("split", [&] { return temporal_split(windows, split); });
    result.n_train = parts.train.size();
    result.n_test = parts.test.size();
    if (write) {
        write_csv_artifact(dir / "train_windows.csv", "window_dataset", effective,
                           [&](std::ostream& out) { write_window_csv(parts.train, out); });
        write_csv_artifact(dir / "test_windows.csv", "window_dataset", effective,
                           [&](std::ostream& out) { write_window_csv(parts.test, out); });
    }

    const auto model = run_stage("train", [&] {
        auto m = fit_ensemble(parts.train, p);
        if (write) {
            json members = json::array();
            for (const auto& member : m.members) members.push_back(to_json(member));
            write_json_artifact({{"schema_version", kSchemaVersion},
                                 {"kind", "ensemble_model"},
                                 {"combiner", "mean"},
                                 {"members", members}},
                                effective, dir / "ensemble.json");
        }
        return m;
    });

    const auto probs = run_stage("evaluate", [&] {
        auto pr = ensemble_predict(model, parts.test.features, p.threads);
        result.report = classification_report(pr, parts.test.labels, p.decision_threshold);
        if (write) {
            write_json_artifact(to_json(result.report), effective, dir / "eval_report.json");
            write_csv_artifact(dir / "eval_report.csv", "eval_report", effective,
                               [&](std::ostream& out) { write_report_csv(result.report, out); });
            std::ofstream txt(dir / "eval_report.txt");
            write_report_text(result.report, txt, "Ensemble (" + to_string(p.mode) + ")");
            write_csv_artifact(dir / "predictions.csv", "predictions", effective, [&](std::ostream& out) {
                out << "start,end,timestamp,label,probability\n";
                for (std::size_t i = 0; i < pr.size(); ++i) {
                    const auto& m = parts.test.meta[i];
                    out << m.start << ',' << m.end << ',' << m.timestamp << ',' << parts.test.labels[i] << ','
                        << format_double(pr[i]) << '\n';
                }
            });
        }
        return pr;
    });

    run_stage("health", [&] {
        result.health = compute_health(probs, p.health);
        if (write) {
            std::vector<std::int64_t> ts;
            for (const auto& m : parts.test.meta) ts.push_back(m.timestamp);
            write_csv_artifact(dir / "health.csv", "health_series", effective,
                               [&](std::ostream& out) { write_health_csv(result.health, ts, out); });
        }
        return 0;
    });
    return result;
}

inline PipelineResult run_pipeline(const PipelineConfig& p) {
    const auto frame = run_stage("ingest", [&] { return ingest(p); });
    return run_pipeline_on(frame, p);
}

}  // namespace segad
