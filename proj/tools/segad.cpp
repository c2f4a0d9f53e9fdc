// segad command-line interface: one subcommand per pipeline stage plus the
// full pipeline. Run `segad <command> --help` for the flags of each command.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "segad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace segad;

namespace {

std::size_t g_threads = 1;

TimeSeriesFrame load_labelled(const std::string& data, const std::string& noc, const std::string& ts_col) {
    auto frame = load_csv(data, ts_col);
    if (!noc.empty()) frame = label_from_noc(std::move(frame), load_noc(noc));
    if (!frame.labels) throw Error("no labels: pass --noc or include a 'normal' column");
    return frame;
}

std::size_t split_index(std::size_t n, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw Error("--train-fraction must lie in (0, 1)");
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
}

std::ofstream open_out(const std::string& path) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    return out;
}

WindowDataset load_windows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read '" + path + "'");
    return read_window_csv(in);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Segmentation-aware anomaly detection for multichannel sensor data"};
    app.require_subcommand(1);
    app.add_option("--threads", g_threads, "Worker threads (0 = all cores); never changes results")
        ->capture_default_str();

    // synth ----------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic regime-switching dataset");
    SynthConfig sc;
    std::string synth_dir = "synth";
    synth->add_option("--out-dir", synth_dir, "Directory for data.csv, noc.csv, change_points.txt")
        ->capture_default_str();
    synth->add_option("--seed", sc.seed, "Master seed")->capture_default_str();
    synth->add_option("--n-samples", sc.n_samples)->capture_default_str();
    synth->add_option("--n-channels", sc.n_channels)->capture_default_str();
    synth->add_option("--n-shifts", sc.n_regime_shifts, "Number of regime shifts")->capture_default_str();
    synth->add_option("--anomaly-fraction", sc.anomaly_fraction)->capture_default_str();
    synth->add_option("--noise-sigma", sc.noise_sigma)->capture_default_str();
    synth->add_option("--shift-sigma", sc.shift_magnitude_sigma, "Shift magnitude in noise sigmas")
        ->capture_default_str();
    synth->add_option("--anomaly-intervals", sc.n_anomaly_intervals)->capture_default_str();
    synth->add_option("--ar", sc.ar_coefficient, "AR(1) coefficient")->capture_default_str();
    synth->add_option("--variance-factor", sc.variance_factor)->capture_default_str();
    synth->add_option("--drift", sc.drift_sigma, "Drift over an anomaly, in noise sigmas")->capture_default_str();
    synth->add_option("--affected-fraction", sc.affected_fraction)->capture_default_str();

    // prep -----------------------------------------------------------------
    auto* prep = app.add_subcommand("prep", "Fit a PrepPlan on the training part and apply it");
    std::string prep_data, prep_noc, prep_ts, prep_plan_out = "prep_plan.json", prep_out = "prepped.csv",
                                                prep_plan_in;
    double prep_fraction = 0.5;
    PrepConfig prep_cfg;
    prep->add_option("--data", prep_data, "Sensor CSV")->required();
    prep->add_option("--noc", prep_noc, "NoC interval CSV");
    prep->add_option("--timestamp-column", prep_ts);
    prep->add_option("--train-fraction", prep_fraction)->capture_default_str();
    prep->add_option("--plan-in", prep_plan_in, "Apply an existing plan instead of fitting");
    prep->add_option("--plan-out", prep_plan_out)->capture_default_str();
    prep->add_option("--out", prep_out, "Prepped CSV (with labels)")->capture_default_str();
    prep->add_option("--top-k", prep_cfg.top_k)->capture_default_str();
    prep->add_option("--collinearity", prep_cfg.collinearity_threshold)->capture_default_str();

    // tune -----------------------------------------------------------------
    auto* tune = app.add_subcommand("tune", "Grid-search ChangeFinder parameters against labelled transitions");
    std::string tune_data, tune_noc, tune_ts, tune_grid, tune_objective = "f1", tune_out = "leaderboard.csv",
                                                        tune_best = "changefinder.json";
    std::size_t tune_tol = 0;
    tune->add_option("--data", tune_data)->required();
    tune->add_option("--noc", tune_noc);
    tune->add_option("--timestamp-column", tune_ts);
    tune->add_option("--grid-file", tune_grid, "Grid file (key = v1, v2 lines for r, order, smooth, threshold)");
    tune->add_option("--objective", tune_objective, "f1 or cs")->capture_default_str();
    tune->add_option("--tolerance", tune_tol, "Match tolerance in samples (0 = 2 x smooth)")->capture_default_str();
    tune->add_option("--out", tune_out, "Leaderboard CSV")->capture_default_str();
    tune->add_option("--best-out", tune_best, "Best parameters as JSON")->capture_default_str();

    // segment --------------------------------------------------------------
    auto* segment = app.add_subcommand("segment", "Score a series with ChangeFinder and emit change points");
    std::string seg_data, seg_ts, seg_params, seg_preset = "f1", seg_cps = "change_points.txt",
                                              seg_scores = "change_scores.csv";
    segment->add_option("--data", seg_data)->required();
    segment->add_option("--timestamp-column", seg_ts);
    segment->add_option("--params", seg_params, "ChangeFinder parameter JSON (overrides --preset)");
    segment->add_option("--preset", seg_preset, "Named parameter preset: f1 or cs")->capture_default_str();
    segment->add_option("--out", seg_cps, "Change-point file")->capture_default_str();
    segment->add_option("--scores-out", seg_scores, "Plot-ready score CSV")->capture_default_str();

    // featurize ------------------------------------------------------------
    auto* featurize = app.add_subcommand("featurize", "Build train/test window datasets");
    std::string fz_data, fz_noc, fz_ts, fz_params, fz_train = "train_windows.csv", fz_test = "test_windows.csv";
    std::size_t fz_window = 0, fz_stride = 10, fz_horizon = 0;
    double fz_fraction = 0.5;
    bool fz_drop = false;
    featurize->add_option("--data", fz_data, "Prepped CSV")->required();
    featurize->add_option("--noc", fz_noc);
    featurize->add_option("--timestamp-column", fz_ts);
    featurize->add_option("--window", fz_window, "Window length (0 = 30 minutes)")->capture_default_str();
    featurize->add_option("--stride", fz_stride)->capture_default_str();
    featurize->add_option("--horizon", fz_horizon, "Label horizon (0 = window length)")->capture_default_str();
    featurize->add_option("--train-fraction", fz_fraction)->capture_default_str();
    featurize->add_option("--segment-params", fz_params, "Add segmentation features using these parameters");
    featurize->add_flag("--drop-straddling", fz_drop, "Drop windows containing a change point");
    featurize->add_option("--train-out", fz_train)->capture_default_str();
    featurize->add_option("--test-out", fz_test)->capture_default_str();

    // train ----------------------------------------------------------------
    auto* train = app.add_subcommand("train", "Train an ensemble on a window dataset");
    std::string tr_in, tr_out = "ensemble.json", tr_config;
    train->add_option("--train", tr_in, "Training window CSV")->required();
    train->add_option("--config", tr_config, "Config file with model keys");
    train->add_option("--out", tr_out)->capture_default_str();
    std::uint64_t tr_seed = 42;
    train->add_option("--seed", tr_seed)->capture_default_str();

    // evaluate -------------------------------------------------------------
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate an ensemble on a test window dataset");
    std::string ev_model, ev_test, ev_dir = "eval";
    double ev_threshold = 0.5;
    evaluate->add_option("--model", ev_model)->required();
    evaluate->add_option("--test", ev_test)->required();
    evaluate->add_option("--threshold", ev_threshold)->capture_default_str();
    evaluate->add_option("--out-dir", ev_dir)->capture_default_str();

    // compare --------------------------------------------------------------
    auto* compare = app.add_subcommand("compare", "Per-metric deltas between two evaluation reports (a - b)");
    std::string cmp_a, cmp_b, cmp_out = "comparison.csv";
    compare->add_option("a", cmp_a, "eval_report.json")->required();
    compare->add_option("b", cmp_b, "eval_report.json")->required();
    compare->add_option("--out", cmp_out)->capture_default_str();

    // health ---------------------------------------------------------------
    auto* health = app.add_subcommand("health", "Health Index trace from a predictions CSV");
    std::string hl_in, hl_out = "health.csv";
    HealthConfig hl_cfg;
    health->add_option("--predictions", hl_in)->required();
    health->add_option("--window", hl_cfg.smooth_window, "Moving-average window")->capture_default_str();
    health->add_option("--warning", hl_cfg.warning_threshold)->capture_default_str();
    health->add_option("--alert", hl_cfg.alert_threshold)->capture_default_str();
    health->add_option("--out", hl_out)->capture_default_str();

    // pipeline -------------------------------------------------------------
    auto* pipeline = app.add_subcommand("pipeline", "Run every stage end to end");
    std::string pl_config, pl_mode, pl_out, pl_data, pl_noc;
    std::uint64_t pl_seed = 0;
    pipeline->add_option("--config", pl_config, "key = value config file");
    pipeline->add_option("--mode", pl_mode, "segmented or unsegmented (overrides mode)");
    pipeline->add_option("--out-dir", pl_out, "Overrides output.dir");
    pipeline->add_option("--data", pl_data, "Overrides data.path");
    pipeline->add_option("--noc", pl_noc, "Overrides data.noc");
    auto* seed_opt = pipeline->add_option("--seed", pl_seed, "Overrides seed");

    CLI11_PARSE(app, argc, argv);

    std::string stage = app.get_subcommands().front()->get_name();
    try {
        if (synth->parsed()) {
            const auto res = generate_synthetic(sc);
            fs::create_directories(synth_dir);
            auto unlabelled = res.frame;
            unlabelled.labels.reset();
            write_csv(unlabelled, (fs::path(synth_dir) / "data.csv").string());
            write_noc(res.noc, (fs::path(synth_dir) / "noc.csv").string());
            write_change_points(res.change_points, (fs::path(synth_dir) / "change_points.txt").string());
        } else if (prep->parsed()) {
            const auto frame = load_labelled(prep_data, prep_noc, prep_ts);
            PrepPlan plan;
            if (!prep_plan_in.empty()) {
                plan = load_prep_plan(prep_plan_in);
            } else {
                const auto train_part = frame.slice(0, split_index(frame.size(), prep_fraction));
                prep_cfg.threads = g_threads;
                plan = fit_prep(train_part, *train_part.labels, prep_cfg);
                save_prep_plan(plan, prep_plan_out);
            }
            write_csv(apply_prep(plan, frame), prep_out);
        } else if (tune->parsed()) {
            const auto frame = load_labelled(tune_data, tune_noc, tune_ts);
            const auto grid = tune_grid.empty() ? PipelineConfig{}.grid : load_param_grid(tune_grid);
            const auto board = grid_search(frame, *frame.labels, grid,
                                           {objective_from_string(tune_objective), tune_tol, g_threads});
            auto out = open_out(tune_out);
            write_leaderboard_csv(board, out);
            write_json_file(changefinder_params_json(board.best().config), tune_best);
            std::cout << "best: r=" << format_double(board.best().config.r) << " order=" << board.best().config.order
                      << " smooth=" << board.best().config.smooth
                      << " threshold=" << format_double(board.best().config.threshold)
                      << " f1=" << format_double(board.best().f1) << " cs=" << format_double(board.best().cs) << '\n';
        } else if (segment->parsed()) {
            const auto frame = load_csv(seg_data, seg_ts);
            const auto cf = seg_params.empty() ? changefinder_preset(seg_preset)
                                               : changefinder_params_from_json(read_json_file(seg_params));
            const auto scores = score_multichannel(frame, cf, g_threads);
            const auto seg = detect_change_points(scores, cf);
            write_change_points(seg.change_points, seg_cps);
            auto out = open_out(seg_scores);
            // value_or_aggregate is the channel value, or the channel mean for
            // multichannel input.
            out << "index,timestamp,value_or_aggregate,outlier_score,change_score,is_change_point\n";
            std::size_t k = 0;
            for (std::size_t t = 0; t < scores.size(); ++t) {
                const bool cp = k < seg.change_points.size() && seg.change_points[k] == t;
                if (cp) ++k;
                out << t << ',' << frame.timestamps[t] << ',' << format_double(stats::mean(frame.values.row(t)))
                    << ',' << format_double(scores.outlier_score[t]) << ',' << format_double(scores.change_score[t])
                    << ',' << (cp ? 1 : 0) << '\n';
            }
        } else if (featurize->parsed()) {
            const auto frame = load_labelled(fz_data, fz_noc, fz_ts);
            const std::size_t split = split_index(frame.size(), fz_fraction);
            WindowSpec spec;
            spec.window_len = fz_window == 0 ? samples_for_duration(frame, 1800.0) : fz_window;
            spec.stride = fz_stride;
            spec.horizon = fz_horizon == 0 ? spec.window_len : fz_horizon;
            auto ds = make_windows(frame, spec, fit_exceedance_thresholds(frame, split), g_threads);
            if (!fz_params.empty()) {
                const auto cf = changefinder_params_from_json(read_json_file(fz_params));
                const auto scores = score_multichannel(frame, cf, g_threads, split);
                ds = augment_with_segmentation(ds, scores, detect_change_points(scores, cf), fz_drop);
            }
            const auto parts = temporal_split(ds, split);
            auto tr = open_out(fz_train);
            write_window_csv(parts.train, tr);
            auto te = open_out(fz_test);
            write_window_csv(parts.test, te);
        } else if (train->parsed()) {
            auto cfg = tr_config.empty() ? Config{} : Config::load(tr_config);
            if (!cfg.has("seed")) cfg.set("seed", std::to_string(tr_seed));
            auto p = PipelineConfig::from_config(cfg);
            p.threads = g_threads;
            const auto ds = load_windows(tr_in);
            save_ensemble(fit_ensemble(ds, p), tr_out);
        } else if (evaluate->parsed()) {
            const auto model = load_ensemble(ev_model);
            const auto ds = load_windows(ev_test);
            const auto probs = ensemble_predict(model, ds.features, g_threads);
            const auto report = classification_report(probs, ds.labels, ev_threshold);
            fs::create_directories(ev_dir);
            const fs::path dir(ev_dir);
            write_json_file(to_json(report), (dir / "eval_report.json").string());
            auto csv = open_out((dir / "eval_report.csv").string());
            write_report_csv(report, csv);
            auto txt = open_out((dir / "eval_report.txt").string());
            write_report_text(report, txt);
            write_report_text(report, std::cout);
            auto pred = open_out((dir / "predictions.csv").string());
            pred << "start,end,timestamp,label,probability\n";
            for (std::size_t i = 0; i < probs.size(); ++i)
                pred << ds.meta[i].start << ',' << ds.meta[i].end << ',' << ds.meta[i].timestamp << ','
                     << ds.labels[i] << ',' << format_double(probs[i]) << '\n';
        } else if (compare->parsed()) {
            const auto rows = compare_runs(eval_report_from_json(read_json_file(cmp_a)),
                                           eval_report_from_json(read_json_file(cmp_b)));
            auto out = open_out(cmp_out);
            write_comparison_csv(rows, out);
            write_comparison_text(rows, std::cout);
        } else if (health->parsed()) {
            std::ifstream in(hl_in);
            if (!in) throw Error("cannot read '" + hl_in + "'");
            std::vector<double> probs;
            std::vector<std::int64_t> ts;
            std::string line;
            bool header = true;
            while (std::getline(in, line)) {
                if (detail::trim(line).empty() || detail::is_comment(line)) continue;
                if (header) {
                    header = false;
                    if (line.rfind("start,end,timestamp,label,probability", 0) != 0)
                        throw Error("not a predictions CSV");
                    continue;
                }
                const auto cells = detail::split_csv_line(line);
                if (cells.size() != 5) throw Error("predictions rows need 5 cells");
                ts.push_back(parse_timestamp(cells[2]));
                probs.push_back(parse_double(cells[4]));
            }
            const auto series = compute_health(probs, hl_cfg);
            auto out = open_out(hl_out);
            write_health_csv(series, ts, out);
            std::cout << "warnings: " << series.warnings.size() << "  alerts: " << series.alerts.size() << '\n';
        } else if (pipeline->parsed()) {
            stage = "config";
            auto cfg = pl_config.empty() ? Config{} : Config::load(pl_config);
            if (!pl_mode.empty()) cfg.set("mode", pl_mode);
            if (!pl_out.empty()) cfg.set("output.dir", pl_out);
            if (!pl_data.empty()) cfg.set("data.path", pl_data);
            if (!pl_noc.empty()) cfg.set("data.noc", pl_noc);
            if (*seed_opt) cfg.set("seed", std::to_string(pl_seed));
            auto p = PipelineConfig::from_config(cfg);
            p.threads = g_threads;
            stage = "pipeline";
            const auto res = run_pipeline(p);
            std::cout << "mode " << to_string(p.mode) << ": train windows " << res.n_train << ", test windows "
                      << res.n_test;
            if (res.changefinder) std::cout << ", change points " << res.n_change_points;
            std::cout << ", AUC-ROC " << format_double(res.report.auc_roc) << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error in " << stage << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
