// Acceptance run: evaluates every criterion and prints one PASS/FAIL line per
// criterion. Exit status is non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "segad/pipeline.hpp"

using namespace segad;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

// 1 -------------------------------------------------------------------------

Outcome directional_reproduction() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> seg_auc, unseg_auc;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SynthConfig sc;
        sc.seed = seed;
        const auto data = generate_synthetic(sc);
        PipelineConfig p;
        p.seed = seed;
        p.output_dir.clear();
        p.mode = PipelineMode::segmented;
        const double a = run_pipeline_on(data.frame, p).report.auc_roc;
        p.mode = PipelineMode::unsegmented;
        const double b = run_pipeline_on(data.frame, p).report.auc_roc;
        seg_auc.push_back(a);
        unseg_auc.push_back(b);
        per_seed += " " + fmt(a, 3) + "/" + fmt(b, 3);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double ms = stats::median(seg_auc), mu = stats::median(unseg_auc);
    Outcome o;
    o.pass = ms - mu >= 0.03 && ms >= 0.90 && secs <= 300.0;
    o.detail = "median AUC segmented " + fmt(ms) + " vs unsegmented " + fmt(mu) + " (gain " + fmt(ms - mu) +
               ", need >= 0.03 and >= 0.90); per seed seg/unseg:" + per_seed + "; " + fmt(secs, 1) + " s";
    return o;
}

// 2 -------------------------------------------------------------------------

Outcome step_detection() {
    // Threshold 3 for both halves; smooth 5 gives a 10-sample match window.
    const ChangeFinderConfig cfg{0.05, 1, 5, 3.0};
    const std::size_t tol = 2 * cfg.smooth;
    int hits = 0;
    double false_points = 0.0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        Rng rng(derive_seed(derive_seed(2024, "acceptance/step"), trial));
        std::vector<double> x(1000);
        for (std::size_t t = 0; t < x.size(); ++t) x[t] = rng.normal(t >= 500 ? 5.0 : 0.0, 1.0);
        const auto cps = detect_change_points(changefinder_score(x, cfg), cfg).change_points;
        hits += std::any_of(cps.begin(), cps.end(), [&](std::size_t c) { return c + tol >= 500 && c <= 500 + tol; });

        Rng noise(derive_seed(derive_seed(2024, "acceptance/noise"), trial));
        std::vector<double> z(5000);
        for (auto& v : z) v = noise.normal();
        false_points += static_cast<double>(detect_change_points(changefinder_score(z, cfg), cfg).change_points.size());
    }
    const double per5000 = false_points / 100.0;
    Outcome o;
    o.pass = hits >= 95 && per5000 <= 1.0;
    o.detail = "step hits " + std::to_string(hits) + "/100 (need >= 95); false change points per 5000 noise samples " +
               fmt(per5000, 2) + " (need <= 1)";
    return o;
}

// 3 -------------------------------------------------------------------------

std::vector<double> batch_yule_walker(const std::vector<double>& x, std::size_t k) {
    const double m = stats::mean(x);
    std::vector<double> c(k + 1, 0.0);
    for (std::size_t lag = 0; lag <= k; ++lag) {
        for (std::size_t t = lag; t < x.size(); ++t) c[lag] += (x[t] - m) * (x[t - lag] - m);
        c[lag] /= static_cast<double>(x.size());
    }
    if (k == 1) return {c[1] / c[0]};
    // k == 2, Cramer's rule on [[c0, c1], [c1, c0]] w = [c1, c2]
    const double det = c[0] * c[0] - c[1] * c[1];
    return {(c[1] * c[0] - c[1] * c[2]) / det, (c[0] * c[2] - c[1] * c[1]) / det};
}

Outcome sdar_oracle() {
    double worst = 0.0;
    std::string detail;
    const std::vector<std::vector<double>> models{{0.7}, {0.5, 0.3}};
    for (const auto& phi : models) {
        Rng rng(derive_seed(2024, "acceptance/sdar/" + std::to_string(phi.size())));
        std::vector<double> x(10500, 0.0);
        for (std::size_t t = phi.size(); t < x.size(); ++t) {
            double v = rng.normal();
            for (std::size_t j = 0; j < phi.size(); ++j) v += phi[j] * x[t - 1 - j];
            x[t] = v;
        }
        x.erase(x.begin(), x.begin() + 500);
        SdarState s(0.005, phi.size());
        for (double v : x) sdar_update(s, v);
        const auto yw = batch_yule_walker(x, phi.size());
        detail += " AR(" + std::to_string(phi.size()) + ") online";
        for (std::size_t j = 0; j < phi.size(); ++j) {
            worst = std::max(worst, std::abs(s.omega[j] - yw[j]));
            detail += " " + fmt(s.omega[j], 3) + "~" + fmt(yw[j], 3);
        }
    }
    return {worst <= 0.1, "max |online - batch| " + fmt(worst) + " (need <= 0.1);" + detail};
}

// 4 -------------------------------------------------------------------------

Outcome auc_oracle() {
    Rng rng(derive_seed(2024, "acceptance/auc"));
    double worst = 0.0;
    int checked = 0;
    while (checked < 1000) {
        const std::size_t n = 2 + rng.index(49);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.index(1 + n / 3));
            y[i] = rng.uniform() < 0.4 ? 1 : 0;
        }
        const auto pos = std::count(y.begin(), y.end(), 1);
        if (pos == 0 || pos == static_cast<long>(n)) continue;
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (y[i] == 1 && y[j] == 0) {
                    num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                    den += 1.0;
                }
        worst = std::max(worst, std::abs(auc_roc(s, y) - num / den));
        ++checked;
    }
    std::ostringstream d;
    d << "1000 instances with ties, max |rank - pairwise| " << worst << " (need <= 1e-12)";
    return {worst <= 1e-12, d.str()};
}

// 5 -------------------------------------------------------------------------

Outcome grid_determinism() {
    SynthConfig sc;
    sc.n_samples = 10000;
    sc.n_channels = 4;
    sc.seed = 5;
    sc.anomaly_fraction = 0.03;
    const auto data = generate_synthetic(sc);
    const PipelineConfig defaults;
    std::set<std::string> boards;
    for (std::size_t threads : {1, 2, 8}) {
        std::ostringstream out;
        write_leaderboard_csv(grid_search(data.frame, *data.frame.labels, defaults.grid, {Objective::f1, 0, threads}),
                              out);
        boards.insert(out.str());
    }
    bool presets = false;
    std::string preset_detail;
    try {
        const auto f1 = PipelineConfig::from_config(Config::parse("changefinder.preset = f1\n")).changefinder;
        const auto cs = PipelineConfig::from_config(Config::parse("changefinder.preset = cs\n")).changefinder;
        presets = f1 == ChangeFinderConfig{0.05, 1, 5, 1.8} && cs == ChangeFinderConfig{0.1, 1, 10, 1.5};
        preset_detail = presets ? "presets f1/cs load" : "presets differ from expected tuples";
    } catch (const std::exception& e) {
        preset_detail = std::string("preset load failed: ") + e.what();
    }
    return {boards.size() == 1 && presets, std::to_string(defaults.grid.size()) + "-cell leaderboard, " +
                                               std::to_string(boards.size()) +
                                               " distinct byte strings across 1/2/8 threads; " + preset_detail};
}

// 6 -------------------------------------------------------------------------

Outcome f1_oracle() {
    const auto s = detection_f1({102, 250, 305}, {{100, 300}}, 10);
    const bool ok = s.precision == 2.0 / 3.0 && s.recall == 1.0 && std::abs(s.f1 - 0.8) <= 1e-15;
    return {ok, "P=" + format_double(s.precision) + " R=" + format_double(s.recall) + " F1=" + format_double(s.f1)};
}

// 7 -------------------------------------------------------------------------

Outcome numeric_invariants() {
    Rng rng(derive_seed(2024, "acceptance/invariants"));
    std::vector<std::string> failures;
    auto check = [&](bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    };

    bool mono = true, ident = true;
    for (int i = 0; i < 20000; ++i) {
        const double lambda = rng.uniform(-4, 6), a = rng.normal() * 20.0, b = a + rng.uniform(1e-6, 10);
        mono &= yeo_johnson(lambda, a) < yeo_johnson(lambda, b);
        ident &= std::abs(yeo_johnson(1.0, a) - a) <= 1e-12 * std::max(1.0, std::abs(a));
    }
    check(mono, "yeo-johnson monotonicity");
    check(ident, "yeo-johnson identity");

    bool wins = true;
    for (int i = 0; i < 200; ++i) {
        std::vector<double> x(50 + rng.index(100));
        for (auto& v : x) v = rng.normal() * std::exp(rng.normal());
        const auto [lo, hi] = winsorize_fit(x, 0.01, 0.99);
        for (double v : x) {
            const double w = winsorize(v, lo, hi);
            wins &= w >= lo && w <= hi && ((v < lo || v > hi) || w == v);
        }
    }
    check(wins, "winsorize bounds");

    Matrix X;
    for (int i = 0; i < 300; ++i) {
        std::vector<double> r(6);
        for (auto& v : r) v = rng.normal() * 5.0 + 3.0;
        X.push_row(r);
    }
    const auto pca = fit_pca_detector(X, 6);
    double worst = 0.0;
    for (int i = 0; i < 500; ++i) {
        std::vector<double> q(6);
        for (auto& v : q) v = rng.normal() * 50.0;
        worst = std::max(worst, pca.raw_score(q));
    }
    check(worst < 1e-10, "pca full-rank reconstruction");

    Matrix B;
    std::vector<int> y;
    for (int i = 0; i < 500; ++i) {
        const int label = rng.uniform() < 0.15;
        B.push_row(std::vector<double>{rng.normal(label * 1.5, 1.0), rng.normal(0.0, 1.0), rng.uniform()});
        y.push_back(label);
    }
    TrainConfig tc;
    tc.gbt_rounds = 60;
    tc.n_trees = 30;
    const auto gbt = fit_gbt(B, y, tc);
    bool loss = true;
    for (std::size_t r = 1; r < gbt.train_loss.size(); ++r) loss &= gbt.train_loss[r] <= gbt.train_loss[r - 1] + 1e-12;
    check(loss, "gbt per-round logloss");

    const std::vector<DetectorModel> models{fit_random_forest(B, y, tc), gbt, fit_isolation_forest(B, tc),
                                            fit_pca_detector(B, 2), fit_kmeans_detector(B, 3, 1)};
    bool unit = true;
    for (const auto& m : models)
        for (int i = 0; i < 3000; ++i) {
            std::vector<double> q(3);
            for (auto& v : q) v = rng.normal() * std::pow(10.0, rng.uniform(-4, 9));
            if (i % 101 == 0) q[rng.index(3)] = kMissing;
            const double p = m.predict_proba(q);
            unit &= p >= 0.0 && p <= 1.0;
        }
    check(unit, "predict_proba in [0,1]");

    std::vector<double> probs(5000);
    for (auto& p : probs) p = rng.uniform();
    const auto hs = compute_health(probs, {1 + rng.index(60), 0.5, 0.25});
    bool exact = true;
    for (std::size_t i = 0; i < probs.size(); ++i) exact &= hs.hi[i] == 1.0 - probs[i];
    check(exact, "hi = 1 - p");
    std::vector<std::size_t> w, a;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (hs.hi_smoothed[i] < 0.5) w.push_back(i);
        if (hs.hi[i] < 0.25) a.push_back(i);
    }
    check(w == hs.warnings && a == hs.alerts, "alarm sets");

    std::string detail = "10 invariant groups checked";
    for (const auto& f : failures) detail += "; FAILED " + f;
    return {failures.empty(), detail};
}

// 8 -------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) {
            std::ifstream in(e.path(), std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            files[fs::relative(e.path(), dir).string()] = ss.str();
        }
    return files;
}

Outcome reproducibility() {
    const auto root = fs::temp_directory_path() / "segad_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    SynthConfig sc;
    sc.n_samples = 12000;
    sc.n_channels = 5;
    sc.seed = 8;
    sc.anomaly_fraction = 0.03;
    const auto data = generate_synthetic(sc);
    write_csv(data.frame, (root / "data.csv").string());

    PipelineConfig p;
    p.data_path = (root / "data.csv").string();
    p.output_dir = (root / "out").string();
    p.seed = 8;
    run_pipeline(p);
    const auto first = snapshot(root / "out");
    p.threads = 4;
    run_pipeline(p);
    const auto second = snapshot(root / "out");

    std::size_t differing = 0;
    for (const auto& [name, bytes] : first) differing += !second.count(name) || second.at(name) != bytes;
    differing += second.size() != first.size();

    const auto plan = load_prep_plan((root / "out" / "prep_plan.json").string());
    save_prep_plan(plan, (root / "plan_again.json").string());
    const bool plan_ok = to_json(load_prep_plan((root / "plan_again.json").string())).dump() == to_json(plan).dump();

    const auto model = load_ensemble((root / "out" / "ensemble.json").string());
    save_ensemble(model, (root / "model_again.json").string());
    std::ifstream test_in(root / "out" / "test_windows.csv");
    const auto test = read_window_csv(test_in);
    const bool model_ok = ensemble_predict(load_ensemble((root / "model_again.json").string()), test.features) ==
                          ensemble_predict(model, test.features);
    fs::remove_all(root);
    return {differing == 0 && plan_ok && model_ok,
            std::to_string(first.size()) + " artifacts, " + std::to_string(differing) +
                " differ on rerun (threads 1 vs 4); PrepPlan round-trip " + (plan_ok ? "exact" : "MISMATCH") +
                "; reloaded ensemble predictions " + (model_ok ? "identical" : "DIFFER")};
}

// 9 -------------------------------------------------------------------------

Outcome leakage() {
    Rng rng(derive_seed(2024, "acceptance/leakage"));
    int instances = 0;
    std::size_t shared = 0;
    while (instances < 200) {
        const std::size_t n = 20 + rng.index(200);
        const WindowSpec spec{2 + rng.index(20), 1 + rng.index(10), 1 + rng.index(20)};
        if (n < spec.window_len + spec.horizon) continue;
        TimeSeriesFrame f;
        f.channels = {"x"};
        for (std::size_t t = 0; t < n; ++t) {
            f.timestamps.push_back(static_cast<std::int64_t>(t));
            f.values.push_row(std::vector<double>{rng.normal()});
        }
        f.labels = Labels(n, true);
        for (std::size_t t = 0; t < n; ++t) (*f.labels)[t] = rng.uniform() > 0.1;
        const auto ds = make_windows(f, spec, std::vector<double>{0.0});
        SplitResult parts;
        try {
            parts = temporal_split(ds, 1 + rng.index(n - 1));
        } catch (const Error&) {
            continue;
        }
        std::vector<char> used(n, 0);
        for (const auto& m : parts.train.meta)
            for (std::size_t t = m.start; t < m.horizon_end; ++t) used[t] = 1;
        for (const auto& m : parts.test.meta)
            for (std::size_t t = m.start; t < m.horizon_end; ++t) shared += used[t];
        ++instances;
    }
    return {shared == 0, "200 random instances, " + std::to_string(shared) + " shared sample indices"};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 directional reproduction", directional_reproduction},
        {"2 changefinder step detection", step_detection},
        {"3 sdar oracle", sdar_oracle},
        {"4 auc oracle", auc_oracle},
        {"5 grid-search determinism", grid_determinism},
        {"6 detection-f1 oracle", f1_oracle},
        {"7 numeric invariants", numeric_invariants},
        {"8 reproducibility", reproducibility},
        {"9 leakage", leakage},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << name << ": " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
