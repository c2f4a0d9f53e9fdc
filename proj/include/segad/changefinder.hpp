#pragma once

// Two-stage ChangeFinder built on sequentially discounting AR (SDAR) models.
//
// Stage 1 scores each sample by its log-loss under an online AR(k) model whose
// sufficient statistics decay geometrically with rate r. The stage-1 scores are
// smoothed with a trailing moving average, scored again by a fresh SDAR model,
// and smoothed once more to give the change score.

#include <cmath>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "segad/core.hpp"
#include "segad/data_io.hpp"

namespace segad {

enum class ThresholdMode { zscore, absolute };

struct ChangeFinderConfig {
    double r = 0.05;
    std::size_t order = 1;
    std::size_t smooth = 5;
    double threshold = 1.8;
    std::size_t min_gap = 0;  // 0 = same as smooth
    ThresholdMode mode = ThresholdMode::zscore;

    std::size_t effective_min_gap() const { return min_gap == 0 ? smooth : min_gap; }
    std::size_t second_smooth() const { return std::max<std::size_t>(2, (smooth + 1) / 2); }
    std::size_t valid_from() const { return 2 * smooth + 2 * order; }

    void validate() const {
        if (!(r > 0.0 && r < 1.0)) throw Error("ChangeFinder r must lie in (0, 1)");
        if (order < 1) throw Error("ChangeFinder order must be >= 1");
        if (smooth < 2) throw Error("ChangeFinder smooth must be >= 2");
        if (!(threshold > 0.0)) throw Error("ChangeFinder threshold must be > 0");
    }

    friend bool operator==(const ChangeFinderConfig&, const ChangeFinderConfig&) = default;
};

/// Named preset tuned for detection F1.
inline ChangeFinderConfig preset_f1() { return {0.05, 1, 5, 1.8}; }
/// Named preset tuned for the change-score metric.
inline ChangeFinderConfig preset_cs() { return {0.1, 1, 10, 1.5}; }

inline ChangeFinderConfig changefinder_preset(const std::string& name) {
    if (name == "f1") return preset_f1();
    if (name == "cs") return preset_cs();
    throw Error("unknown ChangeFinder preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Levinson-Durbin
// ---------------------------------------------------------------------------

/// Solves the Toeplitz Yule-Walker system for AR coefficients ω_1..ω_k given
/// autocovariances c_0..c_k. The recursion stops at the last order whose
/// reflection coefficient is finite with magnitude < 1; later ω stay zero.
inline std::vector<double> levinson_durbin(std::span<const double> autocov) {
    if (autocov.empty()) throw Error("levinson_durbin needs c_0");
    const std::size_t k = autocov.size() - 1;
    if (!(autocov[0] > 0.0)) throw Error("degenerate variance: c_0 must be > 0");
    std::vector<double> phi(k, 0.0), prev(k, 0.0);
    double err = autocov[0];
    for (std::size_t m = 1; m <= k; ++m) {
        double acc = autocov[m];
        for (std::size_t j = 1; j < m; ++j) acc -= prev[j - 1] * autocov[m - j];
        const double refl = acc / err;
        if (!std::isfinite(refl) || std::abs(refl) >= 1.0) break;
        phi[m - 1] = refl;
        for (std::size_t j = 1; j < m; ++j) phi[j - 1] = prev[j - 1] - refl * prev[m - j - 1];
        err *= 1.0 - refl * refl;
        prev = phi;
    }
    return prev;
}

// ---------------------------------------------------------------------------
// SDAR
// ---------------------------------------------------------------------------

inline constexpr double kVarianceFloor = 1e-8;

struct SdarState {
    double r = 0.05;
    std::size_t k = 1;
    double mu = 0.0;
    std::vector<double> c;      // c_0..c_k
    std::vector<double> omega;  // ω_1..ω_k
    double sigma2 = 1.0;
    std::deque<double> lags;  // most recent first, at most k
    std::size_t n_seen = 0;

    SdarState() = default;
    SdarState(double rate, std::size_t order) : r(rate), k(order), c(order + 1, 0.0), omega(order, 0.0) {}
};

/// Folds one observation into the state and returns its log-loss score
/// (0 while fewer than k lags are available). The discounted mean starts at the
/// first observation.
inline double sdar_update(SdarState& s, double x) {
    if (!std::isfinite(x)) throw Error("SDAR input must be finite");
    s.mu = s.n_seen == 0 ? x : (1.0 - s.r) * s.mu + s.r * x;
    const double dx = x - s.mu;
    s.c[0] = (1.0 - s.r) * s.c[0] + s.r * dx * dx;
    for (std::size_t j = 1; j <= s.k && j <= s.lags.size(); ++j)
        s.c[j] = (1.0 - s.r) * s.c[j] + s.r * dx * (s.lags[j - 1] - s.mu);

    double score = 0.0;
    if (s.lags.size() >= s.k) {
        if (s.c[0] > 0.0)
            s.omega = levinson_durbin(s.c);
        else
            std::fill(s.omega.begin(), s.omega.end(), 0.0);
        double pred = s.mu;
        for (std::size_t j = 0; j < s.k; ++j) pred += s.omega[j] * (s.lags[j] - s.mu);
        const double e = x - pred;
        s.sigma2 = std::max(kVarianceFloor, (1.0 - s.r) * s.sigma2 + s.r * e * e);
        score = 0.5 * std::log(2.0 * 3.14159265358979323846 * s.sigma2) + e * e / (2.0 * s.sigma2);
    }
    s.lags.push_front(x);
    if (s.lags.size() > s.k) s.lags.pop_back();
    ++s.n_seen;
    return score;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

struct ScoreSeries {
    std::vector<double> outlier_score;
    std::vector<double> smoothed_outlier;
    std::vector<double> change_score;
    std::size_t valid_from = 0;

    std::size_t size() const { return change_score.size(); }
    friend bool operator==(const ScoreSeries&, const ScoreSeries&) = default;
};

/// Trailing moving average; the first window−1 entries average the prefix.
inline std::vector<double> trailing_mean(std::span<const double> x, std::size_t window) {
    std::vector<double> out(x.size());
    double sum = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
        sum += x[t];
        if (t >= window) sum -= x[t - window];
        out[t] = sum / static_cast<double>(std::min(t + 1, window));
    }
    return out;
}

inline ScoreSeries changefinder_score(std::span<const double> series, const ChangeFinderConfig& cfg) {
    cfg.validate();
    if (series.size() <= 2 * (cfg.smooth + cfg.order))
        throw Error("series too short for ChangeFinder (need more than " +
                    std::to_string(2 * (cfg.smooth + cfg.order)) + " samples)");
    ScoreSeries out;
    out.outlier_score.resize(series.size());
    SdarState first(cfg.r, cfg.order);
    for (std::size_t t = 0; t < series.size(); ++t) out.outlier_score[t] = sdar_update(first, series[t]);
    out.smoothed_outlier = trailing_mean(out.outlier_score, cfg.smooth);

    std::vector<double> second_scores(series.size());
    SdarState second(cfg.r, cfg.order);
    for (std::size_t t = 0; t < series.size(); ++t)
        second_scores[t] = sdar_update(second, out.smoothed_outlier[t]);
    out.change_score = trailing_mean(second_scores, cfg.second_smooth());
    out.valid_from = cfg.valid_from();
    return out;
}

// ---------------------------------------------------------------------------
// Change points and segmentation
// ---------------------------------------------------------------------------

struct Segmentation {
    std::vector<std::size_t> change_points;
    std::vector<std::pair<std::size_t, std::size_t>> segments;  // half-open

    friend bool operator==(const Segmentation&, const Segmentation&) = default;
};

inline Segmentation make_segmentation(std::vector<std::size_t> change_points, std::size_t n) {
    Segmentation seg;
    std::size_t begin = 0;
    for (auto cp : change_points) {
        if (cp <= begin || cp >= n) throw Error("change points must be increasing and inside (0, n)");
        seg.segments.emplace_back(begin, cp);
        begin = cp;
    }
    seg.segments.emplace_back(begin, n);
    seg.change_points = std::move(change_points);
    return seg;
}

/// Flags t as a change point when change_score_t exceeds the discounted running
/// mean plus threshold × running std (statistics taken before t is folded in),
/// t ≥ valid_from, and t is at least min_gap after the previous change point.
/// In absolute mode the score is compared with the threshold directly.
inline Segmentation detect_change_points(const ScoreSeries& scores, const ChangeFinderConfig& cfg) {
    cfg.validate();
    const auto& cs = scores.change_score;
    const std::size_t gap = cfg.effective_min_gap();
    std::vector<std::size_t> cps;
    double mean = cs.empty() ? 0.0 : cs[0];
    double var = 0.0;
    for (std::size_t t = 0; t < cs.size(); ++t) {
        const double sd = std::sqrt(var);
        const bool eligible = t >= scores.valid_from && t > 0 && (cps.empty() || t - cps.back() >= gap);
        bool hit = false;
        if (eligible) {
            if (cfg.mode == ThresholdMode::absolute)
                hit = cs[t] > cfg.threshold;
            else
                hit = sd > 0.0 && cs[t] > mean + cfg.threshold * sd;
        }
        if (hit) cps.push_back(t);
        const double d = cs[t] - mean;
        mean += cfg.r * d;
        var = (1.0 - cfg.r) * (var + cfg.r * d * d);
    }
    return make_segmentation(std::move(cps), cs.size());
}

namespace detail {

/// z-normalises x with statistics of [from, to) in place; entries before
/// `from` become 0.
inline void znormalize_tail(std::vector<double>& x, std::size_t from, std::size_t to) {
    if (to <= from) throw Error("normalisation range is empty after warm-up");
    std::span<const double> tail(x.data() + from, to - from);
    const double m = stats::mean(tail);
    const double sd = stats::stddev(tail);
    for (std::size_t t = 0; t < x.size(); ++t)
        x[t] = (t < from || sd <= 0.0) ? 0.0 : (x[t] - m) / sd;
}

}  // namespace detail

/// Scores every channel independently, z-normalises each channel's scores with
/// statistics of the warmed-up samples before `fit_end` (0 = whole series) and
/// averages across channels in channel order.
inline ScoreSeries score_multichannel(const TimeSeriesFrame& frame, const ChangeFinderConfig& cfg,
                                      std::size_t threads = 1, std::size_t fit_end = 0) {
    if (frame.n_channels() == 0) throw Error("no channels to score");
    const std::size_t to = fit_end == 0 ? frame.size() : std::min(fit_end, frame.size());
    std::vector<ScoreSeries> per(frame.n_channels());
    parallel_for(frame.n_channels(), threads, [&](std::size_t c) {
        per[c] = changefinder_score(frame.values.column(c), cfg);
        detail::znormalize_tail(per[c].outlier_score, per[c].valid_from, to);
        detail::znormalize_tail(per[c].smoothed_outlier, per[c].valid_from, to);
        detail::znormalize_tail(per[c].change_score, per[c].valid_from, to);
    });
    ScoreSeries agg;
    const std::size_t n = frame.size();
    agg.valid_from = cfg.valid_from();
    agg.outlier_score.assign(n, 0.0);
    agg.smoothed_outlier.assign(n, 0.0);
    agg.change_score.assign(n, 0.0);
    const double inv = 1.0 / static_cast<double>(per.size());
    for (const auto& s : per)
        for (std::size_t t = 0; t < n; ++t) {
            agg.outlier_score[t] += s.outlier_score[t] * inv;
            agg.smoothed_outlier[t] += s.smoothed_outlier[t] * inv;
            agg.change_score[t] += s.change_score[t] * inv;
        }
    return agg;
}

}  // namespace segad
