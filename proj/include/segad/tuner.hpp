#pragma once

// Grid search over ChangeFinder parameters against labelled normal→anomalous
// transitions. Cells are scored independently and the leaderboard is assembled
// by a canonical sort, so the worker count never changes the result.

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "segad/changefinder.hpp"
#include "segad/core.hpp"
#include "segad/data_io.hpp"

namespace segad {

struct ParamGrid {
    std::vector<double> r_values;
    std::vector<std::size_t> order_values;
    std::vector<std::size_t> smooth_values;
    std::vector<double> threshold_values;

    void validate() const {
        if (r_values.empty() || order_values.empty() || smooth_values.empty() || threshold_values.empty())
            throw Error("every grid axis needs at least one value");
        for (double r : r_values)
            for (auto k : order_values)
                for (auto s : smooth_values)
                    for (double th : threshold_values) ChangeFinderConfig{r, k, s, th}.validate();
    }

    std::size_t size() const {
        return r_values.size() * order_values.size() * smooth_values.size() * threshold_values.size();
    }
};

/// Text form: one `key = v1, v2, ...` line per axis (keys r, order, smooth,
/// threshold); `#` starts a comment.
inline ParamGrid parse_param_grid(const std::string& text) {
    ParamGrid grid;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (detail::trim(line).empty()) continue;
        if (eq == std::string::npos) throw Error("grid line without '=': " + line);
        const auto key = detail::trim(line.substr(0, eq));
        std::vector<std::string> items;
        std::stringstream values(line.substr(eq + 1));
        std::string item;
        while (std::getline(values, item, ','))
            if (!detail::trim(item).empty()) items.push_back(detail::trim(item));
        for (const auto& v : items) {
            if (key == "r")
                grid.r_values.push_back(parse_double(v));
            else if (key == "order")
                grid.order_values.push_back(std::stoul(v));
            else if (key == "smooth")
                grid.smooth_values.push_back(std::stoul(v));
            else if (key == "threshold")
                grid.threshold_values.push_back(parse_double(v));
            else
                throw Error("unknown grid key '" + key + "'");
        }
    }
    grid.validate();
    return grid;
}

inline ParamGrid load_param_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read grid file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_param_grid(ss.str());
}

struct TransitionSet {
    std::vector<std::size_t> indices;
};

/// Indices t with normal[t-1] = true and normal[t] = false.
inline TransitionSet transitions_from_labels(const Labels& normal) {
    TransitionSet out;
    for (std::size_t t = 1; t < normal.size(); ++t)
        if (normal[t - 1] && !normal[t]) out.indices.push_back(t);
    return out;
}

struct DetectionScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t true_positives = 0;
};

/// Greedy one-to-one matching of predictions to truths within `tolerance`
/// samples, closest pairs first (ties: earlier truth first, then earlier
/// prediction).
inline DetectionScore detection_f1(const std::vector<std::size_t>& predicted, const TransitionSet& truth,
                                   std::size_t tolerance) {
    struct Pair {
        std::size_t dist, ti, pi;
    };
    std::vector<Pair> pairs;
    for (std::size_t ti = 0; ti < truth.indices.size(); ++ti)
        for (std::size_t pi = 0; pi < predicted.size(); ++pi) {
            const auto a = truth.indices[ti], b = predicted[pi];
            const auto dist = a > b ? a - b : b - a;
            if (dist <= tolerance) pairs.push_back({dist, ti, pi});
        }
    std::sort(pairs.begin(), pairs.end(), [&](const Pair& x, const Pair& y) {
        return std::tie(x.dist, truth.indices[x.ti], predicted[x.pi]) <
               std::tie(y.dist, truth.indices[y.ti], predicted[y.pi]);
    });
    std::vector<bool> truth_used(truth.indices.size(), false), pred_used(predicted.size(), false);
    DetectionScore s;
    for (const auto& p : pairs) {
        if (truth_used[p.ti] || pred_used[p.pi]) continue;
        truth_used[p.ti] = pred_used[p.pi] = true;
        ++s.true_positives;
    }
    const auto tp = static_cast<double>(s.true_positives);
    s.precision = predicted.empty() ? 0.0 : tp / static_cast<double>(predicted.size());
    s.recall = truth.indices.empty() ? 0.0 : tp / static_cast<double>(truth.indices.size());
    s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

/// Signal-to-noise of the change score at true transitions: the mean over
/// truths of the peak score within ±tolerance, minus the mean score outside
/// every window, divided by the std outside every window. Only warmed-up
/// samples (t >= valid_from) take part.
inline double change_score_metric(const ScoreSeries& scores, const TransitionSet& truth, std::size_t tolerance) {
    if (truth.indices.empty()) throw Error("CS undefined without true transitions");
    const auto& cs = scores.change_score;
    const std::size_t n = cs.size();
    std::vector<bool> inside(n, false);
    double peak_sum = 0.0;
    std::size_t peaks = 0;
    for (auto t : truth.indices) {
        const std::size_t lo = t > tolerance ? t - tolerance : 0;
        const std::size_t hi = std::min(n - 1, t + tolerance);
        double peak = -kInf;
        for (std::size_t i = std::max(lo, scores.valid_from); i <= hi && i < n; ++i) {
            peak = std::max(peak, cs[i]);
        }
        for (std::size_t i = lo; i <= hi && i < n; ++i) inside[i] = true;
        if (std::isfinite(peak)) {
            peak_sum += peak;
            ++peaks;
        }
    }
    std::vector<double> background;
    for (std::size_t i = scores.valid_from; i < n; ++i)
        if (!inside[i]) background.push_back(cs[i]);
    if (peaks == 0 || background.empty()) throw Error("CS undefined: no scored samples in or around the truths");
    const double signal = peak_sum / static_cast<double>(peaks);
    return (signal - stats::mean(background)) / (stats::stddev(background) + 1e-12);
}

enum class Objective { f1, cs };

inline Objective objective_from_string(const std::string& s) {
    if (s == "f1") return Objective::f1;
    if (s == "cs") return Objective::cs;
    throw Error("objective must be f1 or cs, got '" + s + "'");
}

inline std::string to_string(Objective o) { return o == Objective::f1 ? "f1" : "cs"; }

struct LeaderboardRow {
    ChangeFinderConfig config;
    double f1 = -kInf;
    double cs = -kInf;
    std::size_t n_change_points = 0;
    std::string error;  // non-empty for failed cells

    bool failed() const { return !error.empty(); }
};

struct Leaderboard {
    Objective objective = Objective::f1;
    std::vector<LeaderboardRow> rows;

    const LeaderboardRow& best() const {
        if (rows.empty() || rows.front().failed()) throw Error("no grid cell succeeded");
        return rows.front();
    }
};

struct GridSearchOptions {
    Objective objective = Objective::f1;
    std::size_t tolerance = 0;  // 0 = 2 × smooth of each cell
    std::size_t threads = 1;
};

/// Evaluates every grid cell on the frame's channels against the normal→anomalous
/// transitions in `normal`. Failed cells are kept with −inf scores.
inline Leaderboard grid_search(const TimeSeriesFrame& frame, const Labels& normal, const ParamGrid& grid,
                               const GridSearchOptions& opts = {}) {
    grid.validate();
    const auto truth = transitions_from_labels(normal);
    if (truth.indices.empty()) throw Error("labels contain no normal-to-anomalous transition");

    // Scores depend on (r, order, smooth) only; thresholds just re-run detection.
    struct Triple {
        double r;
        std::size_t order, smooth;
    };
    std::vector<Triple> triples;
    for (double r : grid.r_values)
        for (auto k : grid.order_values)
            for (auto s : grid.smooth_values) triples.push_back({r, k, s});

    std::vector<std::vector<LeaderboardRow>> per_triple(triples.size());
    parallel_for(triples.size(), opts.threads, [&](std::size_t i) {
        const auto& tr = triples[i];
        const std::size_t tol = opts.tolerance == 0 ? 2 * tr.smooth : opts.tolerance;
        ScoreSeries scores;
        std::string score_error;
        try {
            scores = score_multichannel(frame, {tr.r, tr.order, tr.smooth, grid.threshold_values.front()});
        } catch (const std::exception& e) {
            score_error = e.what();
        }
        double cs_value = -kInf;
        if (score_error.empty()) {
            try {
                cs_value = change_score_metric(scores, truth, tol);
            } catch (const std::exception&) {
            }
        }
        for (double th : grid.threshold_values) {
            LeaderboardRow row;
            row.config = {tr.r, tr.order, tr.smooth, th};
            if (!score_error.empty()) {
                row.error = score_error;
            } else {
                const auto seg = detect_change_points(scores, row.config);
                row.n_change_points = seg.change_points.size();
                row.f1 = detection_f1(seg.change_points, truth, tol).f1;
                row.cs = cs_value;
            }
            per_triple[i].push_back(std::move(row));
        }
    });

    Leaderboard board;
    board.objective = opts.objective;
    for (auto& rows : per_triple)
        for (auto& row : rows) board.rows.push_back(std::move(row));
    auto key = [&](const LeaderboardRow& row) { return opts.objective == Objective::f1 ? row.f1 : row.cs; };
    std::sort(board.rows.begin(), board.rows.end(), [&](const LeaderboardRow& a, const LeaderboardRow& b) {
        if (key(a) != key(b)) return key(a) > key(b);
        return std::tie(a.config.r, a.config.order, a.config.smooth, a.config.threshold) <
               std::tie(b.config.r, b.config.order, b.config.smooth, b.config.threshold);
    });
    return board;
}

inline void write_leaderboard_csv(const Leaderboard& board, std::ostream& out) {
    out << "r,order,smooth,threshold,f1,cs,n_change_points\n";
    for (const auto& row : board.rows) {
        out << format_double(row.config.r) << ',' << row.config.order << ',' << row.config.smooth << ','
            << format_double(row.config.threshold) << ',' << format_double(row.f1) << ','
            << format_double(row.cs) << ',' << row.n_change_points << '\n';
    }
}

}  // namespace segad
