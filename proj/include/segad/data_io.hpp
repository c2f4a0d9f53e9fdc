#pragma once

// Sensor frames, Normal-Operating-Condition intervals, CSV ingestion and the
// seeded synthetic regime-switching generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "segad/core.hpp"

namespace segad {

/// Per-sample state labels. true = normal operation.
using Labels = std::vector<bool>;

struct TimeSeriesFrame {
    std::vector<std::int64_t> timestamps;  // epoch seconds, strictly increasing
    std::vector<std::string> channels;
    Matrix values;  // [n_samples x n_channels], NaN = missing
    std::optional<Labels> labels;

    std::size_t size() const { return timestamps.size(); }
    std::size_t n_channels() const { return channels.size(); }

    std::size_t channel_index(const std::string& name) const {
        const auto it = std::find(channels.begin(), channels.end(), name);
        if (it == channels.end()) throw Error("missing channel '" + name + "'");
        return static_cast<std::size_t>(it - channels.begin());
    }

    void validate() const {
        for (std::size_t i = 1; i < timestamps.size(); ++i)
            if (timestamps[i] <= timestamps[i - 1])
                throw Error("non-monotonic timestamps at row " + std::to_string(i));
        if (values.rows() != timestamps.size() || values.cols() != channels.size())
            throw Error("frame shape does not match timestamps/channels");
        std::set<std::string> seen;
        for (const auto& c : channels)
            if (!seen.insert(c).second) throw Error("duplicate channel name '" + c + "'");
        if (labels && labels->size() != timestamps.size())
            throw Error("label count does not match sample count");
    }

    /// Rows [begin, end) as a new frame.
    TimeSeriesFrame slice(std::size_t begin, std::size_t end) const {
        TimeSeriesFrame out;
        out.channels = channels;
        out.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + end);
        out.values = Matrix(end - begin, channels.size());
        for (std::size_t r = begin; r < end; ++r) {
            auto src = values.row(r);
            std::copy(src.begin(), src.end(), out.values.row(r - begin).begin());
        }
        if (labels) out.labels = Labels(labels->begin() + begin, labels->begin() + end);
        return out;
    }
};

struct NocInterval {
    std::int64_t start = 0;
    std::int64_t end = 0;
    friend bool operator==(const NocInterval&, const NocInterval&) = default;
};

/// Closed intervals [start, end], sorted by start, pairwise disjoint.
struct NocIntervals {
    std::vector<NocInterval> intervals;

    void validate() const {
        for (std::size_t i = 0; i < intervals.size(); ++i) {
            if (intervals[i].start >= intervals[i].end)
                throw Error("NoC interval end must be after start");
            if (i > 0 && intervals[i].start <= intervals[i - 1].end)
                throw Error("NoC intervals overlap");
        }
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '"')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '"'))
        --e;
    return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

// Days since 1970-01-01 for a proleptic Gregorian date.
inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
        if (s[i] < '0' || s[i] > '9') return false;
    return true;
}

}  // namespace detail

/// Integer epoch seconds or ISO-8601 `YYYY-MM-DD[(T| )HH:MM[:SS]][Z]` (UTC).
inline std::int64_t parse_timestamp(const std::string& text) {
    if (detail::all_digits(text)) return std::stoll(text);
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    char sep = 0;
    int fields = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
    const bool date_only = fields == 3;
    const bool with_time = fields >= 6 && (sep == 'T' || sep == ' ');
    if (!(date_only || with_time) || mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 ||
        s > 60)
        throw Error("unparseable timestamp '" + text + "'");
    return detail::days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 +
           h * 3600 + mi * 60 + s;
}

namespace detail {

/// Lines starting with '#' carry provenance headers and are skipped on load.
inline bool is_comment(std::string_view line) {
    const auto t = trim(line);
    return !t.empty() && t[0] == '#';
}

}  // namespace detail

/// Column holding per-sample labels when a frame is written with labels.
inline const std::string kLabelColumn = "normal";

/// Loads a sensor CSV. All columns except the timestamp (and an optional 0/1
/// `normal` label column) become channels; empty cells become missing values.
inline TimeSeriesFrame load_csv(const std::string& path, const std::string& timestamp_column = "") {
    std::ifstream in(path);
    if (!in) throw Error("cannot read '" + path + "'");
    std::string line;
    do {
        if (!std::getline(in, line)) throw Error("'" + path + "' has no header row");
    } while (detail::is_comment(line) || detail::trim(line).empty());
    const auto header = detail::split_csv_line(line);

    std::size_t ts_col = 0;
    if (!timestamp_column.empty()) {
        const auto it = std::find(header.begin(), header.end(), timestamp_column);
        if (it == header.end()) throw Error("no timestamp column '" + timestamp_column + "'");
        ts_col = static_cast<std::size_t>(it - header.begin());
    }
    std::optional<std::size_t> label_col;
    std::vector<std::size_t> channel_cols;
    TimeSeriesFrame frame;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == ts_col) continue;
        if (header[c] == kLabelColumn) {
            label_col = c;
            continue;
        }
        channel_cols.push_back(c);
        frame.channels.push_back(header[c]);
    }
    {
        std::set<std::string> seen;
        for (const auto& name : frame.channels)
            if (!seen.insert(name).second) throw Error("duplicate channel name '" + name + "'");
    }
    if (label_col) frame.labels.emplace();

    std::vector<double> row(channel_cols.size());
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty() || detail::is_comment(line)) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw Error("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " cells");
        frame.timestamps.push_back(parse_timestamp(cells[ts_col]));
        for (std::size_t j = 0; j < channel_cols.size(); ++j) {
            const auto& cell = cells[channel_cols[j]];
            row[j] = cell.empty() ? kMissing : parse_double(cell);
        }
        frame.values.push_row(row);
        if (label_col) frame.labels->push_back(cells[*label_col] == "1");
    }
    if (frame.values.cols() == 0) frame.values = Matrix(frame.timestamps.size(), frame.channels.size());
    frame.validate();
    return frame;
}

inline void write_csv(const TimeSeriesFrame& frame, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << "timestamp";
    for (const auto& c : frame.channels) out << ',' << c;
    if (frame.labels) out << ',' << kLabelColumn;
    out << '\n';
    for (std::size_t r = 0; r < frame.size(); ++r) {
        out << frame.timestamps[r];
        for (std::size_t c = 0; c < frame.n_channels(); ++c) {
            out << ',';
            const double v = frame.values(r, c);
            if (!is_missing(v)) out << format_double(v);
        }
        if (frame.labels) out << ',' << ((*frame.labels)[r] ? 1 : 0);
        out << '\n';
    }
}

/// Two-column `start,end` CSV. A missing header row or an empty file yields an
/// empty interval list.
inline NocIntervals load_noc(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read NoC file '" + path + "'");
    NocIntervals noc;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty() || detail::is_comment(line)) continue;
        const auto cells = detail::split_csv_line(line);
        if (first) {
            first = false;
            if (cells.size() == 2 && cells[0] == "start" && cells[1] == "end") continue;
        }
        if (cells.size() != 2) throw Error("NoC rows need exactly two cells");
        noc.intervals.push_back({parse_timestamp(cells[0]), parse_timestamp(cells[1])});
    }
    for (const auto& iv : noc.intervals)
        if (iv.end <= iv.start) throw Error("NoC interval end must be after start");
    std::sort(noc.intervals.begin(), noc.intervals.end(),
              [](const auto& a, const auto& b) { return a.start < b.start; });
    noc.validate();
    return noc;
}

inline void write_noc(const NocIntervals& noc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << "start,end\n";
    for (const auto& iv : noc.intervals) out << iv.start << ',' << iv.end << '\n';
}

/// A sample is normal iff its timestamp lies in some closed interval.
inline TimeSeriesFrame label_from_noc(TimeSeriesFrame frame, const NocIntervals& noc) {
    Labels labels(frame.size(), false);
    std::size_t k = 0;
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const auto t = frame.timestamps[i];
        while (k < noc.intervals.size() && noc.intervals[k].end < t) ++k;
        labels[i] = k < noc.intervals.size() && noc.intervals[k].start <= t;
    }
    frame.labels = std::move(labels);
    return frame;
}

inline std::vector<std::size_t> load_change_points(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read '" + path + "'");
    std::vector<std::size_t> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto t = detail::trim(line);
        if (t.empty() || detail::is_comment(t)) continue;
        if (!detail::all_digits(t)) throw Error("bad change-point index '" + t + "'");
        out.push_back(static_cast<std::size_t>(std::stoull(t)));
    }
    return out;
}

inline void write_change_points(const std::vector<std::size_t>& cps, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    for (auto cp : cps) out << cp << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic regime-switching data
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::size_t n_samples = 50000;
    std::size_t n_channels = 10;
    std::size_t n_regime_shifts = 8;
    double anomaly_fraction = 0.0156;
    double noise_sigma = 1.0;
    double shift_magnitude_sigma = 4.0;
    std::uint64_t seed = 42;

    std::size_t n_anomaly_intervals = 4;
    double ar_coefficient = 0.7;
    double variance_factor = 1.2;   // noise scale inside anomalies
    double drift_sigma = 0.5;       // end-of-interval drift, in noise_sigma units
    double affected_fraction = 0.4; // share of channels carrying the anomaly
    std::int64_t start_epoch = 1577836800;
    std::int64_t cadence_seconds = 60;

    void validate() const {
        if (n_samples < 1 || n_channels < 1) throw Error("sample and channel counts must be >= 1");
        if (!(anomaly_fraction > 0.0 && anomaly_fraction < 0.5)) throw Error("anomaly_fraction must lie in (0, 0.5)");
        if (!(noise_sigma > 0.0)) throw Error("noise_sigma must be > 0");
        if (!(shift_magnitude_sigma > 0.0)) throw Error("shift_magnitude_sigma must be > 0");
        if (!(std::abs(ar_coefficient) < 1.0)) throw Error("ar_coefficient must lie in (-1, 1)");
        if (!(variance_factor > 0.0)) throw Error("variance_factor must be > 0");
        if (!(affected_fraction >= 0.0 && affected_fraction <= 1.0)) throw Error("affected_fraction must lie in [0, 1]");
        if (cadence_seconds < 1) throw Error("cadence_seconds must be >= 1");
    }
};

struct SynthResult {
    TimeSeriesFrame frame;  // labelled
    NocIntervals noc;
    std::vector<std::size_t> change_points;
};

/// Normal runs of `normal` as closed timestamp intervals.
inline NocIntervals noc_from_labels(const std::vector<std::int64_t>& timestamps, const Labels& normal) {
    NocIntervals noc;
    std::size_t i = 0;
    while (i < normal.size()) {
        if (!normal[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < normal.size() && normal[j + 1]) ++j;
        if (j > i) {
            noc.intervals.push_back({timestamps[i], timestamps[j]});
        } else {
            // A lone normal sample still needs start < end; widen into the gap
            // before the next sample, which no other sample can fall into.
            const std::int64_t end = i + 1 < timestamps.size() ? timestamps[i + 1] - 1 : timestamps[i] + 1;
            noc.intervals.push_back({timestamps[i], std::max(end, timestamps[i] + 1)});
        }
        i = j + 1;
    }
    return noc;
}

/// AR(1) channels with regime shifts (mean steps on every channel) at one
/// random index per equal-width stratum. Anomaly intervals start exactly at
/// evenly spaced shifts and carry inflated noise plus a linear drift on the
/// affected channels. Pure function of the config.
inline SynthResult generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.n_samples, S = cfg.n_regime_shifts;
    const auto total = static_cast<std::size_t>(std::llround(cfg.anomaly_fraction * static_cast<double>(n)));
    const std::size_t M = total == 0 ? 0 : std::min(cfg.n_anomaly_intervals, S);
    if (total > 0 && M == 0) throw Error("anomaly intervals need at least one regime shift to start at");

    std::vector<std::size_t> lengths(M);
    for (std::size_t i = 0; i < M; ++i) lengths[i] = total / M + (i < total % M ? 1 : 0);
    const std::size_t longest = M == 0 ? 0 : lengths.front();

    // Strata keep shifts apart; each shift reserves room for an interval.
    const std::size_t margin = std::min<std::size_t>(200, n / 10);
    std::vector<std::size_t> shifts;
    {
        Rng rng(derive_seed(cfg.seed, "synth/shifts"));
        for (std::size_t i = 0; i < S; ++i) {
            const std::size_t lo = margin + (n - 2 * margin) * i / S;
            const std::size_t hi = margin + (n - 2 * margin) * (i + 1) / S;
            if (hi <= lo + longest || hi <= lo) throw Error("anomaly intervals would overlap or exceed series length");
            const std::size_t shift = lo + rng.index(hi - lo - longest);
            if (shift == 0) throw Error("series too short for the requested regime shifts");
            shifts.push_back(shift);
        }
    }

    std::vector<char> anomalous(n, 0);
    std::vector<std::pair<std::size_t, std::size_t>> intervals;  // [start, end)
    for (std::size_t i = 0; i < M; ++i) {
        if (lengths[i] == 0) continue;
        const std::size_t start = shifts[(2 * i + 1) * S / (2 * M)];
        const std::size_t end = start + lengths[i];
        if (end > n) throw Error("anomaly intervals would overlap or exceed series length");
        for (std::size_t t = start; t < end; ++t) {
            if (anomalous[t]) throw Error("anomaly intervals would overlap or exceed series length");
            anomalous[t] = 1;
        }
        intervals.emplace_back(start, end);
    }

    SynthResult out;
    auto& frame = out.frame;
    frame.timestamps.resize(n);
    for (std::size_t t = 0; t < n; ++t)
        frame.timestamps[t] = cfg.start_epoch + cfg.cadence_seconds * static_cast<std::int64_t>(t);
    for (std::size_t c = 0; c < cfg.n_channels; ++c) frame.channels.push_back("ch" + std::to_string(c));
    frame.values = Matrix(n, cfg.n_channels);

    const auto n_affected = static_cast<std::size_t>(
        std::llround(cfg.affected_fraction * static_cast<double>(cfg.n_channels)));
    const double sigma = cfg.noise_sigma, phi = cfg.ar_coefficient;
    const double innovation_sd = sigma * std::sqrt(1.0 - phi * phi);
    const std::uint64_t channel_root = derive_seed(cfg.seed, "synth/channels");
    for (std::size_t c = 0; c < cfg.n_channels; ++c) {
        Rng rng(derive_seed(channel_root, static_cast<std::uint64_t>(c)));
        const bool affected = c < n_affected;
        std::vector<double> level(n, 50.0 + 10.0 * static_cast<double>(c));
        for (auto s : shifts) {
            const double step = (rng.uniform() < 0.5 ? -1.0 : 1.0) * cfg.shift_magnitude_sigma * sigma;
            for (std::size_t t = s; t < n; ++t) level[t] += step;
        }
        std::vector<double> drift(n, 0.0);
        if (affected)
            for (const auto& [b, e] : intervals) {
                const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                const std::size_t len = e - b;
                for (std::size_t t = b; t < e && len > 1; ++t)
                    drift[t] = sign * cfg.drift_sigma * sigma * static_cast<double>(t - b) / static_cast<double>(len - 1);
            }
        double z = rng.normal(0.0, sigma);
        for (std::size_t t = 0; t < n; ++t) {
            const double scale = affected && anomalous[t] ? cfg.variance_factor : 1.0;
            const double e = rng.normal(0.0, innovation_sd) * scale;
            z = t == 0 ? z * scale : phi * z + e;
            frame.values(t, c) = level[t] + z + drift[t];
        }
    }

    Labels normal(n);
    for (std::size_t t = 0; t < n; ++t) normal[t] = !anomalous[t];
    out.noc = noc_from_labels(frame.timestamps, normal);
    frame.labels = std::move(normal);
    out.change_points = std::move(shifts);
    return out;
}

}  // namespace segad
