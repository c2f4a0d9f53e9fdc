#pragma once

// Sliding windows over a prepared frame, per-window statistical and trend
// features, forward-horizon labels and segmentation-derived augmentation.

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "segad/changefinder.hpp"
#include "segad/core.hpp"
#include "segad/data_io.hpp"

namespace segad {

struct WindowSpec {
    std::size_t window_len = 30;
    std::size_t stride = 10;
    std::size_t horizon = 30;

    void validate() const {
        if (window_len < 2) throw Error("window_len must be >= 2");
        if (stride < 1) throw Error("stride must be >= 1");
        if (horizon < 1) throw Error("horizon must be >= 1");
    }
};

/// Number of samples spanning `seconds` at the frame's median cadence.
inline std::size_t samples_for_duration(const TimeSeriesFrame& frame, double seconds) {
    if (frame.size() < 2) throw Error("need at least two samples to infer the cadence");
    std::vector<double> gaps;
    gaps.reserve(frame.size() - 1);
    for (std::size_t i = 1; i < frame.size(); ++i)
        gaps.push_back(static_cast<double>(frame.timestamps[i] - frame.timestamps[i - 1]));
    const double cadence = stats::median(std::move(gaps));
    return std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(seconds / cadence)));
}

struct WindowMeta {
    std::size_t start = 0;
    std::size_t end = 0;          // exclusive
    std::size_t horizon_end = 0;  // exclusive
    std::int64_t timestamp = 0;   // of the window's last sample

    friend bool operator==(const WindowMeta&, const WindowMeta&) = default;
};

struct WindowDataset {
    Matrix features;
    std::vector<int> labels;  // 1 = anomalous within the horizon
    std::vector<std::string> feature_names;
    std::vector<WindowMeta> meta;
    std::size_t series_length = 0;

    std::size_t size() const { return labels.size(); }

    WindowDataset subset(const std::vector<std::size_t>& rows) const {
        WindowDataset out;
        out.features = features.select_rows(rows);
        out.feature_names = feature_names;
        out.series_length = series_length;
        for (auto r : rows) {
            out.labels.push_back(labels[r]);
            out.meta.push_back(meta[r]);
        }
        return out;
    }
};

inline constexpr std::size_t kFeaturesPerChannel = 8;
inline constexpr const char* kFeatureSuffixes[kFeaturesPerChannel] = {
    "mean", "std", "min", "max", "last", "slope", "mean_abs_diff", "exceed_count"};

/// Per-channel 95th percentile of the given rows, used as the "critical"
/// exceedance level.
inline std::vector<double> fit_exceedance_thresholds(const TimeSeriesFrame& frame, std::size_t row_end,
                                                     double q = 0.95) {
    row_end = std::min(row_end, frame.size());
    if (row_end == 0) throw Error("no rows to fit exceedance thresholds on");
    std::vector<double> out(frame.n_channels());
    for (std::size_t c = 0; c < frame.n_channels(); ++c) {
        std::vector<double> col(row_end);
        for (std::size_t r = 0; r < row_end; ++r) col[r] = frame.values(r, c);
        out[c] = stats::quantile(std::move(col), q);
    }
    return out;
}

/// Features of one channel over one window: mean, population std, min, max,
/// last value, least-squares slope over the sample index, mean |first
/// difference|, and the number of samples above `threshold`.
inline std::array<double, kFeaturesPerChannel> channel_features(std::span<const double> w, double threshold) {
    const auto n = static_cast<double>(w.size());
    const double mean = stats::mean(w);
    double ss = 0.0, sxy = 0.0, sxx = 0.0, absdiff = 0.0, exceed = 0.0;
    const double xbar = (n - 1.0) / 2.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = w[i] - mean;
        ss += d * d;
        const double xi = static_cast<double>(i) - xbar;
        sxy += xi * d;
        sxx += xi * xi;
        if (i > 0) absdiff += std::abs(w[i] - w[i - 1]);
        if (w[i] > threshold) exceed += 1.0;
    }
    const auto [mn, mx] = std::minmax_element(w.begin(), w.end());
    return {mean, std::sqrt(ss / n), *mn, *mx, w.back(), sxx > 0.0 ? sxy / sxx : 0.0, absdiff / (n - 1.0), exceed};
}

/// Feature vector for rows [start, start+len) of `values`, channel-major.
inline std::vector<double> extract_features(const Matrix& values, std::size_t start, std::size_t len,
                                            std::span<const double> thresholds) {
    if (len < 2) throw Error("windows need at least 2 samples");
    std::vector<double> out;
    out.reserve(values.cols() * kFeaturesPerChannel);
    std::vector<double> w(len);
    for (std::size_t c = 0; c < values.cols(); ++c) {
        for (std::size_t i = 0; i < len; ++i) w[i] = values(start + i, c);
        const auto f = channel_features(w, thresholds[c]);
        out.insert(out.end(), f.begin(), f.end());
    }
    return out;
}

inline WindowDataset make_windows(const TimeSeriesFrame& frame, const WindowSpec& spec,
                                  std::span<const double> thresholds, std::size_t threads = 1) {
    spec.validate();
    if (!frame.labels) throw Error("windowing needs a labelled frame");
    if (thresholds.size() != frame.n_channels()) throw Error("one exceedance threshold per channel required");
    const std::size_t n = frame.size();
    if (n < spec.window_len + spec.horizon) throw Error("series too short for the window spec");

    WindowDataset ds;
    ds.series_length = n;
    for (const auto& ch : frame.channels)
        for (const char* suffix : kFeatureSuffixes) ds.feature_names.push_back(ch + "__" + suffix);
    for (std::size_t s = 0; s + spec.window_len + spec.horizon <= n; s += spec.stride)
        ds.meta.push_back({s, s + spec.window_len, s + spec.window_len + spec.horizon,
                           frame.timestamps[s + spec.window_len - 1]});

    ds.features = Matrix(ds.meta.size(), ds.feature_names.size());
    ds.labels.assign(ds.meta.size(), 0);
    const auto& normal = *frame.labels;
    parallel_for(ds.meta.size(), threads, [&](std::size_t i) {
        const auto& m = ds.meta[i];
        const auto f = extract_features(frame.values, m.start, spec.window_len, thresholds);
        std::copy(f.begin(), f.end(), ds.features.row(i).begin());
        for (std::size_t t = m.end; t < m.horizon_end; ++t)
            if (!normal[t]) {
                ds.labels[i] = 1;
                break;
            }
    });
    return ds;
}

inline constexpr std::size_t kSegmentationFeatures = 4;

/// Appends change-score mean and max over the window, samples since the last
/// change point at the window's final sample (series length if none yet), and
/// a flag for a change point strictly inside the window. With
/// `drop_straddling`, windows carrying the flag are removed.
inline WindowDataset augment_with_segmentation(const WindowDataset& ds, const ScoreSeries& scores,
                                               const Segmentation& seg, bool drop_straddling = false) {
    if (scores.size() != ds.series_length) throw Error("score series and windows use different index spaces");
    for (const auto& [b, e] : seg.segments)
        if (e > ds.series_length || b > e) throw Error("segmentation and windows use different index spaces");
    const auto& cps = seg.change_points;
    const auto& cs = scores.change_score;

    WindowDataset out;
    out.series_length = ds.series_length;
    out.feature_names = ds.feature_names;
    for (const char* name : {"seg__change_mean", "seg__change_max", "seg__since_change", "seg__straddles_change"})
        out.feature_names.push_back(name);
    const std::size_t base = ds.features.cols();
    std::vector<double> row(base + kSegmentationFeatures);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& m = ds.meta[i];
        double sum = 0.0, mx = -kInf;
        for (std::size_t t = m.start; t < m.end; ++t) {
            sum += cs[t];
            mx = std::max(mx, cs[t]);
        }
        const std::size_t last = m.end - 1;
        auto it = std::upper_bound(cps.begin(), cps.end(), last);
        const double since = it == cps.begin() ? static_cast<double>(ds.series_length)
                                               : static_cast<double>(last - *std::prev(it));
        const auto inside = std::upper_bound(cps.begin(), cps.end(), m.start);
        const bool straddles = inside != cps.end() && *inside < m.end;
        if (drop_straddling && straddles) continue;
        auto src = ds.features.row(i);
        std::copy(src.begin(), src.end(), row.begin());
        row[base + 0] = sum / static_cast<double>(m.end - m.start);
        row[base + 1] = mx;
        row[base + 2] = since;
        row[base + 3] = straddles ? 1.0 : 0.0;
        out.features.push_row(row);
        out.labels.push_back(ds.labels[i]);
        out.meta.push_back(m);
    }
    if (out.features.cols() == 0) out.features = Matrix(0, base + kSegmentationFeatures);
    return out;
}

struct SplitResult {
    WindowDataset train;
    WindowDataset test;
};

/// Windows whose horizon ends by `split_index` train; windows starting at or
/// after it test; windows crossing the boundary are discarded.
inline SplitResult temporal_split(const WindowDataset& ds, std::size_t split_index) {
    if (split_index > ds.series_length) throw Error("split index outside the series");
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.meta[i].horizon_end <= split_index)
            train.push_back(i);
        else if (ds.meta[i].start >= split_index)
            test.push_back(i);
    }
    if (train.empty()) throw Error("empty train partition");
    if (test.empty()) throw Error("empty test partition");
    return {ds.subset(train), ds.subset(test)};
}

inline void write_window_csv(const WindowDataset& ds, std::ostream& out) {
    out << "# series_length=" << ds.series_length << '\n';
    for (const auto& name : ds.feature_names) out << name << ',';
    out << "label,start,end,horizon_end,timestamp\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.features.row(i)) out << format_double(v) << ',';
        const auto& m = ds.meta[i];
        out << ds.labels[i] << ',' << m.start << ',' << m.end << ',' << m.horizon_end << ',' << m.timestamp << '\n';
    }
}

inline WindowDataset read_window_csv(std::istream& in) {
    WindowDataset ds;
    std::string line;
    auto take_length = [&](const std::string& t) {
        if (t.rfind("# series_length=", 0) == 0) ds.series_length = std::stoull(t.substr(16));
    };
    do {
        if (!std::getline(in, line)) throw Error("window CSV has no header row");
        take_length(detail::trim(line));
    } while (detail::is_comment(line) || detail::trim(line).empty());
    auto header = detail::split_csv_line(line);
    constexpr std::size_t kMeta = 5;
    if (header.size() < kMeta || header[header.size() - kMeta] != "label") throw Error("not a window CSV");
    ds.feature_names.assign(header.begin(), header.end() - kMeta);
    const std::size_t d = ds.feature_names.size();
    std::vector<double> row(d);
    while (std::getline(in, line)) {
        const auto t = detail::trim(line);
        if (t.empty() || detail::is_comment(t)) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) throw Error("window CSV row has the wrong cell count");
        for (std::size_t j = 0; j < d; ++j) row[j] = parse_double(cells[j]);
        ds.features.push_row(row);
        const int label = std::stoi(cells[d]);
        if (label != 0 && label != 1) throw Error("window labels must be 0 or 1");
        ds.labels.push_back(label);
        ds.meta.push_back({std::stoull(cells[d + 1]), std::stoull(cells[d + 2]), std::stoull(cells[d + 3]),
                           std::stoll(cells[d + 4])});
    }
    if (ds.features.cols() == 0) ds.features = Matrix(0, d);
    for (const auto& m : ds.meta) ds.series_length = std::max(ds.series_length, m.horizon_end);
    return ds;
}

}  // namespace segad
