#pragma once

// Health Index: inverted anomaly probability, trailing moving average and
// two-level alarms (warnings on the smoothed trace, alerts on the raw trace).

#include <ostream>
#include <vector>

#include "segad/changefinder.hpp"
#include "segad/core.hpp"

namespace segad {

struct HealthConfig {
    std::size_t smooth_window = 60;
    double warning_threshold = 0.5;
    double alert_threshold = 0.25;
};

struct HealthSeries {
    std::vector<double> hi;
    std::vector<double> hi_smoothed;
    std::vector<std::size_t> warnings;  // hi_smoothed < warning threshold
    std::vector<std::size_t> alerts;    // hi < alert threshold
    HealthConfig config;
};

inline std::vector<double> health_index(std::span<const double> probs) {
    std::vector<double> hi(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw Error("probability outside [0, 1]");
        hi[i] = 1.0 - probs[i];
    }
    return hi;
}

inline std::vector<double> smooth_hi(std::span<const double> hi, std::size_t window) {
    if (window < 1) throw Error("smoothing window must be >= 1");
    // Direct sums: no running-sum drift, and window 1 is an exact copy.
    std::vector<double> out(hi.size());
    for (std::size_t i = 0; i < hi.size(); ++i) {
        const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
        double sum = 0.0;
        for (std::size_t j = lo; j <= i; ++j) sum += hi[j];
        out[i] = sum / static_cast<double>(i + 1 - lo);
    }
    return out;
}

inline HealthSeries compute_health(std::span<const double> probs, const HealthConfig& cfg = {}) {
    HealthSeries s;
    s.config = cfg;
    s.hi = health_index(probs);
    s.hi_smoothed = smooth_hi(s.hi, cfg.smooth_window);
    for (std::size_t i = 0; i < s.hi.size(); ++i) {
        if (s.hi_smoothed[i] < cfg.warning_threshold) s.warnings.push_back(i);
        if (s.hi[i] < cfg.alert_threshold) s.alerts.push_back(i);
    }
    return s;
}

struct Alarm {
    enum class Level { warning, alert } level;
    std::size_t window_index;
    std::int64_t timestamp;
};

/// Warnings and alerts in window order, stamped with each window's timestamp.
inline std::vector<Alarm> extract_alarms(const HealthSeries& s, std::span<const std::int64_t> timestamps) {
    if (timestamps.size() != s.hi.size()) throw Error("one timestamp per window required");
    std::vector<Alarm> out;
    std::size_t w = 0, a = 0;
    while (w < s.warnings.size() || a < s.alerts.size()) {
        const bool take_warning = a >= s.alerts.size() || (w < s.warnings.size() && s.warnings[w] <= s.alerts[a]);
        if (take_warning) {
            out.push_back({Alarm::Level::warning, s.warnings[w], timestamps[s.warnings[w]]});
            ++w;
        } else {
            out.push_back({Alarm::Level::alert, s.alerts[a], timestamps[s.alerts[a]]});
            ++a;
        }
    }
    return out;
}

/// Plot-ready trace: window_index, timestamp, hi, hi_smoothed, warning, alert.
inline void write_health_csv(const HealthSeries& s, std::span<const std::int64_t> timestamps, std::ostream& out) {
    if (timestamps.size() != s.hi.size()) throw Error("one timestamp per window required");
    out << "# warning_threshold=" << format_double(s.config.warning_threshold)
        << " alert_threshold=" << format_double(s.config.alert_threshold)
        << " smooth_window=" << s.config.smooth_window << '\n';
    out << "window_index,timestamp,hi,hi_smoothed,warning,alert\n";
    for (std::size_t i = 0; i < s.hi.size(); ++i)
        out << i << ',' << timestamps[i] << ',' << format_double(s.hi[i]) << ',' << format_double(s.hi_smoothed[i])
            << ',' << (s.hi_smoothed[i] < s.config.warning_threshold ? 1 : 0) << ','
            << (s.hi[i] < s.config.alert_threshold ? 1 : 0) << '\n';
}

}  // namespace segad
