#pragma once

// Cleaning, distribution-aware normalisation and multi-step feature selection.
// Everything learnt on the training frame is captured in a PrepPlan that is
// re-applied verbatim to any later frame.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "segad/core.hpp"
#include "segad/data_io.hpp"
#include "segad/serialize.hpp"

namespace segad {

enum class ShapeClass { near_symmetric, moderately_skewed, heavily_skewed };

inline std::string to_string(ShapeClass s) {
    switch (s) {
        case ShapeClass::near_symmetric: return "near_symmetric";
        case ShapeClass::moderately_skewed: return "moderately_skewed";
        case ShapeClass::heavily_skewed: return "heavily_skewed";
    }
    return "?";
}

inline ShapeClass shape_from_string(const std::string& s) {
    if (s == "near_symmetric") return ShapeClass::near_symmetric;
    if (s == "moderately_skewed") return ShapeClass::moderately_skewed;
    if (s == "heavily_skewed") return ShapeClass::heavily_skewed;
    throw Error("unknown shape class '" + s + "'");
}

enum class TransformKind { identity, yeo_johnson, winsorize };

inline std::string to_string(TransformKind k) {
    switch (k) {
        case TransformKind::identity: return "identity";
        case TransformKind::yeo_johnson: return "yeo_johnson";
        case TransformKind::winsorize: return "winsorize";
    }
    return "?";
}

inline TransformKind transform_from_string(const std::string& s) {
    if (s == "identity") return TransformKind::identity;
    if (s == "yeo_johnson") return TransformKind::yeo_johnson;
    if (s == "winsorize") return TransformKind::winsorize;
    throw Error("unknown transform '" + s + "'");
}

/// How one channel is imputed and transformed. `winsorize` clips to [lo, hi]
/// and then applies Yeo-Johnson with `lambda`.
struct ColumnTransform {
    TransformKind kind = TransformKind::identity;
    double lambda = 1.0;
    double lo = 0.0;
    double hi = 0.0;
    double impute_median = 0.0;
};

struct RelevanceScore {
    double anova_f = 0.0;
    double mutual_info = 0.0;
};

struct PrepConfig {
    double near_symmetric_skew = 0.5;
    double heavy_skew = 2.0;
    double heavy_kurtosis = 10.0;
    double winsor_lo = 0.01;
    double winsor_hi = 0.99;
    double variance_floor = 1e-8;
    std::size_t top_k = 20;
    std::size_t mi_bins = 16;
    double collinearity_threshold = 0.95;
    std::size_t threads = 1;
};

struct ChannelRecord {
    std::string name;
    ShapeClass shape = ShapeClass::near_symmetric;
    ColumnTransform transform;
    RelevanceScore relevance;  // only meaningful for channels that passed the variance gate
};

struct PrepPlan {
    PrepConfig config;
    std::vector<std::string> dropped_null_channels;
    std::vector<ChannelRecord> channels;  // every non-null input channel, input order
    std::vector<std::string> low_variance_dropped;
    std::vector<std::string> collinearity_dropped;
    std::vector<std::string> selected_channels;

    const ChannelRecord& record(const std::string& name) const {
        for (const auto& c : channels)
            if (c.name == name) return c;
        throw Error("plan has no record for channel '" + name + "'");
    }
};

// ---------------------------------------------------------------------------
// Cleaning
// ---------------------------------------------------------------------------

struct CleanResult {
    TimeSeriesFrame frame;
    std::vector<std::string> dropped_null_channels;
    std::map<std::string, double> medians;
};

/// Median over non-missing, non-negative values; nullopt when there are none.
inline std::optional<double> valid_median(std::span<const double> column) {
    std::vector<double> valid;
    valid.reserve(column.size());
    for (double v : column)
        if (!is_missing(v) && v >= 0.0) valid.push_back(v);
    if (valid.empty()) return std::nullopt;
    return stats::median(std::move(valid));
}

inline double impute(double v, double median) { return (is_missing(v) || v < 0.0) ? median : v; }

/// Drops channels with no usable reading and replaces missing and negative
/// values by the channel's median of valid readings.
inline CleanResult clean(const TimeSeriesFrame& frame) {
    if (frame.size() == 0) throw Error("cannot clean an empty frame");
    CleanResult out;
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < frame.n_channels(); ++c) {
        const auto med = valid_median(frame.values.column(c));
        if (!med) {
            out.dropped_null_channels.push_back(frame.channels[c]);
            continue;
        }
        keep.push_back(c);
        out.medians[frame.channels[c]] = *med;
    }
    if (keep.empty()) throw Error("all channels are entirely missing");
    out.frame.timestamps = frame.timestamps;
    out.frame.labels = frame.labels;
    out.frame.values = Matrix(frame.size(), keep.size());
    for (std::size_t j = 0; j < keep.size(); ++j) {
        const auto& name = frame.channels[keep[j]];
        out.frame.channels.push_back(name);
        const double med = out.medians[name];
        for (std::size_t r = 0; r < frame.size(); ++r)
            out.frame.values(r, j) = impute(frame.values(r, keep[j]), med);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Distribution shape
// ---------------------------------------------------------------------------

inline ShapeClass classify_distribution(std::span<const double> column, const PrepConfig& cfg = {}) {
    std::vector<double> x;
    for (double v : column)
        if (!is_missing(v)) x.push_back(v);
    if (x.size() < 3) throw Error("shape classification needs at least 3 values");
    if (stats::variance(x) <= 0.0) return ShapeClass::near_symmetric;
    const double g1 = std::abs(stats::skewness(x));
    const double g2 = stats::excess_kurtosis(x);
    if (g1 < cfg.near_symmetric_skew) return ShapeClass::near_symmetric;
    if (g1 < cfg.heavy_skew && g2 < cfg.heavy_kurtosis) return ShapeClass::moderately_skewed;
    return ShapeClass::heavily_skewed;
}

// ---------------------------------------------------------------------------
// Yeo-Johnson
// ---------------------------------------------------------------------------

inline double yeo_johnson(double lambda, double x) {
    constexpr double eps = 1e-12;
    if (x >= 0.0) {
        if (std::abs(lambda) < eps) return std::log1p(x);
        return (std::pow(x + 1.0, lambda) - 1.0) / lambda;
    }
    if (std::abs(lambda - 2.0) < eps) return -std::log1p(-x);
    return -(std::pow(1.0 - x, 2.0 - lambda) - 1.0) / (2.0 - lambda);
}

/// Gaussian profile log-likelihood of the transformed sample, Jacobian included.
inline double yeo_johnson_loglik(std::span<const double> x, double lambda) {
    const auto n = static_cast<double>(x.size());
    std::vector<double> y(x.size());
    double jac = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = yeo_johnson(lambda, x[i]);
        if (!std::isfinite(y[i])) return -kInf;
        jac += std::copysign(std::log1p(std::abs(x[i])), x[i]);
    }
    const double var = stats::variance(y);
    if (!(var > 0.0) || !std::isfinite(var)) return -kInf;
    return -0.5 * n * std::log(var) + (lambda - 1.0) * jac;
}

/// Maximum-likelihood lambda: grid over [-5, 5] in steps of 0.1, then
/// golden-section refinement around the best grid point to |Δλ| < 1e-4.
inline double fit_yeo_johnson(std::span<const double> column) {
    std::vector<double> x;
    for (double v : column)
        if (!is_missing(v)) x.push_back(v);
    if (x.size() < 2 || stats::variance(x) <= 0.0)
        throw Error("Yeo-Johnson fit needs a column with nonzero variance");

    double best = 1.0, best_ll = -kInf;
    for (int i = -50; i <= 50; ++i) {
        const double lambda = 0.1 * i;
        const double ll = yeo_johnson_loglik(x, lambda);
        if (ll > best_ll) {
            best_ll = ll;
            best = lambda;
        }
    }
    if (!std::isfinite(best_ll)) throw Error("Yeo-Johnson likelihood is degenerate");

    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::max(-5.0, best - 0.1), b = std::min(5.0, best + 0.1);
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = yeo_johnson_loglik(x, c), fd = yeo_johnson_loglik(x, d);
    while (b - a > 1e-4) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = yeo_johnson_loglik(x, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = yeo_johnson_loglik(x, d);
        }
    }
    const double refined = 0.5 * (a + b);
    return yeo_johnson_loglik(x, refined) >= best_ll ? refined : best;
}

// ---------------------------------------------------------------------------
// Winsorisation
// ---------------------------------------------------------------------------

inline std::pair<double, double> winsorize_fit(std::span<const double> column, double p_lo, double p_hi) {
    if (!(0.0 <= p_lo && p_lo < p_hi && p_hi <= 1.0)) throw Error("winsorize percentiles out of order");
    std::vector<double> x;
    for (double v : column)
        if (!is_missing(v)) x.push_back(v);
    if (x.empty()) throw Error("cannot winsorize an empty column");
    std::sort(x.begin(), x.end());
    return {stats::quantile_sorted(x, p_lo), stats::quantile_sorted(x, p_hi)};
}

inline double winsorize(double v, double lo, double hi) { return std::clamp(v, lo, hi); }

inline double apply_transform(const ColumnTransform& t, double v) {
    switch (t.kind) {
        case TransformKind::identity: return v;
        case TransformKind::yeo_johnson: return yeo_johnson(t.lambda, v);
        case TransformKind::winsorize: return yeo_johnson(t.lambda, winsorize(v, t.lo, t.hi));
    }
    return v;
}

// ---------------------------------------------------------------------------
// Relevance scores
// ---------------------------------------------------------------------------

/// One-way ANOVA F statistic for the two groups split by label. Returns +inf
/// for a perfect separator (zero within-group scatter, nonzero between).
inline double anova_f(std::span<const double> column, const Labels& labels) {
    double sum[2] = {0, 0};
    double count[2] = {0, 0};
    for (std::size_t i = 0; i < column.size(); ++i) {
        sum[labels[i]] += column[i];
        count[labels[i]] += 1;
    }
    if (count[0] == 0 || count[1] == 0) throw Error("ANOVA needs both classes present");
    const double n = count[0] + count[1];
    const double grand = (sum[0] + sum[1]) / n;
    const double mean[2] = {sum[0] / count[0], sum[1] / count[1]};
    double ssb = 0.0, ssw = 0.0;
    for (int g = 0; g < 2; ++g) ssb += count[g] * (mean[g] - grand) * (mean[g] - grand);
    for (std::size_t i = 0; i < column.size(); ++i) {
        const double d = column[i] - mean[labels[i]];
        ssw += d * d;
    }
    if (ssb <= 0.0) return 0.0;
    if (ssw <= 0.0) return kInf;
    return (ssb / 1.0) / (ssw / (n - 2.0));
}

/// Plug-in mutual information (nats) between an equal-width binning of the
/// column and the label.
inline double mutual_info(std::span<const double> column, const Labels& labels, std::size_t n_bins = 16) {
    if (n_bins < 2) throw Error("mutual information needs at least 2 bins");
    if (column.empty()) return 0.0;
    const auto [mn, mx] = std::minmax_element(column.begin(), column.end());
    const double lo = *mn, hi = *mx;
    if (!(hi > lo)) return 0.0;
    std::vector<double> joint(n_bins * 2, 0.0);
    const double width = (hi - lo) / static_cast<double>(n_bins);
    for (std::size_t i = 0; i < column.size(); ++i) {
        auto b = static_cast<std::size_t>((column[i] - lo) / width);
        b = std::min(b, n_bins - 1);
        joint[b * 2 + (labels[i] ? 1 : 0)] += 1.0;
    }
    const auto n = static_cast<double>(column.size());
    double py[2] = {0, 0};
    std::vector<double> pb(n_bins, 0.0);
    for (std::size_t b = 0; b < n_bins; ++b)
        for (int y = 0; y < 2; ++y) {
            pb[b] += joint[b * 2 + y] / n;
            py[y] += joint[b * 2 + y] / n;
        }
    double mi = 0.0;
    for (std::size_t b = 0; b < n_bins; ++b)
        for (int y = 0; y < 2; ++y) {
            const double p = joint[b * 2 + y] / n;
            if (p > 0.0) mi += p * std::log(p / (pb[b] * py[y]));
        }
    return std::max(0.0, mi);
}

// ---------------------------------------------------------------------------
// Fit / apply
// ---------------------------------------------------------------------------

namespace detail {

inline ColumnTransform fit_column_transform(std::span<const double> x, ShapeClass shape, const PrepConfig& cfg) {
    ColumnTransform t;
    if (shape == ShapeClass::near_symmetric || stats::variance(x) <= 0.0) return t;
    std::vector<double> base(x.begin(), x.end());
    if (shape == ShapeClass::heavily_skewed) {
        t.kind = TransformKind::winsorize;
        std::tie(t.lo, t.hi) = winsorize_fit(base, cfg.winsor_lo, cfg.winsor_hi);
        for (auto& v : base) v = winsorize(v, t.lo, t.hi);
        if (stats::variance(base) <= 0.0) return t;  // lambda stays 1: clip only
    } else {
        t.kind = TransformKind::yeo_johnson;
    }
    t.lambda = fit_yeo_johnson(base);
    return t;
}

/// Higher priority first: MI desc, then ANOVA-F desc, then name asc.
inline bool higher_priority(const ChannelRecord& a, const ChannelRecord& b) {
    if (a.relevance.mutual_info != b.relevance.mutual_info)
        return a.relevance.mutual_info > b.relevance.mutual_info;
    if (a.relevance.anova_f != b.relevance.anova_f) return a.relevance.anova_f > b.relevance.anova_f;
    return a.name < b.name;
}

}  // namespace detail

/// Fits the full preparation plan on a training frame. `normal` is the
/// per-sample state (true = normal); relevance is scored against it.
inline PrepPlan fit_prep(const TimeSeriesFrame& frame, const Labels& normal, const PrepConfig& cfg = {}) {
    if (normal.size() != frame.size()) throw Error("label count does not match frame");
    auto cleaned = clean(frame);
    const auto& cf = cleaned.frame;
    PrepPlan plan;
    plan.config = cfg;
    plan.dropped_null_channels = cleaned.dropped_null_channels;
    plan.channels.resize(cf.n_channels());

    std::vector<std::vector<double>> transformed(cf.n_channels());
    parallel_for(cf.n_channels(), cfg.threads, [&](std::size_t c) {
        auto& rec = plan.channels[c];
        rec.name = cf.channels[c];
        const auto col = cf.values.column(c);
        rec.shape = classify_distribution(col, cfg);
        rec.transform = detail::fit_column_transform(col, rec.shape, cfg);
        rec.transform.impute_median = cleaned.medians.at(rec.name);
        auto& out = transformed[c];
        out.resize(col.size());
        for (std::size_t i = 0; i < col.size(); ++i) out[i] = apply_transform(rec.transform, col[i]);
    });

    std::vector<std::size_t> candidates;
    for (std::size_t c = 0; c < cf.n_channels(); ++c) {
        if (stats::variance(transformed[c]) < cfg.variance_floor) {
            plan.low_variance_dropped.push_back(plan.channels[c].name);
            continue;
        }
        candidates.push_back(c);
    }
    parallel_for(candidates.size(), cfg.threads, [&](std::size_t i) {
        const auto c = candidates[i];
        plan.channels[c].relevance.anova_f = anova_f(transformed[c], normal);
        plan.channels[c].relevance.mutual_info = mutual_info(transformed[c], normal, cfg.mi_bins);
    });

    // Union of the top-k channels under each ranking.
    std::vector<bool> in_top(cf.n_channels(), false);
    auto take_top = [&](auto score) {
        auto order = candidates;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double sa = score(plan.channels[a]), sb = score(plan.channels[b]);
            if (sa != sb) return sa > sb;
            return plan.channels[a].name < plan.channels[b].name;
        });
        for (std::size_t i = 0; i < std::min(cfg.top_k, order.size()); ++i) in_top[order[i]] = true;
    };
    take_top([](const ChannelRecord& r) { return r.relevance.anova_f; });
    take_top([](const ChannelRecord& r) { return r.relevance.mutual_info; });

    std::vector<std::size_t> ranked;
    for (auto c : candidates)
        if (in_top[c]) ranked.push_back(c);
    std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        return detail::higher_priority(plan.channels[a], plan.channels[b]);
    });

    // Greedy pruning in priority order: a channel survives unless it is too
    // correlated with an already kept, higher-priority channel.
    std::vector<std::size_t> kept;
    for (auto c : ranked) {
        bool redundant = false;
        for (auto k : kept)
            if (std::abs(stats::pearson(transformed[c], transformed[k])) > cfg.collinearity_threshold) {
                redundant = true;
                break;
            }
        if (redundant)
            plan.collinearity_dropped.push_back(plan.channels[c].name);
        else
            kept.push_back(c);
    }
    if (kept.size() < 2) throw Error("fewer than 2 channels survive preparation");
    std::sort(kept.begin(), kept.end());
    for (auto c : kept) plan.selected_channels.push_back(plan.channels[c].name);
    return plan;
}

/// Applies stored medians, transforms and selection. Nothing is refitted.
inline TimeSeriesFrame apply_prep(const PrepPlan& plan, const TimeSeriesFrame& frame) {
    TimeSeriesFrame out;
    out.timestamps = frame.timestamps;
    out.labels = frame.labels;
    out.channels = plan.selected_channels;
    out.values = Matrix(frame.size(), plan.selected_channels.size());
    for (std::size_t j = 0; j < plan.selected_channels.size(); ++j) {
        const auto& name = plan.selected_channels[j];
        const auto src = frame.channel_index(name);
        const auto& t = plan.record(name).transform;
        for (std::size_t r = 0; r < frame.size(); ++r)
            out.values(r, j) = apply_transform(t, impute(frame.values(r, src), t.impute_median));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline json to_json(const PrepConfig& c) {
    return {{"near_symmetric_skew", c.near_symmetric_skew},
            {"heavy_skew", c.heavy_skew},
            {"heavy_kurtosis", c.heavy_kurtosis},
            {"winsor_lo", c.winsor_lo},
            {"winsor_hi", c.winsor_hi},
            {"variance_floor", c.variance_floor},
            {"top_k", c.top_k},
            {"mi_bins", c.mi_bins},
            {"collinearity_threshold", c.collinearity_threshold}};
}

inline PrepConfig prep_config_from_json(const json& j) {
    PrepConfig c;
    c.near_symmetric_skew = j.at("near_symmetric_skew").get<double>();
    c.heavy_skew = j.at("heavy_skew").get<double>();
    c.heavy_kurtosis = j.at("heavy_kurtosis").get<double>();
    c.winsor_lo = j.at("winsor_lo").get<double>();
    c.winsor_hi = j.at("winsor_hi").get<double>();
    c.variance_floor = j.at("variance_floor").get<double>();
    c.top_k = j.at("top_k").get<std::size_t>();
    c.mi_bins = j.at("mi_bins").get<std::size_t>();
    c.collinearity_threshold = j.at("collinearity_threshold").get<double>();
    return c;
}

inline json to_json(const PrepPlan& plan) {
    json channels = json::array();
    for (const auto& r : plan.channels) {
        channels.push_back({{"name", r.name},
                            {"shape", to_string(r.shape)},
                            {"transform", to_string(r.transform.kind)},
                            {"lambda", number_to_json(r.transform.lambda)},
                            {"lo", number_to_json(r.transform.lo)},
                            {"hi", number_to_json(r.transform.hi)},
                            {"impute_median", number_to_json(r.transform.impute_median)},
                            {"anova_f", number_to_json(r.relevance.anova_f)},
                            {"mutual_info", number_to_json(r.relevance.mutual_info)}});
    }
    return {{"schema_version", kSchemaVersion},
            {"kind", "prep_plan"},
            {"config", to_json(plan.config)},
            {"dropped_null_channels", plan.dropped_null_channels},
            {"channels", channels},
            {"low_variance_dropped", plan.low_variance_dropped},
            {"collinearity_dropped", plan.collinearity_dropped},
            {"selected_channels", plan.selected_channels}};
}

inline PrepPlan prep_plan_from_json(const json& j) {
    expect_artifact(j, "prep_plan");
    PrepPlan plan;
    plan.config = prep_config_from_json(j.at("config"));
    plan.dropped_null_channels = j.at("dropped_null_channels").get<std::vector<std::string>>();
    for (const auto& c : j.at("channels")) {
        ChannelRecord r;
        r.name = c.at("name").get<std::string>();
        r.shape = shape_from_string(c.at("shape").get<std::string>());
        r.transform.kind = transform_from_string(c.at("transform").get<std::string>());
        r.transform.lambda = number_from_json(c.at("lambda"));
        r.transform.lo = number_from_json(c.at("lo"));
        r.transform.hi = number_from_json(c.at("hi"));
        r.transform.impute_median = number_from_json(c.at("impute_median"));
        r.relevance.anova_f = number_from_json(c.at("anova_f"));
        r.relevance.mutual_info = number_from_json(c.at("mutual_info"));
        plan.channels.push_back(std::move(r));
    }
    plan.low_variance_dropped = j.at("low_variance_dropped").get<std::vector<std::string>>();
    plan.collinearity_dropped = j.at("collinearity_dropped").get<std::vector<std::string>>();
    plan.selected_channels = j.at("selected_channels").get<std::vector<std::string>>();
    return plan;
}

inline void save_prep_plan(const PrepPlan& plan, const std::string& path) { write_json_file(to_json(plan), path); }

inline PrepPlan load_prep_plan(const std::string& path) { return prep_plan_from_json(read_json_file(path)); }

}  // namespace segad
