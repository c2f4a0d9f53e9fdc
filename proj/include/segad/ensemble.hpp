#pragma once

// Soft-voting ensembles and the evaluation suite: confusion-based metrics,
// rank AUC-ROC and run-to-run comparison tables.

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "segad/core.hpp"
#include "segad/detectors.hpp"
#include "segad/serialize.hpp"

namespace segad {

struct EnsembleModel {
    std::vector<DetectorModel> members;

    void validate() const {
        if (members.size() < 2) throw Error("an ensemble needs at least 2 members");
        for (const auto& m : members)
            if (m.n_features != members.front().n_features) throw Error("ensemble members disagree on feature count");
    }

    std::size_t n_features() const { return members.front().n_features; }
};

/// Unweighted mean of member probabilities.
inline std::vector<double> ensemble_predict(const EnsembleModel& model, const Matrix& X, std::size_t threads = 1) {
    model.validate();
    if (X.cols() != model.n_features()) throw Error("feature dimension mismatch");
    std::vector<double> out(X.rows(), 0.0);
    parallel_for(X.rows(), threads, [&](std::size_t i) {
        double s = 0.0;
        for (const auto& m : model.members) s += m.predict_proba(X.row(i));
        out[i] = s / static_cast<double>(model.members.size());
    });
    return out;
}

inline void save_ensemble(const EnsembleModel& model, const std::string& path) {
    json members = json::array();
    for (const auto& m : model.members) members.push_back(to_json(m));
    write_json_file({{"schema_version", kSchemaVersion}, {"kind", "ensemble_model"}, {"combiner", "mean"},
                     {"members", members}},
                    path);
}

inline EnsembleModel load_ensemble(const std::string& path) {
    const auto j = read_json_file(path);
    expect_artifact(j, "ensemble_model");
    if (j.value("combiner", "") != "mean") throw Error("unsupported ensemble combiner");
    EnsembleModel model;
    for (const auto& m : j.at("members")) model.members.push_back(detector_model_from_json(m));
    model.validate();
    return model;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct EvalReport {
    ClassMetrics normal;  // class 0
    ClassMetrics fault;   // class 1
    std::size_t tn = 0, fp = 0, fn = 0, tp = 0;
    double auc_roc = kMissing;  // NaN when the test set has a single class
    double decision_threshold = 0.5;
    std::uint64_t label_fingerprint = 0;

    std::size_t n() const { return tn + fp + fn + tp; }
};

inline std::uint64_t label_fingerprint(std::span<const int> labels) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int v : labels) h = (h ^ static_cast<std::uint64_t>(v + 1)) * 0x100000001b3ULL;
    return splitmix64(h ^ labels.size());
}

/// Mann-Whitney statistic with midranks for tied scores.
inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error("scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t)
            if (labels[idx[t]] == 1) {
                rank_sum += midrank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw Error("AUC-ROC needs both classes");
    const auto np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

inline ClassMetrics class_metrics(std::size_t tp, std::size_t fp, std::size_t fn) {
    ClassMetrics m;
    m.support = tp + fn;
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

inline EvalReport classification_report(std::span<const double> probs, std::span<const int> labels,
                                        double threshold = 0.5) {
    if (probs.size() != labels.size()) throw Error("probabilities and labels differ in length");
    EvalReport r;
    r.decision_threshold = threshold;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool pred = probs[i] >= threshold;
        if (labels[i] == 1)
            pred ? ++r.tp : ++r.fn;
        else
            pred ? ++r.fp : ++r.tn;
    }
    r.fault = class_metrics(r.tp, r.fp, r.fn);
    r.normal = class_metrics(r.tn, r.fn, r.fp);
    if (r.tp + r.fn > 0 && r.tn + r.fp > 0) r.auc_roc = auc_roc(probs, labels);
    r.label_fingerprint = label_fingerprint(labels);
    return r;
}

inline json to_json(const EvalReport& r) {
    auto cls = [](const ClassMetrics& m) {
        return json{{"precision", number_to_json(m.precision)},
                    {"recall", number_to_json(m.recall)},
                    {"f1", number_to_json(m.f1)},
                    {"support", m.support}};
    };
    return {{"schema_version", kSchemaVersion},
            {"kind", "eval_report"},
            {"class_0", cls(r.normal)},
            {"class_1", cls(r.fault)},
            {"confusion", {{"tn", r.tn}, {"fp", r.fp}, {"fn", r.fn}, {"tp", r.tp}}},
            {"auc_roc", number_to_json(r.auc_roc)},
            {"decision_threshold", number_to_json(r.decision_threshold)},
            {"label_fingerprint", r.label_fingerprint}};
}

inline EvalReport eval_report_from_json(const json& j) {
    expect_artifact(j, "eval_report");
    auto cls = [](const json& c) {
        return ClassMetrics{number_from_json(c.at("precision")), number_from_json(c.at("recall")),
                            number_from_json(c.at("f1")), c.at("support").get<std::size_t>()};
    };
    EvalReport r;
    try {
        r.normal = cls(j.at("class_0"));
        r.fault = cls(j.at("class_1"));
        const auto& c = j.at("confusion");
        r.tn = c.at("tn").get<std::size_t>();
        r.fp = c.at("fp").get<std::size_t>();
        r.fn = c.at("fn").get<std::size_t>();
        r.tp = c.at("tp").get<std::size_t>();
        r.auc_roc = number_from_json(j.at("auc_roc"));
        r.decision_threshold = number_from_json(j.at("decision_threshold"));
        r.label_fingerprint = j.at("label_fingerprint").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw Error(std::string("malformed eval report: ") + e.what());
    }
    return r;
}

namespace detail {

inline std::string fixed(double v, int digits = 4) {
    if (!std::isfinite(v)) return format_double(v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string signed_fixed(double v, int digits = 4) {
    if (!std::isfinite(v)) return format_double(v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.*f", digits, v);
    return buf;
}

}  // namespace detail

/// Human-readable report laid out as a per-class metrics table.
inline void write_report_text(const EvalReport& r, std::ostream& out, const std::string& title = "") {
    if (!title.empty()) out << title << '\n';
    out << "Case        Precision  Recall  F1-score  Support\n";
    auto line = [&](const char* name, const ClassMetrics& m) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-10s  %9.4f  %6.4f  %8.4f  %7zu\n", name, m.precision, m.recall, m.f1,
                      m.support);
        out << buf;
    };
    line("0 (normal)", r.normal);
    line("1 (fault)", r.fault);
    out << "AUC-ROC: " << detail::fixed(r.auc_roc) << "  (threshold " << format_double(r.decision_threshold)
        << ")\n";
    out << "Confusion: tn=" << r.tn << " fp=" << r.fp << " fn=" << r.fn << " tp=" << r.tp << '\n';
}

inline void write_report_csv(const EvalReport& r, std::ostream& out) {
    out << "class,precision,recall,f1,support\n";
    out << "0," << format_double(r.normal.precision) << ',' << format_double(r.normal.recall) << ','
        << format_double(r.normal.f1) << ',' << r.normal.support << '\n';
    out << "1," << format_double(r.fault.precision) << ',' << format_double(r.fault.recall) << ','
        << format_double(r.fault.f1) << ',' << r.fault.support << '\n';
    out << "auc_roc," << format_double(r.auc_roc) << ",,,\n";
}

struct ComparisonRow {
    std::string metric;
    double a = 0.0, b = 0.0, delta = 0.0;
};

/// Per-metric deltas a − b.
inline std::vector<ComparisonRow> compare_runs(const EvalReport& a, const EvalReport& b) {
    if (a.n() != b.n() || a.label_fingerprint != b.label_fingerprint || a.tp + a.fn != b.tp + b.fn)
        throw Error("reports were computed on different test sets");
    std::vector<ComparisonRow> rows;
    auto add = [&](std::string name, double x, double y) { rows.push_back({std::move(name), x, y, x - y}); };
    add("precision_0", a.normal.precision, b.normal.precision);
    add("recall_0", a.normal.recall, b.normal.recall);
    add("f1_0", a.normal.f1, b.normal.f1);
    add("precision_1", a.fault.precision, b.fault.precision);
    add("recall_1", a.fault.recall, b.fault.recall);
    add("f1_1", a.fault.f1, b.fault.f1);
    add("auc_roc", a.auc_roc, b.auc_roc);
    return rows;
}

inline void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& out) {
    out << "metric,a,b,delta\n";
    for (const auto& r : rows)
        out << r.metric << ',' << format_double(r.a) << ',' << format_double(r.b) << ',' << format_double(r.delta)
            << '\n';
}

inline void write_comparison_text(const std::vector<ComparisonRow>& rows, std::ostream& out) {
    out << "Metric        A        B        Delta\n";
    for (const auto& r : rows) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-12s  %-7s  %-7s  %s\n", r.metric.c_str(), detail::fixed(r.a).c_str(),
                      detail::fixed(r.b).c_str(), detail::signed_fixed(r.delta).c_str());
        out << buf;
    }
}

}  // namespace segad
