#pragma once

// From-scratch anomaly scorers behind one model type: CART, random forest,
// second-order gradient-boosted trees, isolation forest, PCA reconstruction
// error and KMeans distance.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "segad/core.hpp"
#include "segad/serialize.hpp"

namespace segad {

enum class ClassWeighting { none, inverse_frequency };

inline std::string to_string(ClassWeighting w) { return w == ClassWeighting::none ? "none" : "inverse_frequency"; }

inline ClassWeighting class_weighting_from_string(const std::string& s) {
    if (s == "none") return ClassWeighting::none;
    if (s == "inverse_frequency") return ClassWeighting::inverse_frequency;
    throw Error("class_weighting must be none or inverse_frequency, got '" + s + "'");
}

struct TrainConfig {
    std::uint64_t seed = 42;
    std::size_t n_trees = 100;
    std::size_t max_depth = 16;
    std::size_t min_samples_leaf = 1;
    std::size_t max_features = 0;  // 0 = ceil(sqrt(d))
    bool bootstrap = true;
    std::size_t gbt_rounds = 100;
    std::size_t gbt_max_depth = 4;
    double learning_rate = 0.1;
    double reg_lambda = 1.0;
    double gamma = 0.0;
    ClassWeighting class_weighting = ClassWeighting::inverse_frequency;
    std::size_t n_components = 2;
    std::size_t k_clusters = 2;
    std::size_t iforest_subsample = 256;
    std::size_t threads = 1;

    void validate() const {
        if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw Error("learning_rate must lie in (0, 1]");
        if (!(reg_lambda >= 0.0)) throw Error("reg_lambda must be >= 0");
        if (!(gamma >= 0.0)) throw Error("gamma must be >= 0");
        if (n_trees == 0) throw Error("n_trees must be >= 1");
        if (min_samples_leaf == 0) throw Error("min_samples_leaf must be >= 1");
        if (iforest_subsample < 2) throw Error("iforest_subsample must be >= 2");
    }
};

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf output (isolation trees: leaf size)

    bool is_leaf() const { return feature < 0; }
    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Binary tree; samples with x[feature] <= threshold go left.
struct Tree {
    std::vector<TreeNode> nodes;

    std::size_t leaf_index(std::span<const double> x) const {
        std::size_t i = 0;
        while (!nodes[i].is_leaf())
            i = static_cast<std::size_t>(x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
        return i;
    }

    double predict(std::span<const double> x) const { return nodes[leaf_index(x)].value; }

    std::size_t depth() const {
        std::vector<std::size_t> d(nodes.size(), 0);
        std::size_t best = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            best = std::max(best, d[i]);
            if (!nodes[i].is_leaf()) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
        }
        return best;
    }

    friend bool operator==(const Tree&, const Tree&) = default;
};

namespace detail {

/// Weighted Gini impurity criterion.
struct GiniCriterion {
    struct Stats {
        double w = 0.0, wp = 0.0;
        std::size_t n = 0;
        void add(const Stats& o) { w += o.w, wp += o.wp, n += o.n; }
        Stats minus(const Stats& o) const { return {w - o.w, wp - o.wp, n - o.n}; }
    };
    std::vector<Stats> rows;

    static double impurity(const Stats& s) {
        if (s.w <= 0.0) return 0.0;
        const double p = s.wp / s.w;
        return s.w * 2.0 * p * (1.0 - p);
    }
    double gain(const Stats& parent, const Stats& l, const Stats& r) const {
        return impurity(parent) - impurity(l) - impurity(r);
    }
    double leaf(const Stats& s) const { return s.w > 0.0 ? s.wp / s.w : 0.0; }
    bool pure(const Stats& s) const { return s.wp <= 0.0 || s.wp >= s.w; }
};

/// Second-order logistic boosting criterion.
struct NewtonCriterion {
    struct Stats {
        double g = 0.0, h = 0.0;
        std::size_t n = 0;
        void add(const Stats& o) { g += o.g, h += o.h, n += o.n; }
        Stats minus(const Stats& o) const { return {g - o.g, h - o.h, n - o.n}; }
    };
    std::vector<Stats> rows;
    double lambda = 1.0;
    double gamma = 0.0;

    double term(const Stats& s) const { return s.h + lambda > 0.0 ? s.g * s.g / (s.h + lambda) : 0.0; }
    double gain(const Stats& parent, const Stats& l, const Stats& r) const {
        return 0.5 * (term(l) + term(r) - term(parent)) - gamma;
    }
    double leaf(const Stats& s) const { return s.h + lambda > 0.0 ? -s.g / (s.h + lambda) : 0.0; }
    bool pure(const Stats&) const { return false; }
};

struct GrowParams {
    std::size_t max_depth = 16;
    std::size_t min_samples_leaf = 1;
    std::size_t max_features = 0;  // 0 = all
};

using SortedColumns = std::vector<std::vector<std::uint32_t>>;

/// Per-feature row orders (ascending value, ties by row index) restricted to
/// rows with `keep[row]`.
inline SortedColumns presort(const Matrix& X, const std::vector<char>* keep = nullptr) {
    SortedColumns out(X.cols());
    for (std::size_t f = 0; f < X.cols(); ++f) {
        auto& idx = out[f];
        for (std::uint32_t r = 0; r < X.rows(); ++r)
            if (!keep || (*keep)[r]) idx.push_back(r);
        std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return X(a, f) < X(b, f); });
    }
    return out;
}

/// Restricts global sorted orders to the kept rows, preserving order.
inline SortedColumns filter_sorted(const SortedColumns& all, const std::vector<char>& keep) {
    SortedColumns out(all.size());
    for (std::size_t f = 0; f < all.size(); ++f) {
        out[f].reserve(all[f].size());
        for (auto r : all[f])
            if (keep[r]) out[f].push_back(r);
    }
    return out;
}

template <typename Crit>
class Grower {
public:
    Grower(const Matrix& X, const Crit& crit, const GrowParams& p, Rng* rng)
        : X_(X), crit_(crit), p_(p), rng_(rng), goes_left_(X.rows(), 0) {}

    Tree grow(SortedColumns order) {
        Tree tree;
        tree.nodes.emplace_back();
        split(tree, 0, 0, order);
        return tree;
    }

private:
    using Stats = typename Crit::Stats;

    std::vector<std::size_t> candidate_features() {
        const std::size_t d = X_.cols();
        std::vector<std::size_t> feats(d);
        std::iota(feats.begin(), feats.end(), 0);
        if (p_.max_features == 0 || p_.max_features >= d || !rng_) return feats;
        for (std::size_t i = 0; i < p_.max_features; ++i) std::swap(feats[i], feats[i + rng_->index(d - i)]);
        feats.resize(p_.max_features);
        std::sort(feats.begin(), feats.end());
        return feats;
    }

    void split(Tree& tree, std::size_t node, std::size_t depth, SortedColumns& order) {
        Stats total;
        for (auto r : order[0]) total.add(crit_.rows[r]);
        tree.nodes[node].value = crit_.leaf(total);
        if (depth >= p_.max_depth || crit_.pure(total) || total.n < 2 * p_.min_samples_leaf) return;

        double best_gain = 0.0;
        int best_feature = -1;
        double best_threshold = 0.0;
        for (auto f : candidate_features()) {
            const auto& idx = order[f];
            Stats left;
            for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
                left.add(crit_.rows[idx[i]]);
                const double a = X_(idx[i], f), b = X_(idx[i + 1], f);
                if (!(a < b)) continue;
                const Stats right = total.minus(left);
                if (left.n < p_.min_samples_leaf || right.n < p_.min_samples_leaf) continue;
                const double g = crit_.gain(total, left, right);
                if (g > best_gain) {
                    best_gain = g;
                    best_feature = static_cast<int>(f);
                    double thr = a + (b - a) / 2.0;
                    if (!(thr < b)) thr = a;
                    best_threshold = thr;
                }
            }
        }
        if (best_feature < 0) return;

        for (auto r : order[0]) goes_left_[r] = X_(r, best_feature) <= best_threshold;
        SortedColumns left_order(order.size()), right_order(order.size());
        for (std::size_t f = 0; f < order.size(); ++f) {
            for (auto r : order[f]) (goes_left_[r] ? left_order[f] : right_order[f]).push_back(r);
            std::vector<std::uint32_t>().swap(order[f]);
        }
        const auto li = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        const auto ri = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        auto& n = tree.nodes[node];
        n.feature = best_feature;
        n.threshold = best_threshold;
        n.left = li;
        n.right = ri;
        split(tree, static_cast<std::size_t>(li), depth + 1, left_order);
        split(tree, static_cast<std::size_t>(ri), depth + 1, right_order);
    }

    const Matrix& X_;
    const Crit& crit_;
    GrowParams p_;
    Rng* rng_;
    std::vector<char> goes_left_;
};

inline void check_xy(const Matrix& X, std::span<const int> y) {
    if (X.rows() == 0) throw Error("empty training input");
    if (y.size() != X.rows()) throw Error("label count does not match row count");
    for (int v : y)
        if (v != 0 && v != 1) throw Error("labels must be 0 or 1");
}

inline void require_both_classes(std::span<const int> y) {
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size()))
        throw Error("training labels contain a single class");
}

}  // namespace detail

/// Per-sample weights: 1 for every sample, or n / (2 n_class) with
/// inverse-frequency weighting.
inline std::vector<double> class_weights(std::span<const int> y, ClassWeighting mode) {
    std::vector<double> w(y.size(), 1.0);
    if (mode == ClassWeighting::none) return w;
    const auto pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
    const auto neg = static_cast<double>(y.size()) - pos;
    const auto n = static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double c = y[i] == 1 ? pos : neg;
        w[i] = c > 0.0 ? n / (2.0 * c) : 1.0;
    }
    return w;
}

/// CART on weighted Gini impurity, considering every feature at every split.
inline Tree fit_tree(const Matrix& X, std::span<const int> y, std::span<const double> weights,
                     const TrainConfig& cfg) {
    detail::check_xy(X, y);
    if (weights.size() != y.size()) throw Error("weight count does not match row count");
    detail::GiniCriterion crit;
    crit.rows.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) crit.rows[i] = {weights[i], y[i] == 1 ? weights[i] : 0.0, 1};
    detail::Grower<detail::GiniCriterion> grower(X, crit, {cfg.max_depth, cfg.min_samples_leaf, 0}, nullptr);
    return grower.grow(detail::presort(X));
}

// ---------------------------------------------------------------------------
// Calibration and the model type
// ---------------------------------------------------------------------------

struct MinMaxCalibration {
    double lo = 0.0;
    double hi = 0.0;

    static MinMaxCalibration fit(std::span<const double> raw) {
        if (raw.empty()) throw Error("calibration needs at least one score");
        const auto [mn, mx] = std::minmax_element(raw.begin(), raw.end());
        return {*mn, *mx};
    }

    /// Clamped min-max mapping; 0.5 when the training scores were constant.
    double apply(double raw) const {
        if (std::isnan(raw)) return 1.0;
        if (!(hi > lo)) return 0.5;
        return std::clamp((raw - lo) / (hi - lo), 0.0, 1.0);
    }

    friend bool operator==(const MinMaxCalibration&, const MinMaxCalibration&) = default;
};

enum class DetectorKind { random_forest, gbt, isolation_forest, pca, kmeans };

inline std::string to_string(DetectorKind k) {
    switch (k) {
        case DetectorKind::random_forest: return "random_forest";
        case DetectorKind::gbt: return "gbt";
        case DetectorKind::isolation_forest: return "isolation_forest";
        case DetectorKind::pca: return "pca";
        case DetectorKind::kmeans: return "kmeans";
    }
    return "unknown";
}

inline DetectorKind detector_kind_from_string(const std::string& s) {
    for (auto k : {DetectorKind::random_forest, DetectorKind::gbt, DetectorKind::isolation_forest, DetectorKind::pca,
                   DetectorKind::kmeans})
        if (to_string(k) == s) return k;
    throw Error("unknown detector kind '" + s + "'");
}

/// Average path length of an unsuccessful BST search over n points.
inline double iforest_c(std::size_t n) {
    if (n <= 1) return 0.0;
    if (n == 2) return 1.0;
    double h = 0.0;
    for (std::size_t i = 1; i <= n - 1; ++i) h += 1.0 / static_cast<double>(i);
    const auto nn = static_cast<double>(n);
    return 2.0 * h - 2.0 * (nn - 1.0) / nn;
}

/// Isolation score 2^(-E[h] / c(n)).
inline double iforest_score(double mean_path, std::size_t n) { return std::pow(2.0, -mean_path / iforest_c(n)); }

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct DetectorModel {
    DetectorKind kind = DetectorKind::random_forest;
    std::size_t n_features = 0;
    std::vector<Tree> trees;  // forest, boosted or isolation trees
    double base_score = 0.0;  // gbt: log-odds
    double learning_rate = 0.1;
    std::vector<double> train_loss;  // gbt: logloss after each round
    std::size_t subsample = 0;       // isolation forest
    std::vector<double> mean;        // pca
    Matrix components;               // pca: one axis per row
    Matrix centroids;                // kmeans
    std::optional<MinMaxCalibration> calibration;

    bool supervised() const { return kind == DetectorKind::random_forest || kind == DetectorKind::gbt; }

    double raw_score(std::span<const double> x) const {
        if (x.size() != n_features) throw Error("feature count mismatch");
        switch (kind) {
            case DetectorKind::random_forest: {
                double s = 0.0;
                for (const auto& t : trees) s += t.predict(x);
                return s / static_cast<double>(trees.size());
            }
            case DetectorKind::gbt: {
                double z = base_score;
                for (const auto& t : trees) z += learning_rate * t.predict(x);
                return z;
            }
            case DetectorKind::isolation_forest: {
                double h = 0.0;
                for (const auto& t : trees) {
                    std::size_t i = 0, depth = 0;
                    while (!t.nodes[i].is_leaf()) {
                        const auto& nd = t.nodes[i];
                        i = static_cast<std::size_t>(x[nd.feature] <= nd.threshold ? nd.left : nd.right);
                        ++depth;
                    }
                    h += static_cast<double>(depth) + iforest_c(static_cast<std::size_t>(t.nodes[i].value));
                }
                return iforest_score(h / static_cast<double>(trees.size()), subsample);
            }
            case DetectorKind::pca: {
                const std::size_t d = n_features;
                std::vector<double> xc(d);
                for (std::size_t j = 0; j < d; ++j) xc[j] = x[j] - mean[j];
                std::vector<double> recon(d, 0.0);
                for (std::size_t k = 0; k < components.rows(); ++k) {
                    const auto axis = components.row(k);
                    double proj = 0.0;
                    for (std::size_t j = 0; j < d; ++j) proj += axis[j] * xc[j];
                    for (std::size_t j = 0; j < d; ++j) recon[j] += proj * axis[j];
                }
                double err = 0.0;
                for (std::size_t j = 0; j < d; ++j) err += (xc[j] - recon[j]) * (xc[j] - recon[j]);
                return err;
            }
            case DetectorKind::kmeans: {
                double best = kInf;
                for (std::size_t k = 0; k < centroids.rows(); ++k) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n_features; ++j) s += (x[j] - centroids(k, j)) * (x[j] - centroids(k, j));
                    best = std::min(best, s);
                }
                return std::sqrt(best);
            }
        }
        throw Error("unknown detector kind");
    }

    /// Anomaly probability in [0, 1].
    double predict_proba(std::span<const double> x) const {
        const double raw = raw_score(x);
        if (kind == DetectorKind::random_forest) return std::isnan(raw) ? 1.0 : std::clamp(raw, 0.0, 1.0);
        if (kind == DetectorKind::gbt) return std::isnan(raw) ? 1.0 : sigmoid(raw);
        if (!calibration) throw Error("unsupervised model has no calibration");
        return calibration->apply(raw);
    }

    std::vector<double> predict_proba(const Matrix& X, std::size_t threads = 1) const {
        std::vector<double> out(X.rows());
        parallel_for(X.rows(), threads, [&](std::size_t i) { out[i] = predict_proba(X.row(i)); });
        return out;
    }

    std::vector<double> raw_scores(const Matrix& X, std::size_t threads = 1) const {
        std::vector<double> out(X.rows());
        parallel_for(X.rows(), threads, [&](std::size_t i) { out[i] = raw_score(X.row(i)); });
        return out;
    }

    friend bool operator==(const DetectorModel&, const DetectorModel&) = default;
};

// ---------------------------------------------------------------------------
// Supervised fits
// ---------------------------------------------------------------------------

inline DetectorModel fit_random_forest(const Matrix& X, std::span<const int> y, const TrainConfig& cfg) {
    cfg.validate();
    detail::check_xy(X, y);
    detail::require_both_classes(y);
    const std::size_t n = X.rows(), d = X.cols();
    const auto weights = class_weights(y, cfg.class_weighting);
    const std::size_t m =
        cfg.max_features == 0 ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d)))) : cfg.max_features;
    const auto sorted = detail::presort(X);

    DetectorModel model;
    model.kind = DetectorKind::random_forest;
    model.n_features = d;
    model.trees.resize(cfg.n_trees);
    parallel_for(cfg.n_trees, cfg.threads, [&](std::size_t t) {
        Rng rng(derive_seed(derive_seed(cfg.seed, "random_forest"), static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> count(n, cfg.bootstrap ? 0 : 1);
        if (cfg.bootstrap)
            for (std::size_t i = 0; i < n; ++i) ++count[rng.index(n)];
        detail::GiniCriterion crit;
        crit.rows.resize(n);
        std::vector<char> keep(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double w = weights[i] * static_cast<double>(count[i]);
            crit.rows[i] = {w, y[i] == 1 ? w : 0.0, count[i]};
            keep[i] = count[i] > 0;
        }
        detail::Grower<detail::GiniCriterion> grower(X, crit, {cfg.max_depth, cfg.min_samples_leaf, m}, &rng);
        model.trees[t] = grower.grow(detail::filter_sorted(sorted, keep));
    });
    return model;
}

/// Leaf weight -G / (H + lambda).
inline double gbt_leaf_weight(double g, double h, double lambda) {
    return detail::NewtonCriterion{{}, lambda, 0.0}.leaf({g, h, 1});
}

/// Split gain ½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ.
inline double gbt_split_gain(double gl, double hl, double gr, double hr, double lambda, double gamma) {
    detail::NewtonCriterion c{{}, lambda, gamma};
    return c.gain({gl + gr, hl + hr, 2}, {gl, hl, 1}, {gr, hr, 1});
}

inline double weighted_logloss(std::span<const int> y, std::span<const double> p, std::span<const double> w) {
    double loss = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double q = std::clamp(p[i], 1e-15, 1.0 - 1e-15);
        loss -= w[i] * (y[i] == 1 ? std::log(q) : std::log(1.0 - q));
        wsum += w[i];
    }
    return loss / wsum;
}

inline DetectorModel fit_gbt(const Matrix& X, std::span<const int> y, const TrainConfig& cfg) {
    cfg.validate();
    detail::check_xy(X, y);
    detail::require_both_classes(y);
    const std::size_t n = X.rows();
    const auto weights = class_weights(y, cfg.class_weighting);
    double wpos = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        wsum += weights[i];
        if (y[i] == 1) wpos += weights[i];
    }
    const double prior = wpos / wsum;

    DetectorModel model;
    model.kind = DetectorKind::gbt;
    model.n_features = X.cols();
    model.learning_rate = cfg.learning_rate;
    model.base_score = std::log(prior / (1.0 - prior));

    const auto sorted = detail::presort(X);
    std::vector<double> margin(n, model.base_score), p(n);
    detail::NewtonCriterion crit{std::vector<detail::NewtonCriterion::Stats>(n), cfg.reg_lambda, cfg.gamma};
    for (std::size_t round = 0; round < cfg.gbt_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = sigmoid(margin[i]);
            crit.rows[i] = {weights[i] * (p[i] - y[i]), weights[i] * p[i] * (1.0 - p[i]), 1};
        }
        detail::Grower<detail::NewtonCriterion> grower(X, crit, {cfg.gbt_max_depth, cfg.min_samples_leaf, 0}, nullptr);
        Tree tree = grower.grow(sorted);
        for (std::size_t i = 0; i < n; ++i) {
            margin[i] += cfg.learning_rate * tree.predict(X.row(i));
            p[i] = sigmoid(margin[i]);
        }
        model.trees.push_back(std::move(tree));
        model.train_loss.push_back(weighted_logloss(y, p, weights));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Unsupervised fits
// ---------------------------------------------------------------------------

namespace detail {

inline Tree grow_isolation_tree(const Matrix& X, std::vector<std::size_t> rows, std::size_t depth_cap, Rng& rng) {
    Tree tree;
    struct Task {
        std::size_t node, depth;
        std::vector<std::size_t> rows;
    };
    std::vector<Task> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, 0, std::move(rows)});
    while (!stack.empty()) {
        Task task = std::move(stack.back());
        stack.pop_back();
        tree.nodes[task.node].value = static_cast<double>(task.rows.size());
        if (task.depth >= depth_cap || task.rows.size() <= 1) continue;
        std::vector<std::size_t> splittable;
        std::vector<std::pair<double, double>> ranges(X.cols());
        for (std::size_t f = 0; f < X.cols(); ++f) {
            double lo = kInf, hi = -kInf;
            for (auto r : task.rows) lo = std::min(lo, X(r, f)), hi = std::max(hi, X(r, f));
            ranges[f] = {lo, hi};
            if (hi > lo) splittable.push_back(f);
        }
        if (splittable.empty()) continue;
        const std::size_t f = splittable[rng.index(splittable.size())];
        double thr = rng.uniform(ranges[f].first, ranges[f].second);
        if (thr >= ranges[f].second) thr = ranges[f].first;
        std::vector<std::size_t> left, right;
        for (auto r : task.rows) (X(r, f) <= thr ? left : right).push_back(r);
        const auto li = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        const auto ri = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        auto& nd = tree.nodes[task.node];
        nd.feature = static_cast<int>(f);
        nd.threshold = thr;
        nd.left = li;
        nd.right = ri;
        stack.push_back({static_cast<std::size_t>(ri), task.depth + 1, std::move(right)});
        stack.push_back({static_cast<std::size_t>(li), task.depth + 1, std::move(left)});
    }
    return tree;
}

}  // namespace detail

inline DetectorModel fit_isolation_forest(const Matrix& X, const TrainConfig& cfg) {
    cfg.validate();
    if (X.rows() < 2) throw Error("isolation forest needs at least 2 samples");
    const std::size_t n = X.rows();
    const std::size_t psi = std::min(cfg.iforest_subsample, n);
    const auto cap = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(psi))));

    DetectorModel model;
    model.kind = DetectorKind::isolation_forest;
    model.n_features = X.cols();
    model.subsample = psi;
    model.trees.resize(cfg.n_trees);
    parallel_for(cfg.n_trees, cfg.threads, [&](std::size_t t) {
        Rng rng(derive_seed(derive_seed(cfg.seed, "isolation_forest"), static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        for (std::size_t i = 0; i < psi; ++i) std::swap(all[i], all[i + rng.index(n - i)]);
        all.resize(psi);
        model.trees[t] = detail::grow_isolation_tree(X, std::move(all), cap, rng);
    });
    model.calibration = MinMaxCalibration::fit(model.raw_scores(X, cfg.threads));
    return model;
}

/// PCA reconstruction-error detector; expects normal rows only.
inline DetectorModel fit_pca_detector(const Matrix& X, std::size_t n_components) {
    const std::size_t n = X.rows(), d = X.cols();
    if (n < 2) throw Error("PCA needs at least 2 samples");
    if (n_components == 0 || n_components > d) throw Error("n_components must lie in [1, d]");
    DetectorModel model;
    model.kind = DetectorKind::pca;
    model.n_features = d;
    model.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) model.mean[j] += X(i, j);
    for (auto& m : model.mean) m /= static_cast<double>(n);

    Eigen::MatrixXd xc(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) xc(i, j) = X(i, j) - model.mean[j];
    const Eigen::MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(n - 1);
    if (!(cov.trace() > 0.0)) throw Error("PCA on zero-variance data");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw Error("PCA eigendecomposition failed");

    model.components = Matrix(n_components, d);
    for (std::size_t k = 0; k < n_components; ++k) {
        // Eigenvalues come out ascending.
        Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - k));
        Eigen::Index arg = 0;
        for (Eigen::Index j = 1; j < v.size(); ++j)
            if (std::abs(v(j)) > std::abs(v(arg))) arg = j;
        if (v(arg) < 0.0) v = -v;
        for (std::size_t j = 0; j < d; ++j) model.components(k, j) = v(static_cast<Eigen::Index>(j));
    }
    model.calibration = MinMaxCalibration::fit(model.raw_scores(X));
    return model;
}

inline DetectorModel fit_kmeans_detector(const Matrix& X, std::size_t k, std::uint64_t seed) {
    const std::size_t n = X.rows(), d = X.cols();
    if (k == 0) throw Error("k must be >= 1");
    if (n < k) throw Error("KMeans needs at least k samples");
    auto dist2 = [&](std::size_t r, std::span<const double> c) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (X(r, j) - c[j]) * (X(r, j) - c[j]);
        return s;
    };

    Matrix centroids(k, d);
    Rng rng(derive_seed(seed, "kmeans"));
    std::vector<double> nearest(n, kInf);
    std::size_t pick = rng.index(n);
    for (std::size_t c = 0; c < k; ++c) {
        std::copy(X.row(pick).begin(), X.row(pick).end(), centroids.row(c).begin());
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist2(i, centroids.row(c)));
        pick = static_cast<std::size_t>(std::max_element(nearest.begin(), nearest.end()) - nearest.begin());
    }

    std::vector<std::size_t> assign(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = kInf;
            for (std::size_t c = 0; c < k; ++c)
                if (const double s = dist2(i, centroids.row(c)); s < best) best = s, assign[i] = c, nearest[i] = s;
        }
        Matrix next(k, d);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (std::size_t j = 0; j < d; ++j) next(assign[i], j) += X(i, j);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                const auto far = static_cast<std::size_t>(std::max_element(nearest.begin(), nearest.end()) - nearest.begin());
                std::copy(X.row(far).begin(), X.row(far).end(), next.row(c).begin());
                nearest[far] = 0.0;
                continue;
            }
            for (std::size_t j = 0; j < d; ++j) next(c, j) /= static_cast<double>(counts[c]);
        }
        double moved = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (next(c, j) - centroids(c, j)) * (next(c, j) - centroids(c, j));
            moved = std::max(moved, std::sqrt(s));
        }
        centroids = std::move(next);
        if (moved < 1e-6) break;
    }

    DetectorModel model;
    model.kind = DetectorKind::kmeans;
    model.n_features = d;
    model.centroids = std::move(centroids);
    model.calibration = MinMaxCalibration::fit(model.raw_scores(X));
    return model;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json to_json(const Tree& tree) {
    json feature = json::array(), left = json::array(), right = json::array();
    std::vector<double> threshold, value;
    for (const auto& nd : tree.nodes) {
        feature.push_back(nd.feature);
        left.push_back(nd.left);
        right.push_back(nd.right);
        threshold.push_back(nd.threshold);
        value.push_back(nd.value);
    }
    return {{"feature", feature}, {"threshold", numbers_to_json(threshold)}, {"left", left},
            {"right", right},     {"value", numbers_to_json(value)}};
}

inline Tree tree_from_json(const json& j) {
    Tree tree;
    const auto threshold = numbers_from_json(j.at("threshold"));
    const auto value = numbers_from_json(j.at("value"));
    const auto& feature = j.at("feature");
    const auto& left = j.at("left");
    const auto& right = j.at("right");
    const std::size_t n = feature.size();
    if (threshold.size() != n || value.size() != n || left.size() != n || right.size() != n)
        throw Error("tree arrays differ in length");
    for (std::size_t i = 0; i < n; ++i) {
        TreeNode nd{feature[i].get<int>(), threshold[i], left[i].get<int>(), right[i].get<int>(), value[i]};
        if (!nd.is_leaf() && (nd.left <= static_cast<int>(i) || nd.right <= static_cast<int>(i) ||
                               nd.left >= static_cast<int>(n) || nd.right >= static_cast<int>(n)))
            throw Error("tree child index out of range");
        tree.nodes.push_back(nd);
    }
    if (tree.nodes.empty()) throw Error("tree without nodes");
    return tree;
}

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(numbers_to_json(m.row(r)));
    return rows;
}

inline Matrix matrix_from_json(const json& j) {
    Matrix m;
    for (const auto& row : j) m.push_row(numbers_from_json(row));
    return m;
}

inline json to_json(const DetectorModel& m) {
    json j = {{"schema_version", kSchemaVersion},
              {"kind", "detector_model"},
              {"model_kind", to_string(m.kind)},
              {"n_features", m.n_features}};
    if (!m.trees.empty()) {
        json trees = json::array();
        for (const auto& t : m.trees) trees.push_back(to_json(t));
        j["trees"] = trees;
    }
    if (m.kind == DetectorKind::gbt) {
        j["base_score"] = number_to_json(m.base_score);
        j["learning_rate"] = number_to_json(m.learning_rate);
        j["train_loss"] = numbers_to_json(m.train_loss);
    }
    if (m.kind == DetectorKind::isolation_forest) j["subsample"] = m.subsample;
    if (m.kind == DetectorKind::pca) {
        j["mean"] = numbers_to_json(m.mean);
        j["components"] = matrix_to_json(m.components);
    }
    if (m.kind == DetectorKind::kmeans) j["centroids"] = matrix_to_json(m.centroids);
    if (m.calibration)
        j["calibration"] = {{"min", number_to_json(m.calibration->lo)}, {"max", number_to_json(m.calibration->hi)}};
    return j;
}

inline DetectorModel detector_model_from_json(const json& j) {
    expect_artifact(j, "detector_model");
    DetectorModel m;
    try {
        m.kind = detector_kind_from_string(j.at("model_kind").get<std::string>());
        m.n_features = j.at("n_features").get<std::size_t>();
        if (j.contains("trees"))
            for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
        if (m.kind == DetectorKind::gbt) {
            m.base_score = number_from_json(j.at("base_score"));
            m.learning_rate = number_from_json(j.at("learning_rate"));
            m.train_loss = numbers_from_json(j.at("train_loss"));
        }
        if (m.kind == DetectorKind::isolation_forest) m.subsample = j.at("subsample").get<std::size_t>();
        if (m.kind == DetectorKind::pca) {
            m.mean = numbers_from_json(j.at("mean"));
            m.components = matrix_from_json(j.at("components"));
        }
        if (m.kind == DetectorKind::kmeans) m.centroids = matrix_from_json(j.at("centroids"));
        if (j.contains("calibration"))
            m.calibration = MinMaxCalibration{number_from_json(j.at("calibration").at("min")),
                                              number_from_json(j.at("calibration").at("max"))};
    } catch (const json::exception& e) {
        throw Error(std::string("malformed detector model: ") + e.what());
    }
    if ((m.kind == DetectorKind::random_forest || m.kind == DetectorKind::gbt ||
         m.kind == DetectorKind::isolation_forest) &&
        m.trees.empty())
        throw Error("tree model without trees");
    for (const auto& t : m.trees)
        for (const auto& nd : t.nodes)
            if (nd.feature >= static_cast<int>(m.n_features)) throw Error("tree refers to a missing feature");
    return m;
}

inline void save_model(const DetectorModel& m, const std::string& path) { write_json_file(to_json(m), path); }
inline DetectorModel load_model(const std::string& path) { return detector_model_from_json(read_json_file(path)); }

}  // namespace segad
