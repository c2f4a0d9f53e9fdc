#include <gtest/gtest.h>

#include <sstream>

#include "segad/ensemble.hpp"
#include "test_util.hpp"

using namespace segad;

namespace {

/// Pairwise concordance with ties counted as one half.
double brute_force_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                den += 1.0;
            }
    return num / den;
}

/// Constant-probability model: a one-leaf random forest.
DetectorModel constant_model(double p, std::size_t d = 1) {
    DetectorModel m;
    m.kind = DetectorKind::random_forest;
    m.n_features = d;
    m.trees.push_back(Tree{{TreeNode{-1, 0.0, -1, -1, p}}});
    return m;
}

EvalReport report_with_auc(double auc) {
    EvalReport r;
    r.tn = r.tp = 5;
    r.auc_roc = auc;
    return r;
}

}  // namespace

TEST(EnsemblePredict, MeanOfMembers) {
    Matrix X(1, 1);
    EXPECT_DOUBLE_EQ(ensemble_predict({{constant_model(0.2), constant_model(0.4)}}, X)[0], 0.3);
    EXPECT_DOUBLE_EQ(ensemble_predict({{constant_model(0.0), constant_model(1.0)}}, X)[0], 0.5);
    EXPECT_DOUBLE_EQ(ensemble_predict({{constant_model(0.7), constant_model(0.7)}}, X)[0], 0.7);
}

TEST(EnsemblePredict, MemberOrderDoesNotMatter) {
    Matrix X(1, 1);
    const auto a = ensemble_predict({{constant_model(0.1), constant_model(0.25), constant_model(0.9)}}, X);
    const auto b = ensemble_predict({{constant_model(0.9), constant_model(0.1), constant_model(0.25)}}, X);
    EXPECT_NEAR(a[0], b[0], 1e-15);
}

TEST(EnsemblePredict, Validation) {
    Matrix X(1, 1);
    EXPECT_THROW(ensemble_predict({{constant_model(0.1)}}, X), Error);
    EXPECT_THROW(ensemble_predict({{constant_model(0.1), constant_model(0.1, 2)}}, X), Error);
}

TEST(EnsembleFile, RoundTrip) {
    const auto dir = segad::testing::scratch_dir();
    const EnsembleModel m{{constant_model(0.2), constant_model(0.6)}};
    save_ensemble(m, (dir / "e.json").string());
    const auto back = load_ensemble((dir / "e.json").string());
    Matrix X(3, 1);
    EXPECT_EQ(ensemble_predict(back, X), ensemble_predict(m, X));
}

TEST(Report, PerfectSeparation) {
    const auto r = classification_report(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<int>{1, 1, 0, 0});
    for (const auto& m : {r.normal, r.fault}) {
        EXPECT_EQ(m.precision, 1.0);
        EXPECT_EQ(m.recall, 1.0);
        EXPECT_EQ(m.f1, 1.0);
    }
    EXPECT_EQ(r.auc_roc, 1.0);
}

TEST(Report, AllNegativeConvention) {
    const auto r = classification_report(std::vector<double>{0.1, 0.2, 0.3}, std::vector<int>{1, 0, 1});
    EXPECT_EQ(r.fault.precision, 0.0);
    EXPECT_EQ(r.fault.recall, 0.0);
    EXPECT_EQ(r.fault.f1, 0.0);
}

TEST(Report, HandBuiltConfusionTable) {
    const auto r = classification_report(std::vector<double>{0.6, 0.6, 0.4, 0.6}, std::vector<int>{1, 0, 0, 1});
    EXPECT_EQ(r.tp, 2u);
    EXPECT_EQ(r.fp, 1u);
    EXPECT_EQ(r.tn, 1u);
    EXPECT_EQ(r.fn, 0u);
    EXPECT_DOUBLE_EQ(r.fault.precision, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.fault.recall, 1.0);
    EXPECT_DOUBLE_EQ(r.fault.f1, 0.8);
}

TEST(Report, CountsSumAndRecallsIndependent) {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.index(40);
        std::vector<double> p(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.uniform();
            y[i] = rng.uniform() < 0.3;
        }
        const auto r = classification_report(p, y);
        ASSERT_EQ(r.n(), n);
        // Changing predictions on positives leaves the normal-class recall alone.
        auto q = p;
        for (std::size_t i = 0; i < n; ++i)
            if (y[i] == 1) q[i] = rng.uniform();
        ASSERT_EQ(classification_report(q, y).normal.recall, r.normal.recall);
    }
}

TEST(Auc, Examples) {
    EXPECT_EQ(auc_roc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}), 1.0);
    EXPECT_EQ(auc_roc(std::vector<double>{0.8, 0.6, 0.4, 0.2}, std::vector<int>{1, 0, 1, 0}), 0.75);
    EXPECT_EQ(auc_roc(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1}), 0.5);
    EXPECT_THROW(auc_roc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), Error);
}

TEST(Auc, MatchesBruteForceWithTies) {
    Rng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.index(49);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.index(8)) / 4.0;
            y[i] = static_cast<int>(rng.index(2));
        }
        y[0] = 0;
        y[1] = 1;
        ASSERT_NEAR(auc_roc(s, y), brute_force_auc(s, y), 1e-12);
    }
}

TEST(Auc, RankInvarianceAndComplement) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.index(40);
        std::vector<double> s(n), t(n), neg(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = rng.normal();
            t[i] = std::exp(3.0 * s[i]) + 1.0;
            neg[i] = -s[i];
            y[i] = static_cast<int>(rng.index(2));
        }
        y[0] = 0;
        y[1] = 1;
        ASSERT_NEAR(auc_roc(t, y), auc_roc(s, y), 1e-12);
        ASSERT_NEAR(auc_roc(s, y) + auc_roc(neg, y), 1.0, 1e-12);
    }
}

TEST(Compare, DeltaExample) {
    const auto rows = compare_runs(report_with_auc(0.9760), report_with_auc(0.8599));
    const auto it = std::find_if(rows.begin(), rows.end(), [](const auto& r) { return r.metric == "auc_roc"; });
    ASSERT_NE(it, rows.end());
    EXPECT_NEAR(it->delta, 0.1161, 1e-12);
}

TEST(Compare, IdenticalAndAntisymmetric) {
    const auto a = classification_report(std::vector<double>{0.9, 0.3, 0.6, 0.2}, std::vector<int>{1, 0, 0, 1});
    const auto b = classification_report(std::vector<double>{0.4, 0.1, 0.7, 0.8}, std::vector<int>{1, 0, 0, 1});
    for (const auto& row : compare_runs(a, a)) EXPECT_EQ(row.delta, 0.0);
    const auto ab = compare_runs(a, b), ba = compare_runs(b, a);
    for (std::size_t i = 0; i < ab.size(); ++i) EXPECT_EQ(ab[i].delta, -ba[i].delta);
    const auto other = classification_report(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 0});
    EXPECT_THROW(compare_runs(a, other), Error);
}

TEST(ReportJson, RoundTrip) {
    const auto r = classification_report(std::vector<double>{0.9, 0.3, 0.6, 0.2}, std::vector<int>{1, 0, 0, 1}, 0.4);
    const auto back = eval_report_from_json(to_json(r));
    EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
    EXPECT_EQ(back.decision_threshold, 0.4);

    const auto single = classification_report(std::vector<double>{0.9, 0.3}, std::vector<int>{0, 0});
    EXPECT_TRUE(std::isnan(eval_report_from_json(to_json(single)).auc_roc));
}

TEST(ReportText, MentionsMetrics) {
    const auto r = classification_report(std::vector<double>{0.9, 0.3, 0.6, 0.2}, std::vector<int>{1, 0, 0, 1});
    std::ostringstream out;
    write_report_text(r, out, "run");
    EXPECT_NE(out.str().find("AUC"), std::string::npos);
}
