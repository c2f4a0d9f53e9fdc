#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "segad/prep.hpp"
#include "test_util.hpp"

using namespace segad;

namespace {

TimeSeriesFrame make_frame(const std::vector<std::string>& names, const std::vector<std::vector<double>>& cols) {
    TimeSeriesFrame f;
    f.channels = names;
    const std::size_t n = cols.front().size();
    f.values = Matrix(n, cols.size());
    for (std::size_t r = 0; r < n; ++r) {
        f.timestamps.push_back(static_cast<std::int64_t>(r));
        for (std::size_t c = 0; c < cols.size(); ++c) f.values(r, c) = cols[c][r];
    }
    return f;
}

Labels alternating(std::size_t n) {
    Labels l(n);
    for (std::size_t i = 0; i < n; ++i) l[i] = i % 2 == 0;
    return l;
}

}  // namespace

TEST(Clean, ReplacesNegativesAndMissingByMedian) {
    const auto r = clean(make_frame({"a"}, {{1, -5, 3, kMissing}}));
    EXPECT_EQ(r.frame.values.column(0), (std::vector<double>{1, 2, 3, 2}));
    EXPECT_EQ(r.medians.at("a"), 2.0);
}

TEST(Clean, DropsAllMissingChannel) {
    const auto r = clean(make_frame({"a", "b"}, {{kMissing, kMissing, kMissing}, {4, 4, 4}}));
    EXPECT_EQ(r.dropped_null_channels, std::vector<std::string>{"a"});
    EXPECT_EQ(r.frame.channels, std::vector<std::string>{"b"});
    EXPECT_EQ(r.frame.values.column(0), (std::vector<double>{4, 4, 4}));
}

TEST(Classify, SymmetricAndConstant) {
    EXPECT_EQ(classify_distribution(std::vector<double>{-1, 0, 1}), ShapeClass::near_symmetric);
    EXPECT_EQ(classify_distribution(std::vector<double>{2, 2, 2}), ShapeClass::near_symmetric);
}

TEST(Classify, ExponentialIsSkewed) {
    Rng rng(2024);
    std::vector<double> x(10000);
    for (auto& v : x) v = rng.exponential();
    EXPECT_NE(classify_distribution(x), ShapeClass::near_symmetric);
}

TEST(YeoJohnson, Branches) {
    EXPECT_DOUBLE_EQ(yeo_johnson(1.0, 3.7), 3.7);
    EXPECT_NEAR(yeo_johnson(0.0, std::exp(1.0) - 1.0), 1.0, 1e-15);
    EXPECT_NEAR(yeo_johnson(2.0, -0.5), -std::log(1.5), 1e-15);
}

TEST(YeoJohnson, IdentityAtLambdaOne) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.normal() * 100.0;
        EXPECT_NEAR(yeo_johnson(1.0, x), x, 1e-12 * std::max(1.0, std::abs(x)));
    }
}

TEST(YeoJohnson, StrictlyIncreasing) {
    Rng rng(2);
    for (int i = 0; i < 5000; ++i) {
        const double lambda = rng.uniform(-3, 5);
        const double a = rng.normal() * 10.0;
        const double b = a + rng.uniform(1e-6, 5);
        ASSERT_LT(yeo_johnson(lambda, a), yeo_johnson(lambda, b)) << lambda << " " << a << " " << b;
    }
}

TEST(YeoJohnson, FitOnGaussianIsNearOne) {
    Rng rng(3);
    std::vector<double> x(5000);
    for (auto& v : x) v = rng.normal();
    const double lambda = fit_yeo_johnson(x);
    EXPECT_GE(lambda, 0.8);
    EXPECT_LE(lambda, 1.2);
}

TEST(YeoJohnson, FitOnLogNormalIsLogLike) {
    Rng rng(4);
    std::vector<double> x(5000);
    for (auto& v : x) v = std::exp(rng.normal());
    EXPECT_LT(fit_yeo_johnson(x), 0.5);
}

TEST(YeoJohnson, FitNeverIncreasesSkewOfUniform) {
    Rng rng(5);
    std::vector<double> x(3000);
    for (auto& v : x) v = rng.uniform(-1, 1);
    const double lambda = fit_yeo_johnson(x);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = yeo_johnson(lambda, x[i]);
    EXPECT_LE(std::abs(stats::skewness(y)), std::abs(stats::skewness(x)) + 1e-3);
}

TEST(Winsorize, PercentileBounds) {
    std::vector<double> x(100);
    std::iota(x.begin(), x.end(), 1.0);
    const auto [lo, hi] = winsorize_fit(x, 0.01, 0.99);
    EXPECT_NEAR(lo, 1.99, 1e-12);
    EXPECT_NEAR(hi, 99.01, 1e-12);
    const auto [mn, mx] = winsorize_fit(x, 0.0, 1.0);
    EXPECT_EQ(mn, 1.0);
    EXPECT_EQ(mx, 100.0);
    const auto [c1, c2] = winsorize_fit(std::vector<double>{3, 3, 3}, 0.01, 0.99);
    EXPECT_EQ(c1, 3.0);
    EXPECT_EQ(c2, 3.0);
}

TEST(Winsorize, ClipsOnlyOutside) {
    Rng rng(6);
    for (int i = 0; i < 1000; ++i) {
        const double lo = rng.normal(), hi = lo + rng.uniform(0, 3), v = rng.normal() * 3.0;
        const double w = winsorize(v, lo, hi);
        ASSERT_GE(w, lo);
        ASSERT_LE(w, hi);
        if (v >= lo && v <= hi) {
            ASSERT_EQ(w, v);
        }
    }
}

TEST(Anova, HandComputedCases) {
    const Labels l{false, false, true, true};
    EXPECT_DOUBLE_EQ(anova_f(std::vector<double>{0, 1, 2, 3}, l), 8.0);
    EXPECT_EQ(anova_f(std::vector<double>{0, 2, 2, 0}, l), 0.0);
    EXPECT_EQ(anova_f(std::vector<double>{0, 0, 1, 1}, l), kInf);
}

TEST(MutualInfo, Cases) {
    Rng rng(7);
    std::vector<double> x(10000);
    Labels l(10000);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.normal();
        l[i] = rng.uniform() < 0.5;
    }
    EXPECT_LT(mutual_info(x, l), 0.05);

    const auto lab = alternating(1000);
    std::vector<double> same(1000);
    for (std::size_t i = 0; i < same.size(); ++i) same[i] = lab[i] ? 1.0 : 0.0;
    EXPECT_NEAR(mutual_info(same, lab), std::log(2.0), 1e-12);
    EXPECT_EQ(mutual_info(std::vector<double>(1000, 5.0), lab), 0.0);
}

TEST(Relevance, InvariantToSamplePermutation) {
    Rng rng(8);
    std::vector<double> x(500);
    Labels l(500);
    for (std::size_t i = 0; i < x.size(); ++i) {
        l[i] = rng.uniform() < 0.3;
        x[i] = rng.normal() + (l[i] ? 1.0 : 0.0);
    }
    std::vector<std::size_t> perm(500);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    std::vector<double> xp(500);
    Labels lp(500);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        xp[i] = x[perm[i]];
        lp[i] = l[perm[i]];
    }
    EXPECT_NEAR(anova_f(xp, lp), anova_f(x, l), 1e-9 * anova_f(x, l));
    EXPECT_NEAR(mutual_info(xp, lp), mutual_info(x, l), 1e-12);
}

namespace {

struct Fixture {
    TimeSeriesFrame frame;
    Labels labels;
};

Fixture relevance_fixture() {
    Rng rng(9);
    const std::size_t n = 2000;
    Fixture fx;
    fx.labels.resize(n);
    std::vector<double> label_col(n), noise(n), dup(n), constant(n, 7.0), skewed(n), weak(n);
    for (std::size_t i = 0; i < n; ++i) {
        fx.labels[i] = rng.uniform() < 0.8;
        label_col[i] = fx.labels[i] ? 1.0 : 0.0;
        noise[i] = 10.0 + rng.normal();
        dup[i] = noise[i];
        skewed[i] = rng.exponential();
        weak[i] = 5.0 + rng.normal() + (fx.labels[i] ? 0.2 : 0.0);
    }
    fx.frame = make_frame({"label_copy", "noise", "noise_dup", "constant", "skewed", "weak"},
                          {label_col, noise, dup, constant, skewed, weak});
    return fx;
}

}  // namespace

TEST(FitPrep, SelectionRules) {
    const auto fx = relevance_fixture();
    const auto plan = fit_prep(fx.frame, fx.labels);
    const auto& sel = plan.selected_channels;
    auto has = [&](const std::string& n) { return std::find(sel.begin(), sel.end(), n) != sel.end(); };

    EXPECT_EQ(plan.low_variance_dropped, std::vector<std::string>{"constant"});
    EXPECT_NE(has("noise"), has("noise_dup"));
    EXPECT_TRUE(has("label_copy"));

    const auto& top = plan.record("label_copy").relevance;
    for (const auto& rec : plan.channels) {
        if (rec.name == "label_copy" || rec.name == "constant") continue;
        EXPECT_GT(top.anova_f, rec.relevance.anova_f) << rec.name;
        EXPECT_GT(top.mutual_info, rec.relevance.mutual_info) << rec.name;
    }
    EXPECT_NE(plan.record("skewed").transform.kind, TransformKind::identity);
}

TEST(FitPrep, SelectedChannelsAreNotCollinear) {
    Rng rng(10);
    const std::size_t n = 1000;
    std::vector<std::vector<double>> cols(6, std::vector<double>(n));
    Labels labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = rng.uniform() < 0.7;
        const double base = rng.normal();
        for (std::size_t c = 0; c < cols.size(); ++c) cols[c][i] = base * (c < 3 ? 1.0 : 0.1) + rng.normal() * 0.05 * c;
    }
    const auto f = make_frame({"c0", "c1", "c2", "c3", "c4", "c5"}, cols);
    const auto plan = fit_prep(f, labels);
    const auto prepped = apply_prep(plan, f);
    for (std::size_t a = 0; a < prepped.n_channels(); ++a)
        for (std::size_t b = a + 1; b < prepped.n_channels(); ++b)
            EXPECT_LE(std::abs(stats::pearson(prepped.values.column(a), prepped.values.column(b))), 0.95);
}

TEST(ApplyPrep, DeterministicAndUsesTrainingMedian) {
    const auto fx = relevance_fixture();
    const auto plan = fit_prep(fx.frame, fx.labels);
    const auto a = apply_prep(plan, fx.frame);
    const auto b = apply_prep(plan, fx.frame);
    EXPECT_EQ(a.values, b.values);

    auto test = fx.frame;
    const auto c = test.channel_index("weak");
    test.values(0, c) = -100.0;
    const auto out = apply_prep(plan, test);
    const auto& rec = plan.record("weak");
    EXPECT_EQ(out.values(0, out.channel_index("weak")),
              apply_transform(rec.transform, rec.transform.impute_median));
}

TEST(ApplyPrep, MissingSelectedChannelIsAnError) {
    const auto fx = relevance_fixture();
    const auto plan = fit_prep(fx.frame, fx.labels);
    auto f = make_frame({"other"}, {fx.frame.values.column(0)});
    EXPECT_THROW(apply_prep(plan, f), Error);
}

TEST(PrepPlan, JsonRoundTripIsExact) {
    const auto fx = relevance_fixture();
    const auto plan = fit_prep(fx.frame, fx.labels);
    const auto again = prep_plan_from_json(to_json(plan));
    EXPECT_EQ(to_json(again).dump(), to_json(plan).dump());
    EXPECT_EQ(apply_prep(again, fx.frame).values, apply_prep(plan, fx.frame).values);
}
