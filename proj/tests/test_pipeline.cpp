#include <gtest/gtest.h>

#include <cstdlib>
#include <map>

#include "segad/pipeline.hpp"
#include "test_util.hpp"

using namespace segad;
using segad::testing::read_text;
using segad::testing::scratch_dir;
using segad::testing::write_text;
namespace fs = std::filesystem;

namespace {

SynthConfig small_synth(std::uint64_t seed = 5) {
    SynthConfig s;
    s.n_samples = 8000;
    s.n_channels = 4;
    s.seed = seed;
    s.anomaly_fraction = 0.03;
    return s;
}

PipelineConfig small_pipeline(const fs::path& out) {
    PipelineConfig p;
    p.output_dir = out.string();
    p.rf.n_trees = 20;
    p.gbt.gbt_rounds = 20;
    p.grid = {{0.05}, {1}, {5}, {1.8, 3.0}};
    return p;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_text(e.path());
    return files;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SEGAD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ParsesAndRejectsUnknownKeys) {
    const auto c = Config::parse("# comment\nseed = 7\nrf.n_trees = 12 # trailing\nensemble.members = gbt, pca\n");
    const auto p = PipelineConfig::from_config(c);
    EXPECT_EQ(p.seed, 7u);
    EXPECT_EQ(p.rf.n_trees, 12u);
    EXPECT_EQ(p.members, (std::vector<std::string>{"gbt", "pca"}));
    EXPECT_THROW(PipelineConfig::from_config(Config::parse("rf.ntrees = 3\n")), Error);
    EXPECT_THROW(Config::parse("just words\n"), Error);
    EXPECT_THROW(PipelineConfig::from_config(Config::parse("rf.n_trees = -3\n")), Error);
}

TEST(Config, PresetsLoad) {
    EXPECT_EQ(PipelineConfig::from_config(Config::parse("changefinder.preset = cs\n")).changefinder, preset_cs());
    EXPECT_EQ(PipelineConfig::from_config(Config::parse("changefinder.preset = f1\n")).changefinder, preset_f1());
}

TEST(Config, EffectiveConfigRoundTrips) {
    PipelineConfig p;
    p.seed = 99;
    p.gbt.learning_rate = 0.2;
    p.members = {"random_forest", "isolation_forest"};
    const auto again = PipelineConfig::from_config(Config::parse(p.to_config().dump()));
    EXPECT_EQ(again.to_config().dump(), p.to_config().dump());
}

TEST(Pipeline, MissingNocNamesIngestStage) {
    const auto dir = scratch_dir();
    const auto s = generate_synthetic(small_synth());
    write_csv(s.frame, (dir / "data.csv").string());
    PipelineConfig p = small_pipeline(dir / "out");
    p.data_path = (dir / "data.csv").string();
    p.noc_path = (dir / "missing.csv").string();
    try {
        run_pipeline(p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("ingest"), std::string::npos) << e.what();
    }
}

TEST(Pipeline, BothModesProduceComparableReports) {
    const auto dir = scratch_dir();
    const auto s = generate_synthetic(small_synth());
    auto p = small_pipeline(dir / "seg");
    const auto seg = run_pipeline_on(s.frame, p);
    p.mode = PipelineMode::unsegmented;
    p.output_dir = (dir / "unseg").string();
    const auto unseg = run_pipeline_on(s.frame, p);
    EXPECT_TRUE(seg.changefinder.has_value());
    EXPECT_FALSE(unseg.changefinder.has_value());
    EXPECT_EQ(seg.report.n(), unseg.report.n());
    EXPECT_NO_THROW(compare_runs(seg.report, unseg.report));
    for (const char* f : {"config.txt", "prep_plan.json", "ensemble.json", "eval_report.json", "eval_report.csv",
                          "eval_report.txt", "predictions.csv", "health.csv", "train_windows.csv", "test_windows.csv"})
        EXPECT_TRUE(fs::exists(dir / "unseg" / f)) << f;
    for (const char* f : {"leaderboard.csv", "changefinder.json", "change_points.txt"}) {
        EXPECT_TRUE(fs::exists(dir / "seg" / f)) << f;
        EXPECT_FALSE(fs::exists(dir / "unseg" / f)) << f;
    }
}

TEST(Pipeline, ArtifactsCarryProvenance) {
    const auto dir = scratch_dir();
    run_pipeline_on(generate_synthetic(small_synth()).frame, small_pipeline(dir));
    for (const char* f : {"prep_plan.json", "ensemble.json", "eval_report.json", "changefinder.json"}) {
        const auto j = read_json_file((dir / f).string());
        EXPECT_EQ(j.at("schema_version"), kSchemaVersion) << f;
        EXPECT_EQ(j.at("provenance").at("config").at("seed"), "42") << f;
    }
    for (const char* f : {"predictions.csv", "health.csv", "leaderboard.csv", "train_windows.csv"}) {
        const auto text = read_text(dir / f);
        EXPECT_EQ(text.rfind("# schema_version=1", 0), 0u) << f;
        EXPECT_NE(text.find("# config.seed=42"), std::string::npos) << f;
    }
}

TEST(Pipeline, RerunIsByteIdentical) {
    const auto dir = scratch_dir();
    const auto frame = generate_synthetic(small_synth()).frame;
    auto p = small_pipeline(dir);
    run_pipeline_on(frame, p);
    const auto first = snapshot(dir);
    p.threads = 3;
    run_pipeline_on(frame, p);
    EXPECT_EQ(snapshot(dir), first);
}

TEST(Pipeline, PrepPlanFileRoundTrips) {
    const auto dir = scratch_dir();
    run_pipeline_on(generate_synthetic(small_synth()).frame, small_pipeline(dir));
    const auto plan = load_prep_plan((dir / "prep_plan.json").string());
    save_prep_plan(plan, (dir / "again.json").string());
    EXPECT_EQ(to_json(load_prep_plan((dir / "again.json").string())).dump(), to_json(plan).dump());
}

TEST(Cli, SynthIsDeterministic) {
    const auto dir = scratch_dir();
    ASSERT_EQ(run_cli("synth --seed 7 --n-samples 3000 --out-dir " + (dir / "a").string()), 0);
    ASSERT_EQ(run_cli("synth --seed 7 --n-samples 3000 --out-dir " + (dir / "b").string()), 0);
    EXPECT_EQ(snapshot(dir / "a"), snapshot(dir / "b"));
    EXPECT_EQ(snapshot(dir / "a").size(), 3u);
}

TEST(Cli, TuneOnStepDataFindsPerfectF1) {
    const auto dir = scratch_dir();
    Rng rng(4);
    std::string csv = "timestamp,x\n";
    for (int t = 0; t < 1000; ++t) csv += std::to_string(t * 60) + "," + format_double(rng.normal(t >= 500 ? 5.0 : 0.0, 0.1)) + "\n";
    write_text(dir / "step.csv", csv);
    write_text(dir / "noc.csv", "start,end\n0,29940\n");
    write_text(dir / "grid.txt", "r = 0.02, 0.05, 0.1\norder = 1\nsmooth = 5, 10\nthreshold = 6, 10\n");
    ASSERT_EQ(run_cli("tune --data " + (dir / "step.csv").string() + " --noc " + (dir / "noc.csv").string() +
                      " --grid-file " + (dir / "grid.txt").string() + " --objective f1 --out " +
                      (dir / "lb.csv").string() + " --best-out " + (dir / "best.json").string()),
              0);
    std::istringstream lb(read_text(dir / "lb.csv"));
    std::string line, header;
    while (std::getline(lb, line) && line.rfind('#', 0) == 0) {
    }
    header = line;
    std::getline(lb, line);
    const auto names = detail::split_csv_line(header);
    const auto cells = detail::split_csv_line(line);
    const auto col = std::find(names.begin(), names.end(), "f1") - names.begin();
    ASSERT_LT(static_cast<std::size_t>(col), names.size());
    EXPECT_EQ(parse_double(cells[col]), 1.0);
    EXPECT_NO_THROW(changefinder_params_from_json(read_json_file((dir / "best.json").string())));
}

TEST(Cli, PipelineModesThenCompare) {
    const auto dir = scratch_dir();
    ASSERT_EQ(run_cli("synth --seed 3 --n-samples 8000 --n-channels 4 --anomaly-fraction 0.03 --out-dir " +
                      (dir / "data").string()),
              0);
    write_text(dir / "cfg.txt", "rf.n_trees = 20\ngbt.rounds = 20\ntune.r = 0.05\ntune.smooth = 5\n");
    const std::string common = "pipeline --config " + (dir / "cfg.txt").string() + " --data " +
                               (dir / "data" / "data.csv").string() + " --noc " + (dir / "data" / "noc.csv").string();
    ASSERT_EQ(run_cli(common + " --mode segmented --out-dir " + (dir / "seg").string()), 0);
    ASSERT_EQ(run_cli(common + " --mode unsegmented --out-dir " + (dir / "unseg").string()), 0);
    ASSERT_EQ(run_cli("compare " + (dir / "seg" / "eval_report.json").string() + " " +
                      (dir / "unseg" / "eval_report.json").string() + " --out " + (dir / "cmp.csv").string()),
              0);
    EXPECT_NE(read_text(dir / "cmp.csv").find("auc_roc"), std::string::npos);
}

TEST(Cli, FailureExitsNonZero) {
    const auto dir = scratch_dir();
    EXPECT_NE(run_cli("pipeline --data " + (dir / "nope.csv").string()), 0);
    EXPECT_NE(run_cli("segment --data " + (dir / "nope.csv").string()), 0);
}

TEST(Cli, StageCommandsChain) {
    const auto dir = scratch_dir();
    const auto d = [&](const char* f) { return (dir / f).string(); };
    ASSERT_EQ(run_cli("synth --seed 11 --n-samples 6000 --n-channels 3 --anomaly-fraction 0.03 --out-dir " + d("s")), 0);
    ASSERT_EQ(run_cli("prep --data " + d("s/data.csv") + " --noc " + d("s/noc.csv") + " --plan-out " + d("plan.json") +
                      " --out " + d("prepped.csv")),
              0);
    ASSERT_EQ(run_cli("segment --data " + d("prepped.csv") + " --out " + d("cps.txt") + " --scores-out " +
                      d("scores.csv")),
              0);
    EXPECT_EQ(read_text(dir / "scores.csv").find("index,timestamp,value_or_aggregate"), 0u);
    ASSERT_EQ(run_cli("featurize --data " + d("prepped.csv") + " --train-out " + d("train.csv") + " --test-out " +
                      d("test.csv")),
              0);
    write_text(dir / "model.txt", "rf.n_trees = 10\ngbt.rounds = 10\n");
    ASSERT_EQ(run_cli("train --train " + d("train.csv") + " --config " + d("model.txt") + " --out " + d("ens.json")), 0);
    ASSERT_EQ(run_cli("evaluate --model " + d("ens.json") + " --test " + d("test.csv") + " --out-dir " + d("eval")), 0);
    ASSERT_EQ(run_cli("health --predictions " + d("eval/predictions.csv") + " --out " + d("health.csv")), 0);
    EXPECT_TRUE(fs::exists(dir / "health.csv"));
}
