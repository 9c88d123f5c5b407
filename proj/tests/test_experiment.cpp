#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include "iqb/error.hpp"
#include "iqb/experiment.hpp"
#include "iqb/synthetic.hpp"
#include "oracles.hpp"

using namespace iqb;
using namespace iqb::experiment;
namespace fs = std::filesystem;
using oracle::TempDir;

namespace {

RunRecord ok_record(const std::string& id, const std::string& provider = "p",
                    double map = 0.5) {
  RunRecord r;
  r.run_id = id;
  r.dataset_variant = "jpeg_q50";
  r.provider = provider;
  r.metrics = {{"mAP", map}, {"AR", 0.25}, {"PSNR_dB", HUGE_VAL}};
  r.avg_size_mb = 0.125;
  r.started_at = "2024-01-01T00:00:00Z";
  r.finished_at = "2024-01-01T00:00:01Z";
  return r;
}

data::Dataset small_corpus(const fs::path& root) {
  synthetic::CorpusOptions o;
  o.images_per_partition = 2;
  o.partitions = {"test"};
  o.scene.width = 128;
  o.scene.height = 128;
  o.scene.object_count = 6;
  return synthetic::write_corpus(root, o);
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST(RunHash, StableAndFieldSeparated) {
  const auto h = run_hash("dota", "jpeg_q50", "fcos");
  EXPECT_EQ(h.size(), 16u);
  EXPECT_EQ(h, run_hash("dota", "jpeg_q50", "fcos"));
  EXPECT_NE(h, run_hash("dota", "jpeg_q5", "0fcos"));
  EXPECT_NE(h, run_hash("dota", "jpeg_q50", "rcnn"));
}

TEST(Plan, CrossProductModifierMajor) {
  TempDir dir("plan");
  auto ds = small_corpus(dir.path());
  std::vector<ModifierSpec> mods;
  for (int q = 10; q <= 100; q += 10) mods.push_back(ModifierSpec::jpeg(q));
  mods.push_back(ModifierSpec::jpeg(5));
  mods.push_back(ModifierSpec::jpeg(95));
  mods.push_back(ModifierSpec::identity());
  const auto plan = plan_experiment(
      ds, mods,
      {PredictionProvider::precomputed("a", dir / "a"),
       PredictionProvider::precomputed("b", dir / "b")});
  ASSERT_EQ(plan.runs.size(), 26u);
  EXPECT_EQ(plan.runs[0].modifier, 0u);
  EXPECT_EQ(plan.runs[1].modifier, 0u);
  EXPECT_EQ(plan.runs[1].provider, 1u);
  EXPECT_EQ(plan.runs[2].modifier, 1u);
  std::set<std::string> ids;
  for (const auto& r : plan.runs) ids.insert(r.run_id);
  EXPECT_EQ(ids.size(), 26u);
}

TEST(Plan, RejectsBadInput) {
  TempDir dir("plan_bad");
  auto ds = small_corpus(dir.path());
  const auto p = PredictionProvider::precomputed("a", dir / "a");
  EXPECT_THROW(plan_experiment(ds, {ModifierSpec::jpeg(50), ModifierSpec::jpeg(50)}, {p}),
               InvalidArgument);
  EXPECT_THROW(plan_experiment(ds, {ModifierSpec::jpeg(50)}, {p, p}), InvalidArgument);
  EvalConfig ev;
  ev.partition = "nope";
  EXPECT_THROW(plan_experiment(ds, {ModifierSpec::jpeg(50)}, {p}, ev), InvalidArgument);
  ev = {};
  ev.iou_grid = {1.5};
  EXPECT_THROW(plan_experiment(ds, {ModifierSpec::jpeg(50)}, {p}, ev), InvalidArgument);
}

TEST(Journal, AppendListRoundTrip) {
  TempDir dir("journal");
  const auto path = dir / "runs.jsonl";
  {
    JournalStore store(path);
    store.append(ok_record("r1", "fcos", 0.5));
    store.append(ok_record("r2", "rcnn", 0.125));
    RunRecord failed = ok_record("r3", "fcos");
    failed.metrics.clear();
    failed.status = RunStatus::kFailed;
    failed.diagnostics = "exit status 1";
    store.append(failed);
  }
  JournalStore store(path);
  ASSERT_EQ(store.size(), 3u);
  const auto all = store.list();
  EXPECT_EQ(all[0], ok_record("r1", "fcos", 0.5));
  EXPECT_TRUE(std::isinf(all[0].metrics.at("PSNR_dB")));
  EXPECT_EQ(all[2].status, RunStatus::kFailed);
  EXPECT_EQ(store.list({.provider = "fcos"}).size(), 2u);
  EXPECT_EQ(store.list({.status = RunStatus::kOk}).size(), 2u);
  EXPECT_EQ(*store.find("r2"), ok_record("r2", "rcnn", 0.125));
  EXPECT_FALSE(store.find("r9").has_value());
  EXPECT_EQ(read_journal(path), all);
}

TEST(Journal, RejectsDuplicatesAndInvariantViolations) {
  TempDir dir("journal_bad");
  JournalStore store(dir / "runs.jsonl");
  store.append(ok_record("r1"));
  EXPECT_THROW(store.append(ok_record("r1")), InvalidArgument);
  RunRecord no_metrics = ok_record("r2");
  no_metrics.metrics.clear();
  EXPECT_THROW(store.append(no_metrics), InvalidArgument);
  RunRecord failed_with_metrics = ok_record("r3");
  failed_with_metrics.status = RunStatus::kFailed;
  EXPECT_THROW(store.append(failed_with_metrics), InvalidArgument);
  EXPECT_THROW(store.append(ok_record("")), InvalidArgument);
  EXPECT_EQ(store.size(), 1u);
}

TEST(Journal, NextRunId) {
  TempDir dir("journal_ids");
  JournalStore store(dir / "runs.jsonl");
  EXPECT_EQ(store.next_run_id("abc"), "abc");
  store.append(ok_record("abc"));
  EXPECT_EQ(store.next_run_id("abc"), "abc-r1");
  store.append(ok_record("abc-r1"));
  EXPECT_EQ(store.next_run_id("abc"), "abc-r2");
}

TEST(Journal, TornTailIsDiscarded) {
  TempDir dir("journal_torn");
  const auto path = dir / "runs.jsonl";
  {
    JournalStore store(path);
    store.append(ok_record("r1"));
    store.append(ok_record("r2"));
  }
  const auto good_size = fs::file_size(path);
  {
    std::ofstream(path, std::ios::app) << R"({"run_id":"r3","dataset_va)";
  }
  EXPECT_EQ(read_journal(path).size(), 2u);
  JournalStore store(path);
  EXPECT_EQ(store.size(), 2u);
  EXPECT_EQ(fs::file_size(path), good_size);
  store.append(ok_record("r3"));
  JournalStore reopened(path);
  EXPECT_EQ(reopened.size(), 3u);
  EXPECT_EQ(reopened.find("r3")->run_id, "r3");
}

TEST(Journal, IndexIsRebuiltWhenStale) {
  TempDir dir("journal_idx");
  const auto path = dir / "runs.jsonl";
  {
    JournalStore store(path);
    for (int i = 0; i < 4; ++i) store.append(ok_record("r" + std::to_string(i)));
  }
  const fs::path idx = path.string() + ".idx";
  std::ofstream(idx, std::ios::trunc) << "r0 0\nr1 999\n";
  JournalStore store(path);
  EXPECT_EQ(store.find("r3")->run_id, "r3");
  EXPECT_EQ(line_count(idx), 4u);
}

TEST(Journal, ConcurrentAppends) {
  TempDir dir("journal_mt");
  const auto path = dir / "runs.jsonl";
  {
    JournalStore store(path);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&, t] {
        for (int i = 0; i < 10; ++i) store.append(ok_record("t" + std::to_string(t) + "_" + std::to_string(i)));
      });
    }
    for (auto& th : threads) th.join();
  }
  EXPECT_EQ(JournalStore(path).size(), 40u);
}

namespace {

struct ExecFixture {
  TempDir dir{"exec"};
  data::Dataset ds = small_corpus(dir / "corpus");
  fs::path preds = dir / "preds";
  ExecuteOptions options;

  ExecFixture() {
    oracle::write_gt_predictions(ds, "test", preds);
    options.cache_dir = dir / "cache";
    options.work_dir = dir / "work";
    options.workers = 2;
  }

  EvalConfig eval_config() const {
    EvalConfig ev;
    ev.nms_threshold = std::nullopt;
    ev.quality_sample_size = 0;
    return ev;
  }
};

}  // namespace

TEST(Execute, PerfectPredictionsScoreOne) {
  ExecFixture f;
  const auto plan = plan_experiment(
      f.ds, {ModifierSpec::jpeg(50), ModifierSpec::identity()},
      {PredictionProvider::precomputed("gt", f.preds)}, f.eval_config());
  JournalStore store(f.dir / "runs.jsonl");
  const auto recs = execute(plan, store, f.options);
  ASSERT_EQ(recs.size(), 2u);
  for (const auto& r : recs) {
    ASSERT_EQ(r.status, RunStatus::kOk) << r.diagnostics;
    EXPECT_DOUBLE_EQ(r.metrics.at("mAP"), 1.0);
    EXPECT_DOUBLE_EQ(r.metrics.at("AR"), 1.0);
    EXPECT_EQ(r.metrics.at("FP"), 0.0);
    EXPECT_GT(r.avg_size_mb, 0.0);
  }
  EXPECT_TRUE(recs[0].metrics.count("SNR_dB") || recs[0].metrics.count("RER"));
  EXPECT_TRUE(std::isinf(recs[1].metrics.at("PSNR_dB")));
  for (const auto& r : recs) EXPECT_EQ(*store.find(r.run_id), r);
}

TEST(Execute, FailingCommandProviderDoesNotStopOthers) {
  ExecFixture f;
  const auto plan = plan_experiment(
      f.ds, {ModifierSpec::jpeg(50)},
      {PredictionProvider::command("broken", {"sh", "-c", "echo boom >&2; exit 1",
                                              "{dataset_root}", "{output_dir}"}),
       PredictionProvider::command(
           "copy", {"sh", "-c", "cp \"$0\"/*.txt \"$1\"/", f.preds.string(), "{output_dir}",
            "{dataset_root}"})},
      f.eval_config());
  JournalStore store(f.dir / "runs.jsonl");
  const auto recs = execute(plan, store, f.options);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].status, RunStatus::kFailed);
  EXPECT_TRUE(recs[0].metrics.empty());
  EXPECT_NE(recs[0].diagnostics.find("boom"), std::string::npos);
  ASSERT_EQ(recs[1].status, RunStatus::kOk) << recs[1].diagnostics;
  EXPECT_DOUBLE_EQ(recs[1].metrics.at("mAP"), 1.0);
  EXPECT_EQ(store.size(), 2u);
}

TEST(Execute, ReexecutionReusesCacheAndSuffixesIds) {
  ExecFixture f;
  const auto plan = plan_experiment(f.ds, {ModifierSpec::jpeg(30)},
                                    {PredictionProvider::precomputed("gt", f.preds)},
                                    f.eval_config());
  JournalStore store(f.dir / "runs.jsonl");
  const auto first = execute(plan, store, f.options);
  const auto manifest = f.options.cache_dir / f.ds.name / "jpeg_q30" / "manifest.json";
  ASSERT_TRUE(fs::exists(manifest));
  const auto stamp = fs::last_write_time(manifest);
  const auto second = execute(plan, store, f.options);
  EXPECT_EQ(fs::last_write_time(manifest), stamp);
  EXPECT_EQ(second[0].run_id, first[0].run_id + "-r1");
  EXPECT_EQ(second[0].metrics, first[0].metrics);
}

TEST(Config, LoadsRelativePaths) {
  TempDir dir("config");
  small_corpus(dir / "corpus");
  std::ofstream(dir / "exp.json") << R"({
    "dataset": "corpus/manifest.json",
    "jpeg_sweep": [10, 50],
    "modifiers": [{"kind": "identity"}],
    "providers": [
      {"name": "gt", "mode": "precomputed", "predictions_root": "preds"},
      {"name": "cmd", "mode": "command", "command": ["run", "{dataset_root}", "{output_dir}"]}
    ],
    "eval": {"iou_grid": "0.5:0.1:0.9", "nms_threshold": null, "ap_method": "voc11",
             "quality_sample_size": 3},
    "cache_dir": "cache",
    "journal": "runs.jsonl"
  })";
  const auto cfg = load_experiment_config(dir / "exp.json");
  EXPECT_EQ(cfg.plan.runs.size(), 6u);
  EXPECT_EQ(cfg.plan.providers[0].predictions_root, dir / "preds");
  EXPECT_EQ(cfg.plan.providers[1].mode, ProviderMode::kCommand);
  EXPECT_EQ(cfg.plan.eval.iou_grid.size(), 5u);
  EXPECT_FALSE(cfg.plan.eval.nms_threshold.has_value());
  EXPECT_EQ(cfg.plan.eval.ap_method, eval::ApMethod::kVoc11);
  EXPECT_EQ(cfg.execute.cache_dir, dir / "cache");
  EXPECT_EQ(cfg.journal, dir / "runs.jsonl");
}
