#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "iqb/detection_eval.hpp"
#include "iqb/error.hpp"
#include "oracles.hpp"

using namespace iqb;
using namespace iqb::eval;
using geometry::OrientedBox;
using geometry::to_corners;

namespace {

GroundTruthRecord gt_box(double cx, double cy, const std::string& cls = "ship",
                         bool difficult = false, double w = 10, double h = 10) {
  return {to_corners({cx, cy, w, h, 0}), cls, difficult};
}

DetectionRecord pred(const std::string& image, double cx, double cy, double score,
                     const std::string& cls = "ship", double w = 10, double h = 10) {
  return {image, to_corners({cx, cy, w, h, 0}), cls, score};
}

EvalOptions grid_options() {
  EvalOptions o;
  o.thresholds = coco_iou_grid();
  return o;
}

// Maximum number of disjoint (prediction, gt) pairs with IoU >= threshold.
std::size_t max_matching(const std::vector<DetectionRecord>& preds,
                         const std::vector<GroundTruthRecord>& gts, double thr,
                         std::size_t p = 0, unsigned used = 0) {
  if (p == preds.size()) return 0;
  std::size_t best = max_matching(preds, gts, thr, p + 1, used);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (used & (1u << g)) continue;
    if (geometry::quad_iou(preds[p].quad, gts[g].quad) >= thr) {
      best = std::max(best, 1 + max_matching(preds, gts, thr, p + 1, used | (1u << g)));
    }
  }
  return best;
}

void expect_same_report(const EvalReport& a, const EvalReport& b) {
  EXPECT_DOUBLE_EQ(a.map, b.map);
  EXPECT_DOUBLE_EQ(a.ar, b.ar);
  ASSERT_EQ(a.per_class.size(), b.per_class.size());
  for (const auto& [cls, cr] : a.per_class) {
    const auto& other = b.per_class.at(cls);
    ASSERT_EQ(cr.ap.size(), other.ap.size());
    for (std::size_t i = 0; i < cr.ap.size(); ++i) EXPECT_DOUBLE_EQ(cr.ap[i], other.ap[i]);
    EXPECT_DOUBLE_EQ(cr.ar, other.ar);
  }
}

// Several images, three classes, a mix of good, sloppy and spurious boxes.
std::pair<GroundTruth, std::vector<DetectionRecord>> random_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  const char* classes[] = {"ship", "plane", "harbor"};
  GroundTruth gt;
  std::vector<DetectionRecord> preds;
  for (int img = 0; img < 6; ++img) {
    const std::string id = "img" + std::to_string(img);
    auto& list = gt[id];
    for (int k = 0; k < 8; ++k) {
      const OrientedBox b{40.0 * k + 20, 30 + u(rng) * 200, 12 + u(rng) * 20, 8 + u(rng) * 10,
                          (u(rng) - 0.5) * 3};
      const std::string cls = classes[k % 3];
      list.push_back({to_corners(b), cls, u(rng) < 0.1});
      if (u(rng) < 0.8) {
        OrientedBox j = b;
        j.cx += (u(rng) - 0.5) * 6;
        j.cy += (u(rng) - 0.5) * 6;
        j.angle += (u(rng) - 0.5) * 0.3;
        preds.push_back({id, to_corners(j), cls, u(rng)});
      }
      if (u(rng) < 0.3) {
        preds.push_back({id, to_corners({u(rng) * 300, u(rng) * 300, 15, 10, u(rng)}), cls, u(rng)});
      }
    }
  }
  return {gt, preds};
}

}  // namespace

TEST(Match, SingleMatch) {
  const std::vector<GroundTruthRecord> gts = {gt_box(0, 0)};
  const std::vector<DetectionRecord> preds = {pred("a", 2.5, 0, 0.9)};  // IoU 0.6
  const auto m = match_detections(preds, gts, 0.5);
  EXPECT_EQ(m.true_positives, 1u);
  EXPECT_EQ(m.false_positives, 0u);
  EXPECT_EQ(m.false_negatives, 0u);
}

TEST(Match, DuplicateBecomesFalsePositive) {
  const std::vector<GroundTruthRecord> gts = {gt_box(0, 0)};
  const std::vector<DetectionRecord> preds = {pred("a", 1, 0, 0.4), pred("a", 0, 0, 0.9)};
  const auto m = match_detections(preds, gts, 0.5);
  EXPECT_EQ(m.order, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(m.outcomes[0], MatchOutcome::kTruePositive);
  EXPECT_EQ(m.outcomes[1], MatchOutcome::kFalsePositive);
}

TEST(Match, DifficultGroundTruthIsIgnored) {
  const std::vector<GroundTruthRecord> gts = {gt_box(0, 0, "ship", true), gt_box(50, 0)};
  const std::vector<DetectionRecord> preds = {pred("a", 0, 0, 0.9), pred("a", 0.5, 0, 0.8)};
  const auto m = match_detections(preds, gts, 0.5);
  EXPECT_EQ(m.outcomes[0], MatchOutcome::kIgnored);
  EXPECT_EQ(m.outcomes[1], MatchOutcome::kIgnored);
  EXPECT_EQ(m.true_positives, 0u);
  EXPECT_EQ(m.false_positives, 0u);
  EXPECT_EQ(m.false_negatives, 1u);
}

TEST(Match, PrefersHighestIou) {
  const std::vector<GroundTruthRecord> gts = {gt_box(0, 0), gt_box(4, 0)};
  const std::vector<DetectionRecord> preds = {pred("a", 3.5, 0, 0.9), pred("a", 0, 0, 0.8)};
  const auto m = match_detections(preds, gts, 0.3);
  EXPECT_EQ(m.true_positives, 2u);
}

TEST(Match, BruteForceOracle) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 400; ++trial) {
    std::vector<GroundTruthRecord> gts;
    const int n_gt = 1 + static_cast<int>(u(rng) * 3);
    for (int g = 0; g < n_gt; ++g) gts.push_back(gt_box(100.0 * g, 0));
    std::vector<DetectionRecord> preds;
    const int n_pred = 1 + static_cast<int>(u(rng) * 5);
    std::vector<double> scores(n_pred);
    std::iota(scores.begin(), scores.end(), 1.0);
    std::shuffle(scores.begin(), scores.end(), rng);
    for (int p = 0; p < n_pred; ++p) {
      const double cx = 100.0 * static_cast<int>(u(rng) * 4) + (u(rng) - 0.5) * 8;
      preds.push_back(pred("a", cx, (u(rng) - 0.5) * 8, scores[p] / 10));
    }
    for (double thr : {0.3, 0.5, 0.7}) {
      const auto m = match_detections(preds, gts, thr);
      ASSERT_EQ(m.true_positives, max_matching(preds, gts, thr)) << "trial " << trial;
      ASSERT_EQ(m.true_positives + m.false_positives, preds.size());
      ASSERT_EQ(m.true_positives + m.false_negatives, gts.size());
    }
  }
}

TEST(ConfusionCounts, ShipScene) {
  GroundTruth gt;
  std::vector<DetectionRecord> preds;
  auto& ships = gt["harbour"];
  for (int i = 0; i < 157; ++i) ships.push_back(gt_box(20.0 * (i % 20), 20.0 * (i / 20)));
  for (int i = 0; i < 146; ++i) {
    preds.push_back(pred("harbour", 20.0 * (i % 20) + 1, 20.0 * (i / 20), 0.5 + i / 1000.0));
  }
  for (int i = 0; i < 9; ++i) preds.push_back(pred("harbour", 1000 + 20.0 * i, 1000, 0.3));
  const auto r = evaluate(preds, gt, grid_options());
  EXPECT_EQ(r.counts.tp, 146u);
  EXPECT_EQ(r.counts.fp, 9u);
  EXPECT_EQ(r.counts.fn, 11u);
}

TEST(AveragePrecision, Examples) {
  const bool all_tp[] = {true, true, true};
  EXPECT_DOUBLE_EQ(*average_precision(all_tp, 3, ApMethod::kAllPoint), 1.0);
  const bool none[] = {false, false};
  EXPECT_DOUBLE_EQ(*average_precision(none, 2, ApMethod::kAllPoint), 0.0);
  EXPECT_DOUBLE_EQ(*average_precision({}, 2, ApMethod::kAllPoint), 0.0);
  EXPECT_FALSE(average_precision(all_tp, 0, ApMethod::kAllPoint).has_value());
  const bool mixed[] = {true, false, true};
  // Envelope (1, 2/3, 2/3): 1 * 0.5 + 2/3 * 0.5.
  EXPECT_NEAR(*average_precision(mixed, 2, ApMethod::kAllPoint), 0.5 + 2.0 / 3.0 * 0.5, 1e-12);
}

TEST(AveragePrecision, InterpolatedVariants) {
  const bool mixed[] = {true, false, true};
  // Recall points 0..0.5 take precision 1, 0.6..1.0 take 2/3.
  EXPECT_NEAR(*average_precision(mixed, 2, ApMethod::kVoc11), (6 * 1.0 + 5 * 2.0 / 3.0) / 11, 1e-12);
  EXPECT_NEAR(*average_precision(mixed, 2, ApMethod::kCoco101), (51 * 1.0 + 50 * 2.0 / 3.0) / 101,
              1e-12);
  const bool half[] = {true};
  // Recall tops out at 0.5.
  EXPECT_NEAR(*average_precision(half, 2, ApMethod::kVoc11), 6.0 / 11, 1e-12);
}

TEST(AveragePrecision, PureFalsePositiveNeverHelps) {
  std::mt19937_64 rng(22);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 200; ++t) {
    std::vector<char> flags(1 + t % 12);
    for (auto& f : flags) f = coin(rng);
    const std::size_t n_gt = 12;
    const std::size_t at = t % (flags.size() + 1);
    auto with_fp = flags;
    with_fp.insert(with_fp.begin() + static_cast<std::ptrdiff_t>(at), 0);
    auto as_bools = [](const std::vector<char>& v) {
      std::unique_ptr<bool[]> b(new bool[v.size()]);
      for (std::size_t i = 0; i < v.size(); ++i) b[i] = v[i];
      return b;
    };
    const auto a = as_bools(flags), b = as_bools(with_fp);
    EXPECT_LE(*average_precision({b.get(), with_fp.size()}, n_gt, ApMethod::kAllPoint),
              *average_precision({a.get(), flags.size()}, n_gt, ApMethod::kAllPoint) + 1e-15);
  }
}

TEST(IouGrid, Parsing) {
  EXPECT_EQ(parse_iou_grid("0.5:0.05:0.95"), coco_iou_grid());
  EXPECT_EQ(coco_iou_grid().size(), 10u);
  EXPECT_DOUBLE_EQ(coco_iou_grid().back(), 0.95);
  EXPECT_EQ(parse_iou_grid("0.5"), (std::vector<double>{0.5}));
  EXPECT_EQ(parse_iou_grid("0.5,0.75"), (std::vector<double>{0.5, 0.75}));
  EXPECT_THROW(parse_iou_grid("0.5:0.05"), ParseError);
  EXPECT_THROW(parse_iou_grid("a,b"), ParseError);
}

TEST(Evaluate, PerfectPredictions) {
  auto [gt, unused] = random_scene(3);
  std::vector<DetectionRecord> preds;
  for (const auto& [id, list] : gt) {
    for (const auto& g : list) preds.push_back({id, g.quad, g.category, 1.0});
  }
  const auto r = evaluate(preds, gt, grid_options());
  EXPECT_DOUBLE_EQ(r.map, 1.0);
  EXPECT_DOUBLE_EQ(r.ar, 1.0);
}

TEST(Evaluate, SinglePredictionAtIou060) {
  GroundTruth gt{{"a", {gt_box(0, 0)}}};
  const std::vector<DetectionRecord> preds = {pred("a", 2.5, 0, 0.9)};
  ASSERT_DOUBLE_EQ(geometry::quad_iou(preds[0].quad, gt["a"][0].quad), 0.6);
  const auto r = evaluate(preds, gt, grid_options());
  const auto& ap = r.per_class.at("ship").ap;
  for (std::size_t i = 0; i < ap.size(); ++i) EXPECT_DOUBLE_EQ(ap[i], i < 3 ? 1.0 : 0.0);
  EXPECT_NEAR(r.map, 0.30, 1e-12);
  EXPECT_NEAR(r.ar, 0.30, 1e-12);
}

TEST(Evaluate, EmptyPredictions) {
  auto [gt, unused] = random_scene(4);
  const auto r = evaluate({}, gt, grid_options());
  EXPECT_DOUBLE_EQ(r.map, 0.0);
  EXPECT_DOUBLE_EQ(r.ar, 0.0);
}

TEST(Evaluate, UnknownImageIdsAreListed) {
  GroundTruth gt{{"a", {gt_box(0, 0)}}};
  const std::vector<DetectionRecord> preds = {pred("zz", 0, 0, 0.9), pred("yy", 0, 0, 0.9)};
  try {
    evaluate(preds, gt, grid_options());
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("yy"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
  }
}

TEST(Evaluate, RejectsBadThresholds) {
  GroundTruth gt{{"a", {gt_box(0, 0)}}};
  EvalOptions o;
  o.thresholds.clear();
  EXPECT_THROW(evaluate({}, gt, o), InvalidArgument);
  o.thresholds = {0.5, 1.0};
  EXPECT_THROW(evaluate({}, gt, o), InvalidArgument);
}

TEST(Evaluate, ClassesWithoutGroundTruthAreExcluded) {
  GroundTruth gt{{"a", {gt_box(0, 0)}}};
  const std::vector<DetectionRecord> preds = {pred("a", 0, 0, 0.9), pred("a", 0, 0, 0.9, "plane")};
  const auto r = evaluate(preds, gt, grid_options());
  EXPECT_EQ(r.per_class.size(), 1u);
  EXPECT_DOUBLE_EQ(r.map, 1.0);
  EXPECT_EQ(r.counts.fp, 1u);
}

TEST(Evaluate, PoolsRankingAcrossImages) {
  // Image a: confident FP; image b: less confident TP. Pooled ranking gives
  // [FP, TP] -> AP 0.5, which per-image averaging would not produce.
  GroundTruth gt{{"a", {}}, {"b", {gt_box(0, 0)}}};
  const std::vector<DetectionRecord> preds = {pred("a", 0, 0, 0.9), pred("b", 0, 0, 0.5)};
  EvalOptions o;
  o.thresholds = {0.5};
  EXPECT_DOUBLE_EQ(evaluate(preds, gt, o).map, 0.5);
}

TEST(Evaluate, ScoreMonotoneInvariance) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto [gt, preds] = random_scene(seed);
    const auto base = evaluate(preds, gt, grid_options());
    for (auto f : {+[](double s) { return s * s; }, +[](double s) { return std::sqrt(s); },
                   +[](double s) { return 0.1 + 0.5 * s; }}) {
      auto moved = preds;
      for (auto& p : moved) p.score = f(p.score);
      expect_same_report(base, evaluate(moved, gt, grid_options()));
    }
  }
}

TEST(Evaluate, ImagePermutationInvariance) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    auto [gt, preds] = random_scene(seed);
    const auto base = evaluate(preds, gt, grid_options());
    // Rename images so that their sorted order is reversed, and shuffle the
    // image blocks in the prediction list.
    GroundTruth renamed;
    std::map<std::string, std::string> alias;
    int k = 100;
    for (auto it = gt.rbegin(); it != gt.rend(); ++it) alias[it->first] = "x" + std::to_string(k++);
    for (const auto& [id, list] : gt) renamed[alias[id]] = list;
    std::vector<DetectionRecord> moved;
    for (const auto& p : preds) moved.push_back({alias[p.image_id], p.quad, p.category, p.score});
    std::stable_sort(moved.begin(), moved.end(),
                     [](const auto& a, const auto& b) { return a.image_id > b.image_id; });
    expect_same_report(base, evaluate(moved, renamed, grid_options()));
  }
}

TEST(Evaluate, MetricsAreBounded) {
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    auto [gt, preds] = random_scene(seed);
    const auto r = evaluate(preds, gt, grid_options());
    EXPECT_GE(r.map, 0.0);
    EXPECT_LE(r.map, 1.0);
    EXPECT_LE(r.ar, 1.0);
    for (const auto& [c, cr] : r.per_class) {
      for (double ap : cr.ap) {
        EXPECT_GE(ap, 0.0);
        EXPECT_LE(ap, 1.0);
      }
    }
  }
}

TEST(Predictions, ParseAndSerializeRoundTrip) {
  auto [gt, preds] = random_scene(30);
  EXPECT_EQ(parse_predictions(serialize_predictions(preds)).size(), preds.size());
  const auto back = parse_predictions(serialize_predictions(preds));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    EXPECT_EQ(back[i].image_id, preds[i].image_id);
    EXPECT_EQ(back[i].quad, preds[i].quad);
    EXPECT_EQ(back[i].score, preds[i].score);
  }
  EXPECT_THROW(parse_predictions("a 0 0 1 0 1 1 0 1 ship 1.5\n"), ParseError);
  EXPECT_THROW(parse_predictions("a 0 0 1 0 1 1 0 1 ship\n"), ParseError);
}

TEST(Predictions, SuppressDuplicatesPerImageAndClass) {
  const std::vector<DetectionRecord> preds = {
      pred("a", 0, 0, 0.9), pred("a", 1, 0, 0.8), pred("a", 1, 0, 0.7, "plane"),
      pred("b", 1, 0, 0.6)};
  const auto kept = suppress_duplicates(preds, 0.5);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept[0].score, 0.9);
  EXPECT_EQ(kept[1].category, "plane");
  EXPECT_EQ(kept[2].image_id, "b");
}

TEST(Report, JsonRoundTrip) {
  auto [gt, preds] = random_scene(31);
  const auto r = evaluate(preds, gt, grid_options());
  const auto back = report_from_json(report_to_json(r, 2));
  expect_same_report(r, back);
  EXPECT_EQ(back.counts.tp, r.counts.tp);
  EXPECT_EQ(back.thresholds, r.thresholds);
}
