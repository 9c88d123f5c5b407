#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <random>

#include "iqb/detection_eval.hpp"
#include "iqb/geometry.hpp"
#include "iqb/jpeg.hpp"
#include "iqb/quality.hpp"
#include "iqb/synthetic.hpp"

using namespace iqb;

namespace {

geometry::OrientedBox random_box(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {u(rng) * extent, u(rng) * extent, 8 + u(rng) * 40, 8 + u(rng) * 40,
          (u(rng) - 0.5) * std::numbers::pi};
}

void BM_ObbIou(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::vector<std::pair<geometry::OrientedBox, geometry::OrientedBox>> pairs;
  for (int i = 0; i < 1024; ++i) {
    const auto a = random_box(rng, 64);
    pairs.emplace_back(a, random_box(rng, 64));
  }
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& [a, b] = pairs[i++ & 1023];
    benchmark::DoNotOptimize(geometry::obb_iou(a, b));
  }
}
BENCHMARK(BM_ObbIou);

void BM_RotatedNms(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<geometry::ScoredBox> boxes;
  for (int i = 0; i < state.range(0); ++i) boxes.push_back({random_box(rng, 512), u(rng)});
  for (auto _ : state) benchmark::DoNotOptimize(geometry::rotated_nms(boxes, 0.5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RotatedNms)->Arg(100)->Arg(1000);

void BM_JpegEncode(benchmark::State& state) {
  const auto scene = synthetic::make_scene(3, {512, 512, 3, 20, 2.0});
  jpeg::EncodeOptions opt;
  opt.quality = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(jpeg::encode(scene.image, opt));
  state.SetBytesProcessed(state.iterations() * 512 * 512 * 3);
}
BENCHMARK(BM_JpegEncode)->Arg(50)->Arg(95);

void BM_Evaluate(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  eval::GroundTruth gt;
  std::vector<eval::DetectionRecord> preds;
  const char* classes[] = {"ship", "plane", "vehicle"};
  for (int img = 0; img < 50; ++img) {
    const std::string id = "img" + std::to_string(img);
    auto& list = gt[id];
    for (int k = 0; k < 20; ++k) {
      const auto box = random_box(rng, 1024);
      const std::string cls = classes[k % 3];
      list.push_back({geometry::to_corners(box), cls, false});
      auto jitter = box;
      jitter.cx += (u(rng) - 0.5) * 4;
      jitter.angle += (u(rng) - 0.5) * 0.1;
      preds.push_back({id, geometry::to_corners(jitter), cls, u(rng)});
      preds.push_back({id, geometry::to_corners(random_box(rng, 1024)), cls, u(rng) * 0.5});
    }
  }
  eval::EvalOptions opt;
  opt.thresholds = eval::coco_iou_grid();
  for (auto _ : state) benchmark::DoNotOptimize(eval::evaluate(preds, gt, opt));
}
BENCHMARK(BM_Evaluate)->Unit(benchmark::kMillisecond);

void BM_Rer(benchmark::State& state) {
  const auto img = synthetic::blurred_edge(256, 256, 128.3, 1.5, 40, 210);
  for (auto _ : state) benchmark::DoNotOptimize(quality::rer(img));
}
BENCHMARK(BM_Rer)->Unit(benchmark::kMillisecond);

void BM_Snr(benchmark::State& state) {
  const auto img = synthetic::flat_noise(1024, 1024, 100, 5, 7);
  for (auto _ : state) benchmark::DoNotOptimize(quality::snr(img));
}
BENCHMARK(BM_Snr)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
