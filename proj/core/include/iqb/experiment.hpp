#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iqb/data.hpp"
#include "iqb/detection_eval.hpp"
#include "iqb/modifier_spec.hpp"
#include "iqb/run_store.hpp"

namespace iqb::experiment {

enum class ProviderMode { kCommand, kPrecomputed };

// Source of predictions for a dataset variant. Command providers are run as
// argv with {dataset_root} and {output_dir} substituted and must write
// prediction files into {output_dir}. Precomputed providers read
// <predictions_root>/<variant name>/ when it exists, else predictions_root.
struct PredictionProvider {
  std::string name;
  ProviderMode mode = ProviderMode::kPrecomputed;
  std::vector<std::string> command_template;
  std::filesystem::path predictions_root;

  static PredictionProvider command(std::string name,
                                    std::vector<std::string> argv);
  static PredictionProvider precomputed(std::string name,
                                        std::filesystem::path root);

  void validate() const;
};

struct EvalConfig {
  std::vector<double> iou_grid = eval::coco_iou_grid();
  // Rotated NMS applied per image and class before matching; nullopt
  // disables it.
  std::optional<double> nms_threshold = 0.5;
  eval::ApMethod ap_method = eval::ApMethod::kAllPoint;
  std::string partition = "test";
  // Test images sampled for RER/SNR/PSNR; 0 means every image.
  int quality_sample_size = 50;
  std::uint64_t sample_seed = 0;
};

struct PlannedRun {
  std::string run_id;
  std::size_t modifier = 0;
  std::size_t provider = 0;
};

struct ExperimentPlan {
  data::Dataset dataset;
  std::vector<ModifierSpec> modifiers;
  std::vector<PredictionProvider> providers;
  EvalConfig eval;
  // Modifier-major cross product.
  std::vector<PlannedRun> runs;
};

// Stable 64-bit FNV-1a hash of (dataset name, modifier name, provider name)
// as 16 hex digits.
std::string run_hash(std::string_view dataset, std::string_view modifier,
                     std::string_view provider);

ExperimentPlan plan_experiment(data::Dataset dataset,
                               std::vector<ModifierSpec> modifiers,
                               std::vector<PredictionProvider> providers,
                               EvalConfig eval = {});

struct ExecuteOptions {
  // Materialized variants live in <cache_dir>/<dataset name>/<modifier>.
  std::filesystem::path cache_dir;
  // Per-run scratch space: <work_dir>/<run_id>/.
  std::filesystem::path work_dir;
  // 0 picks IQB_WORKERS, then hardware concurrency.
  int workers = 0;
};

// IQB_WORKERS / IQB_CACHE_DIR, when set.
std::optional<int> workers_from_env();
std::optional<std::filesystem::path> cache_dir_from_env();

// Executes every planned run and appends one record per run to `store`.
// A failing run is recorded with status kFailed and does not stop the rest.
// Returns records in plan order.
std::vector<RunRecord> execute(const ExperimentPlan& plan, JournalStore& store,
                               const ExecuteOptions& options);

// Experiment config document: dataset manifest, modifier grid, providers,
// eval settings. Relative paths resolve against the config's directory.
struct ExperimentConfig {
  ExperimentPlan plan;
  ExecuteOptions execute;
  std::filesystem::path journal;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace iqb::experiment
