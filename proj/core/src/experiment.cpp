#include "iqb/experiment.hpp"

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <future>
#include <map>
#include <mutex>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

#include "iqb/error.hpp"
#include "iqb/image_io.hpp"
#include "iqb/modifiers.hpp"
#include "iqb/quality.hpp"
#include "json_io.hpp"
#include "parallel.hpp"
#include "text_util.hpp"

extern char** environ;

namespace iqb::experiment {
namespace {

namespace fs = std::filesystem;
using detail::Json;

constexpr std::string_view kDatasetRoot = "{dataset_root}";
constexpr std::string_view kOutputDir = "{output_dir}";

bool mentions(const std::vector<std::string>& argv, std::string_view token) {
  return std::any_of(argv.begin(), argv.end(), [&](const std::string& a) {
    return a.find(token) != std::string::npos;
  });
}

std::string substitute(std::string arg, std::string_view key, const std::string& value) {
  for (auto pos = arg.find(key); pos != std::string::npos;
       pos = arg.find(key, pos + value.size())) {
    arg.replace(pos, key.size(), value);
  }
  return arg;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Seeded sample of partition indices, returned in ascending order.
std::vector<std::size_t> sample_indices(std::size_t n, int sample_size,
                                        std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (sample_size <= 0 || static_cast<std::size_t>(sample_size) >= n) return idx;
  std::mt19937_64 rng(seed);
  const auto k = static_cast<std::size_t>(sample_size);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Variant {
  modifiers::ModifiedDataset data;
  std::map<std::string, double> quality;
};

std::map<std::string, double> quality_metrics(const data::Dataset& base,
                                              const modifiers::ModifiedDataset& variant,
                                              const EvalConfig& cfg) {
  const auto& base_part = base.partition(cfg.partition);
  std::map<std::string, const data::ImageEntry*> by_id;
  for (const auto& e : variant.dataset.partition(cfg.partition)) by_id[e.id] = &e;

  std::vector<double> rers, snrs, psnrs;
  for (std::size_t i : sample_indices(base_part.size(), cfg.quality_sample_size,
                                      cfg.sample_seed)) {
    const auto& ref = base_part[i];
    const auto it = by_id.find(ref.id);
    if (it == by_id.end()) continue;
    const Image8 img = drop_extra_bands(load_image(it->second->path));
    if (img.width() >= quality::kMinMetricSize && img.height() >= quality::kMinMetricSize) {
      const GrayImage luma = to_luma(img);
      if (const auto r = quality::rer(luma); r.rer_median) rers.push_back(*r.rer_median);
      if (const auto s = quality::snr(luma); s.snr_db) snrs.push_back(*s.snr_db);
    }
    const Image8 orig = drop_extra_bands(load_image(ref.path));
    if (orig.width() == img.width() && orig.height() == img.height() &&
        orig.channels() == img.channels()) {
      psnrs.push_back(quality::psnr(orig, img));
    }
  }
  std::map<std::string, double> out;
  if (!rers.empty()) out["RER"] = median(rers);
  if (!snrs.empty()) out["SNR_dB"] = median(snrs);
  if (!psnrs.empty()) {
    // Mean over finite values; identical images everywhere give +inf.
    double sum = 0;
    std::size_t finite = 0;
    for (double p : psnrs) {
      if (std::isfinite(p)) {
        sum += p;
        ++finite;
      }
    }
    out["PSNR_dB"] = finite ? sum / static_cast<double>(finite) : HUGE_VAL;
  }
  return out;
}

// Materializes each modifier variant at most once, even under concurrent
// requests, and reuses a complete variant already present in the cache.
class VariantCache {
 public:
  VariantCache(const ExperimentPlan& plan, fs::path root, int workers)
      : plan_(plan), root_(std::move(root)), workers_(workers) {}

  const Variant& get(std::size_t modifier) {
    std::shared_future<std::shared_ptr<Variant>> fut;
    std::promise<std::shared_ptr<Variant>> promise;
    bool owner = false;
    {
      std::lock_guard lock(mutex_);
      auto it = pending_.find(modifier);
      if (it == pending_.end()) {
        fut = promise.get_future().share();
        pending_.emplace(modifier, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(build(modifier));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return *fut.get();
  }

 private:
  std::shared_ptr<Variant> build(std::size_t modifier) {
    const ModifierSpec& spec = plan_.modifiers[modifier];
    const fs::path dataset_root = root_ / plan_.dataset.name;
    const fs::path variant_root = dataset_root / spec.name();
    auto v = std::make_shared<Variant>();
    if (fs::exists(variant_root / "manifest.json")) {
      v->data = modifiers::load_modified_dataset(variant_root);
    } else {
      v->data = modifiers::apply_modifier(plan_.dataset, spec,
                                          {dataset_root, false, workers_});
    }
    v->quality = quality_metrics(plan_.dataset, v->data, plan_.eval);
    return v;
  }

  const ExperimentPlan& plan_;
  fs::path root_;
  int workers_;
  std::mutex mutex_;
  std::map<std::size_t, std::shared_future<std::shared_ptr<Variant>>> pending_;
};

// Runs argv, stderr captured into `log`. Returns the exit status.
int spawn_and_wait(const std::vector<std::string>& argv, const fs::path& log) {
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, log.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0644);
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) {
    throw IoError("cannot start '" + argv[0] + "': " + std::strerror(rc));
  }
  int status = 0;
  while (waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw IoError("waitpid failed");
  }
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return -1;
}

std::string tail(const std::string& text, std::size_t max_bytes) {
  const auto trimmed = detail::trim(text);
  if (trimmed.size() <= max_bytes) return std::string(trimmed);
  return "..." + std::string(trimmed.substr(trimmed.size() - max_bytes));
}

std::vector<eval::DetectionRecord> obtain_predictions(
    const PredictionProvider& provider, const modifiers::ModifiedDataset& variant,
    const fs::path& scratch) {
  if (provider.mode == ProviderMode::kPrecomputed) {
    fs::path dir = provider.predictions_root / variant.spec.name();
    if (!fs::exists(dir)) dir = provider.predictions_root;
    if (!fs::exists(dir)) {
      throw IoError("predictions not found at " + provider.predictions_root.string());
    }
    return eval::load_predictions(dir);
  }
  const fs::path out_dir = scratch / "predictions";
  fs::remove_all(out_dir);
  fs::create_directories(out_dir);
  std::vector<std::string> argv;
  for (const auto& a : provider.command_template) {
    argv.push_back(substitute(substitute(a, kDatasetRoot, variant.output_root.string()),
                              kOutputDir, out_dir.string()));
  }
  const fs::path log = scratch / "stderr.log";
  const int code = spawn_and_wait(argv, log);
  if (code != 0) {
    std::string err;
    if (fs::exists(log)) err = detail::read_text_file(log.string());
    throw Error("provider '" + provider.name + "' exited with status " +
                std::to_string(code) + (err.empty() ? "" : ": " + tail(err, 2000)));
  }
  return eval::load_predictions(out_dir);
}

fs::path default_dir(const char* leaf) {
  return fs::temp_directory_path() / leaf;
}

}  // namespace

PredictionProvider PredictionProvider::command(std::string name,
                                               std::vector<std::string> argv) {
  PredictionProvider p;
  p.name = std::move(name);
  p.mode = ProviderMode::kCommand;
  p.command_template = std::move(argv);
  p.validate();
  return p;
}

PredictionProvider PredictionProvider::precomputed(std::string name, fs::path root) {
  PredictionProvider p;
  p.name = std::move(name);
  p.mode = ProviderMode::kPrecomputed;
  p.predictions_root = std::move(root);
  p.validate();
  return p;
}

void PredictionProvider::validate() const {
  if (name.empty()) throw InvalidArgument("provider without a name");
  if (mode == ProviderMode::kCommand) {
    if (command_template.empty()) {
      throw InvalidArgument("provider " + name + ": empty command");
    }
    if (!mentions(command_template, kDatasetRoot) ||
        !mentions(command_template, kOutputDir)) {
      throw InvalidArgument("provider " + name +
                            ": command must use {dataset_root} and {output_dir}");
    }
  } else if (predictions_root.empty()) {
    throw InvalidArgument("provider " + name + ": missing predictions_root");
  }
}

std::string run_hash(std::string_view dataset, std::string_view modifier,
                     std::string_view provider) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;  // field separator
    h *= 0x100000001b3ULL;
  };
  feed(dataset);
  feed(modifier);
  feed(provider);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

ExperimentPlan plan_experiment(data::Dataset dataset, std::vector<ModifierSpec> modifiers,
                               std::vector<PredictionProvider> providers,
                               EvalConfig eval) {
  if (modifiers.empty()) throw InvalidArgument("experiment needs at least one modifier");
  if (providers.empty()) throw InvalidArgument("experiment needs at least one provider");
  std::set<std::string> seen;
  for (const auto& m : modifiers) {
    m.validate();
    if (!seen.insert(m.name()).second) {
      throw InvalidArgument("duplicate modifier " + m.name());
    }
  }
  seen.clear();
  for (const auto& p : providers) {
    p.validate();
    if (!seen.insert(p.name).second) {
      throw InvalidArgument("duplicate provider " + p.name);
    }
  }
  if (eval.iou_grid.empty()) throw InvalidArgument("empty IoU grid");
  for (double t : eval.iou_grid) {
    if (!(t > 0 && t < 1)) throw InvalidArgument("IoU thresholds must lie in (0, 1)");
  }
  if (eval.nms_threshold && !(*eval.nms_threshold >= 0 && *eval.nms_threshold <= 1)) {
    throw InvalidArgument("NMS threshold must lie in [0, 1]");
  }
  dataset.partition(eval.partition);  // throws if absent

  ExperimentPlan plan{std::move(dataset), std::move(modifiers), std::move(providers),
                      std::move(eval), {}};
  for (std::size_t m = 0; m < plan.modifiers.size(); ++m) {
    for (std::size_t p = 0; p < plan.providers.size(); ++p) {
      plan.runs.push_back({run_hash(plan.dataset.name, plan.modifiers[m].name(),
                                    plan.providers[p].name),
                           m, p});
    }
  }
  return plan;
}

std::optional<int> workers_from_env() {
  const char* v = std::getenv("IQB_WORKERS");
  if (!v || !*v) return std::nullopt;
  const auto n = detail::parse_int(v);
  if (!n || *n < 1 || *n > 4096) {
    spdlog::warn("ignoring IQB_WORKERS='{}': expected a positive integer", v);
    return std::nullopt;
  }
  return static_cast<int>(*n);
}

std::optional<fs::path> cache_dir_from_env() {
  const char* v = std::getenv("IQB_CACHE_DIR");
  if (!v || !*v) return std::nullopt;
  return fs::path(v);
}

std::vector<RunRecord> execute(const ExperimentPlan& plan, JournalStore& store,
                               const ExecuteOptions& options) {
  const fs::path cache = !options.cache_dir.empty() ? options.cache_dir
                         : cache_dir_from_env()     ? *cache_dir_from_env()
                                                    : default_dir("iqbench-cache");
  const fs::path work =
      !options.work_dir.empty() ? options.work_dir : default_dir("iqbench-work");
  const int workers =
      options.workers > 0 ? options.workers : workers_from_env().value_or(0);

  VariantCache variants(plan, cache, workers);
  const eval::GroundTruth gt = eval::ground_truth_from(plan.dataset.partition(plan.eval.partition));
  std::vector<RunRecord> records(plan.runs.size());
  std::mutex append_mutex;

  detail::parallel_for(plan.runs.size(), workers, [&](std::size_t i) {
    const PlannedRun& run = plan.runs[i];
    const ModifierSpec& spec = plan.modifiers[run.modifier];
    const PredictionProvider& provider = plan.providers[run.provider];
    RunRecord rec;
    rec.dataset_variant = spec.name();
    rec.provider = provider.name;
    rec.started_at = detail::utc_timestamp();
    try {
      const Variant& v = variants.get(run.modifier);
      rec.avg_size_mb = v.data.avg_size_mb;
      const fs::path scratch = work / run.run_id;
      fs::create_directories(scratch);
      auto preds = obtain_predictions(provider, v.data, scratch);
      if (plan.eval.nms_threshold) {
        preds = eval::suppress_duplicates(preds, *plan.eval.nms_threshold);
      }
      // Images the variant dropped keep their ground truth: missing images
      // count as misses rather than vanishing from the denominator.
      eval::EvalOptions eopt;
      eopt.thresholds = plan.eval.iou_grid;
      eopt.method = plan.eval.ap_method;
      const auto report = eval::evaluate(preds, gt, eopt);
      rec.metrics["mAP"] = report.map;
      rec.metrics["AR"] = report.ar;
      for (const auto& [cls, cr] : report.per_class) {
        rec.metrics["AP/" + cls] = cr.mean_ap;
        rec.metrics["AR/" + cls] = cr.ar;
      }
      rec.metrics["TP"] = static_cast<double>(report.counts.tp);
      rec.metrics["FP"] = static_cast<double>(report.counts.fp);
      rec.metrics["FN"] = static_cast<double>(report.counts.fn);
      for (const auto& [k, val] : v.quality) rec.metrics[k] = val;
      rec.status = RunStatus::kOk;
    } catch (const std::exception& e) {
      rec.metrics.clear();
      rec.status = RunStatus::kFailed;
      rec.diagnostics = e.what();
      spdlog::warn("run {} ({} x {}) failed: {}", run.run_id, rec.dataset_variant,
                   rec.provider, e.what());
    }
    rec.finished_at = detail::utc_timestamp();
    {
      std::lock_guard lock(append_mutex);
      rec.run_id = store.next_run_id(run.run_id);
      store.append(rec);
    }
    records[i] = std::move(rec);
  });
  return records;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  const Json j = detail::parse_json_file(path);
  const fs::path base = fs::absolute(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path q(p);
    return q.is_absolute() ? q : (base / q).lexically_normal();
  };

  ExperimentConfig cfg;
  try {
    data::Dataset dataset = data::open_dataset(resolve(j.at("dataset").get<std::string>()));

    std::vector<ModifierSpec> mods;
    for (const auto& jm : j.value("modifiers", Json::array())) {
      mods.push_back(detail::spec_from_json(jm));
    }
    for (const auto& q : j.value("jpeg_sweep", Json::array())) {
      mods.push_back(ModifierSpec::jpeg(q.get<int>()));
    }

    std::vector<PredictionProvider> providers;
    for (const auto& jp : j.at("providers")) {
      const auto name = jp.at("name").get<std::string>();
      const auto mode = jp.value("mode", std::string("precomputed"));
      if (mode == "command") {
        providers.push_back(PredictionProvider::command(
            name, jp.at("command").get<std::vector<std::string>>()));
      } else if (mode == "precomputed") {
        providers.push_back(PredictionProvider::precomputed(
            name, resolve(jp.at("predictions_root").get<std::string>())));
      } else {
        throw ParseError("provider " + name + ": unknown mode '" + mode + "'");
      }
    }

    EvalConfig ev;
    if (j.contains("eval")) {
      const Json& je = j.at("eval");
      if (je.contains("iou_grid")) {
        const Json& g = je.at("iou_grid");
        ev.iou_grid = g.is_string() ? eval::parse_iou_grid(g.get<std::string>())
                                    : g.get<std::vector<double>>();
      }
      if (je.contains("nms_threshold")) {
        const Json& n = je.at("nms_threshold");
        ev.nms_threshold = n.is_null() ? std::nullopt : std::optional<double>(n.get<double>());
      }
      if (je.contains("ap_method")) {
        ev.ap_method = eval::parse_ap_method(je.at("ap_method").get<std::string>());
      }
      ev.partition = je.value("partition", ev.partition);
      ev.quality_sample_size = je.value("quality_sample_size", ev.quality_sample_size);
      ev.sample_seed = je.value("sample_seed", ev.sample_seed);
    }

    cfg.plan = plan_experiment(std::move(dataset), std::move(mods), std::move(providers),
                               std::move(ev));
    if (j.contains("cache_dir")) cfg.execute.cache_dir = resolve(j.at("cache_dir").get<std::string>());
    if (j.contains("work_dir")) cfg.execute.work_dir = resolve(j.at("work_dir").get<std::string>());
    cfg.execute.workers = j.value("workers", 0);
    cfg.journal = resolve(j.value("journal", std::string("runs.jsonl")));
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return cfg;
}

}  // namespace iqb::experiment
