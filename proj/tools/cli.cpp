#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "iqb/data.hpp"
#include "iqb/detection_eval.hpp"
#include "iqb/error.hpp"
#include "iqb/experiment.hpp"
#include "iqb/image_io.hpp"
#include "iqb/modifiers.hpp"
#include "iqb/quality.hpp"
#include "iqb/report.hpp"
#include "iqb/run_store.hpp"
#include "iqb/synthetic.hpp"

namespace iqb::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;

Json json_number(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  return *v;
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path == "-") {
    out << text;
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << text;
}

bool looks_like_dataset(const fs::path& p, const std::string& partition) {
  return fs::is_regular_file(p) || fs::exists(p / "manifest.json") ||
         fs::exists(p / "images") || fs::exists(p / partition / "images");
}

// Ground truth from a dataset (manifest or directory layout), or from a
// plain directory of per-image annotation files named <image_id>.txt.
eval::GroundTruth load_ground_truth(const fs::path& path, const std::string& partition) {
  if (looks_like_dataset(path, partition)) {
    const auto ds = data::open_dataset(path);
    return eval::ground_truth_from(ds.partition(partition));
  }
  if (!fs::is_directory(path)) throw IoError("ground truth not found: " + path.string());
  eval::GroundTruth gt;
  for (const auto& e : fs::directory_iterator(path)) {
    if (!e.is_regular_file() || e.path().extension() != ".txt") continue;
    auto& list = gt[e.path().stem().string()];
    for (const auto& obj : data::load_annotations(e.path())) {
      list.push_back({obj.quad, obj.category, obj.difficult});
    }
  }
  if (gt.empty()) throw IoError("no annotation files in " + path.string());
  return gt;
}

std::vector<experiment::RunRecord> load_runs(const std::string& journal,
                                             const std::optional<std::string>& provider) {
  auto runs = experiment::read_journal(journal);
  if (provider) {
    std::erase_if(runs, [&](const auto& r) { return r.provider != *provider; });
    if (runs.empty()) throw InvalidArgument("no runs for provider '" + *provider + "'");
  }
  return runs;
}

struct Handlers {
  explicit Handlers(std::ostream& o) : out(o) {}

  std::ostream& out;

  // modify
  std::string dataset;
  std::string out_root;
  std::vector<int> jpeg_qualities;
  std::string chroma = "420";
  std::vector<double> resize_scales;
  std::string interpolation = "bilinear";
  bool identity = false;
  bool lenient = false;
  int workers = 0;

  // quality / eval shared
  std::string partition = "test";
  int sample_size = 0;
  std::uint64_t seed = 0;
  std::string reference;
  std::string json_out;

  // eval
  std::string gt_path;
  std::string pred_path;
  std::string iou_grid = "0.5:0.05:0.95";
  std::optional<double> nms_threshold;
  std::string ap_method = "all_point";

  // run
  bool iou_grid_set = false;
  std::string config;
  std::string journal;
  std::optional<int> run_sample_size;

  // report / optimum
  std::optional<std::string> provider;
  std::string csv_out;
  std::optional<double> epsilon;

  // tile
  int tile = 1024;
  int overlap = 0;
  double min_area_fraction = 0.5;

  // synth
  int images = 4;
  int size = 256;

  int modify() {
    const auto ds = data::open_dataset(dataset);
    std::vector<ModifierSpec> specs;
    if (identity) specs.push_back(ModifierSpec::identity());
    for (int q : jpeg_qualities) specs.push_back(ModifierSpec::jpeg(q, parse_chroma(chroma)));
    for (double s : resize_scales) {
      specs.push_back(ModifierSpec::resize(s, parse_interpolation(interpolation)));
    }
    if (specs.empty()) throw InvalidArgument("no modifier given (--jpeg, --resize, --identity)");
    for (const auto& s : specs) s.validate();
    modifiers::ApplyOptions opt{out_root, !lenient, workers};
    out << fmt::format("{:<28} {:>12} {:>8}\n", "variant", "avg_size_mb", "failed");
    for (const auto& s : specs) {
      const auto v = modifiers::apply_modifier(ds, s, opt);
      out << fmt::format("{:<28} {:>12.6f} {:>8}\n", s.name(), v.avg_size_mb, v.failures.size());
    }
    return kExitOk;
  }

  int quality_cmd() {
    const auto ds = data::open_dataset(dataset);
    const auto& part = ds.partition(partition);
    std::map<std::string, const data::ImageEntry*> refs;
    std::optional<data::Dataset> ref_ds;
    if (!reference.empty()) {
      ref_ds = data::open_dataset(reference);
      for (const auto& e : ref_ds->partition(partition)) refs[e.id] = &e;
    }
    std::vector<std::size_t> idx(part.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (sample_size > 0 && static_cast<std::size_t>(sample_size) < idx.size()) {
      std::mt19937_64 rng(seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(sample_size));
      std::sort(idx.begin(), idx.end());
    }

    Json rows = Json::array();
    out << fmt::format("{:<24} {:>8} {:>8} {:>9} {:>9}\n", "image", "RER_x", "RER_y", "SNR_dB",
                       "PSNR_dB");
    auto cell = [](const std::optional<double>& v, int prec) {
      return v ? fmt::format("{:.{}f}", *v, prec) : std::string("n/a");
    };
    std::vector<double> rer_all, snr_all, psnr_all;
    for (std::size_t i : idx) {
      const auto& e = part[i];
      const Image8 img = drop_extra_bands(load_image(e.path));
      std::optional<double> rx, ry, snr_db, ps;
      if (img.width() >= quality::kMinMetricSize && img.height() >= quality::kMinMetricSize) {
        const auto luma = to_luma(img);
        const auto r = quality::rer(luma);
        rx = r.rer_x;
        ry = r.rer_y;
        if (r.rer_median) rer_all.push_back(*r.rer_median);
        snr_db = quality::snr(luma).snr_db;
        if (snr_db) snr_all.push_back(*snr_db);
      }
      if (const auto it = refs.find(e.id); it != refs.end()) {
        const Image8 ref = drop_extra_bands(load_image(it->second->path));
        if (ref.width() == img.width() && ref.height() == img.height() &&
            ref.channels() == img.channels()) {
          ps = quality::psnr(ref, img);
          psnr_all.push_back(*ps);
        }
      }
      out << fmt::format("{:<24} {:>8} {:>8} {:>9} {:>9}\n", e.id, cell(rx, 3), cell(ry, 3),
                         cell(snr_db, 2), cell(ps, 2));
      rows.push_back({{"id", e.id}, {"rer_x", json_number(rx)}, {"rer_y", json_number(ry)},
                      {"snr_db", json_number(snr_db)}, {"psnr_db", json_number(ps)}});
    }
    auto med = [](std::vector<double> v) -> std::optional<double> {
      if (v.empty()) return std::nullopt;
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    out << fmt::format("{:<24} {:>17} {:>9} {:>9}\n", "median", cell(med(rer_all), 3),
                       cell(med(snr_all), 2), cell(med(psnr_all), 2));
    if (!json_out.empty()) {
      const Json doc = {{"images", rows},
                        {"rer_median", json_number(med(rer_all))},
                        {"snr_db_median", json_number(med(snr_all))},
                        {"psnr_db_median", json_number(med(psnr_all))}};
      write_text(json_out, doc.dump(2) + "\n", out);
    }
    return kExitOk;
  }

  int eval_cmd() {
    const auto gt = load_ground_truth(gt_path, partition);
    auto preds = eval::load_predictions(pred_path);
    if (nms_threshold && *nms_threshold >= 0) {
      preds = eval::suppress_duplicates(preds, *nms_threshold);
    }
    eval::EvalOptions opt;
    opt.thresholds = eval::parse_iou_grid(iou_grid);
    opt.method = eval::parse_ap_method(ap_method);
    const auto report = eval::evaluate(preds, gt, opt);
    const auto& c = report.counts;
    out << fmt::format("mAP {:.4f}  AR {:.4f}\n", report.map, report.ar);
    const double precision = c.tp + c.fp ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    const double recall = c.tp + c.fn ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
    out << fmt::format("IoU {}: TP {}  FP {}  FN {}  precision {:.4f}  recall {:.4f}\n",
                       report.reference_threshold, c.tp, c.fp, c.fn, precision, recall);
    for (const auto& [cls, cr] : report.per_class) {
      out << fmt::format("  {:<20} AP {:.4f}  AR {:.4f}  gt {}  pred {}\n", cls, cr.mean_ap,
                         cr.ar, cr.n_gt, cr.n_pred);
    }
    if (!json_out.empty()) write_text(json_out, eval::report_to_json(report, 2) + "\n", out);
    return kExitOk;
  }

  int run_cmd() {
    auto cfg = experiment::load_experiment_config(config);
    if (!journal.empty()) cfg.journal = journal;
    if (workers > 0) cfg.execute.workers = workers;
    auto& ev = cfg.plan.eval;
    bool replan = false;
    if (run_sample_size) {
      ev.quality_sample_size = *run_sample_size;
    }
    if (nms_threshold) {
      ev.nms_threshold = *nms_threshold < 0 ? std::nullopt : nms_threshold;
      replan = true;
    }
    if (iou_grid_set) {
      ev.iou_grid = eval::parse_iou_grid(iou_grid);
      replan = true;
    }
    if (replan) {
      cfg.plan = experiment::plan_experiment(std::move(cfg.plan.dataset),
                                             std::move(cfg.plan.modifiers),
                                             std::move(cfg.plan.providers), std::move(ev));
    }
    experiment::JournalStore store(cfg.journal);
    const auto records = experiment::execute(cfg.plan, store, cfg.execute);
    std::size_t failed = 0;
    for (const auto& r : records) {
      if (r.status == experiment::RunStatus::kFailed) {
        ++failed;
        out << fmt::format("{}  {} x {}  FAILED: {}\n", r.run_id, r.dataset_variant, r.provider,
                           r.diagnostics);
      } else {
        out << fmt::format("{}  {} x {}  mAP {:.4f}  AR {:.4f}  size {:.4f} MB\n", r.run_id,
                           r.dataset_variant, r.provider, r.metrics.at("mAP"),
                           r.metrics.at("AR"), r.avg_size_mb);
      }
    }
    out << fmt::format("{} runs, {} failed, journal {}\n", records.size(), failed,
                       cfg.journal.string());
    return kExitOk;
  }

  int report_cmd() {
    const auto runs = load_runs(journal, provider);
    out << report::render_summary(report::summarize(runs));
    if (!csv_out.empty()) write_text(csv_out, report::emit_scatter(runs), out);
    return kExitOk;
  }

  int optimum() {
    const auto runs = load_runs(journal, provider);
    const auto points = report::rate_points(runs);
    if (points.empty()) throw InvalidArgument("no successful runs in " + journal);
    std::vector<std::string> providers;
    for (const auto& p : points) {
      if (std::find(providers.begin(), providers.end(), p.provider) == providers.end()) {
        providers.push_back(p.provider);
      }
    }
    for (const auto& name : providers) {
      std::vector<report::RatePoint> mine;
      for (const auto& p : points) {
        if (p.provider == name) mine.push_back(p);
      }
      const auto best = report::optimal_point(mine, *epsilon);
      if (providers.size() == 1) {
        out << report::format_shortest(best.avg_size_mb) << '\n';
      } else {
        out << fmt::format("{}\t{}\t{}\t{}\n", name, report::format_shortest(best.avg_size_mb),
                           report::format_shortest(best.map), best.modifier);
      }
    }
    return kExitOk;
  }

  int tile_cmd() {
    const auto ds = data::open_dataset(dataset);
    data::TileOptions opt;
    opt.tile = tile;
    opt.overlap = overlap;
    opt.min_area_fraction = min_area_fraction;
    data::Dataset tiled;
    tiled.name = ds.name + "_tiles";
    tiled.provenance = ds.provenance;
    const fs::path root(out_root);
    std::size_t count = 0;
    for (const auto& [name, entries] : ds.partitions) {
      auto& dst = tiled.partitions[name];
      for (const auto& e : entries) {
        for (auto& t : data::tile_image(e, load_image(e.path), opt)) {
          t.entry.path = root / name / "images" / (t.entry.id + ".png");
          t.entry.annotation_path = root / name / "labelTxt" / (t.entry.id + ".txt");
          save_png(t.entry.path, t.pixels);
          const auto labels = data::serialize_obb_annotations(t.entry.annotations);
          std::ofstream(t.entry.annotation_path, std::ios::binary) << labels;
          t.entry.byte_size = fs::file_size(t.entry.path);
          dst.push_back(std::move(t.entry));
          ++count;
        }
      }
    }
    data::save_manifest(tiled, root / "manifest.json");
    out << fmt::format("{} tiles written to {}\n", count, root.string());
    return kExitOk;
  }

  int synth() {
    synthetic::CorpusOptions opt;
    opt.name = fs::path(out_root).filename().string();
    if (opt.name.empty()) opt.name = "synthetic";
    opt.images_per_partition = images;
    opt.scene.width = opt.scene.height = size;
    opt.seed = seed;
    const auto ds = synthetic::write_corpus(out_root, opt);
    out << fmt::format("{} images written to {}\n", ds.image_count(), out_root);
    return kExitOk;
  }


};

}  // namespace

int cli_dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Image-quality benchmarking for oriented object detection", "iqbench"};
  app.require_subcommand(1);
  Handlers h{out};
  int (Handlers::*action)() = nullptr;
  auto bind = [&](CLI::App* sub, int (Handlers::*fn)()) {
    sub->callback([&action, fn] { action = fn; });
  };

  auto* modify = app.add_subcommand("modify", "Write modified dataset variants");
  modify->add_option("--dataset", h.dataset, "Dataset manifest or directory")->required();
  modify->add_option("--out", h.out_root, "Output root for variants")->required();
  modify->add_option("--jpeg", h.jpeg_qualities, "JPEG qualities (1-100)")->delimiter(',');
  modify->add_option("--chroma", h.chroma, "Chroma subsampling: 420 or 444");
  modify->add_option("--resize", h.resize_scales, "Resize scale factors")->delimiter(',');
  modify->add_option("--interpolation", h.interpolation, "nearest, bilinear or bicubic");
  modify->add_flag("--identity", h.identity, "Also write an unmodified copy");
  modify->add_flag("--lenient", h.lenient, "Drop undecodable images instead of failing");
  modify->add_option("--workers", h.workers, "Worker threads (0 = all cores)");
  bind(modify, &Handlers::modify);

  auto* quality = app.add_subcommand("quality", "RER, SNR and PSNR over a dataset partition");
  quality->add_option("--dataset", h.dataset, "Dataset manifest or directory")->required();
  quality->add_option("--partition", h.partition, "Partition to measure");
  quality->add_option("--sample-size", h.sample_size, "Images sampled (0 = all)");
  quality->add_option("--seed", h.seed, "Sampling seed");
  quality->add_option("--reference", h.reference, "Reference dataset for PSNR");
  quality->add_option("--json", h.json_out, "Write JSON results to a file ('-' for stdout)");
  bind(quality, &Handlers::quality_cmd);

  auto* ev = app.add_subcommand("eval", "Evaluate predictions against ground truth");
  ev->add_option("--gt", h.gt_path, "Dataset or directory of <image_id>.txt annotations")
      ->required();
  ev->add_option("--pred", h.pred_path, "Prediction file or directory")->required();
  ev->add_option("--partition", h.partition, "Dataset partition holding the ground truth");
  ev->add_option("--iou-grid", h.iou_grid, "start:step:stop or comma list");
  ev->add_option("--nms-threshold", h.nms_threshold, "Rotated NMS before matching; negative disables");
  ev->add_option("--ap-method", h.ap_method, "all_point, voc11 or coco101");
  ev->add_option("--json", h.json_out, "Write the report as JSON ('-' for stdout)");
  bind(ev, &Handlers::eval_cmd);

  auto* run = app.add_subcommand("run", "Execute an experiment config");
  run->add_option("--config", h.config, "Experiment JSON config")->required();
  run->add_option("--journal", h.journal, "Override the journal path");
  run->add_option("--workers", h.workers, "Parallel runs");
  run->add_option("--sample-size", h.run_sample_size, "Quality sample size (0 = all)");
  run->add_option("--nms-threshold", h.nms_threshold, "NMS threshold; negative disables");
  run->add_option("--iou-grid", h.iou_grid, "start:step:stop or comma list")
      ->each([&h](const std::string&) { h.iou_grid_set = true; });
  bind(run, &Handlers::run_cmd);

  auto* rep = app.add_subcommand("report", "Summary table and scatter CSV from a journal");
  rep->add_option("--journal", h.journal, "Run journal")->required();
  rep->add_option("--provider", h.provider, "Only this provider");
  rep->add_option("--csv", h.csv_out, "Write scatter CSV ('-' for stdout)");
  bind(rep, &Handlers::report_cmd);

  auto* opt = app.add_subcommand("optimum", "Smallest size within epsilon of the best mAP");
  opt->add_option("--journal", h.journal, "Run journal")->required();
  opt->add_option("--epsilon", h.epsilon, "mAP tolerance in [0, 1)")->required();
  opt->add_option("--provider", h.provider, "Only this provider");
  bind(opt, &Handlers::optimum);

  auto* tile = app.add_subcommand("tile", "Cut a dataset into square tiles");
  tile->add_option("--dataset", h.dataset, "Dataset manifest or directory")->required();
  tile->add_option("--out", h.out_root, "Output root")->required();
  tile->add_option("--tile", h.tile, "Tile side in pixels");
  tile->add_option("--overlap", h.overlap, "Overlap in pixels");
  tile->add_option("--min-area-fraction", h.min_area_fraction, "Object keep fraction");
  bind(tile, &Handlers::tile_cmd);

  auto* synth = app.add_subcommand("synth", "Write a synthetic annotated corpus");
  synth->add_option("--out", h.out_root, "Output root")->required();
  synth->add_option("--images", h.images, "Images per partition");
  synth->add_option("--size", h.size, "Image side in pixels");
  synth->add_option("--seed", h.seed, "Seed");
  bind(synth, &Handlers::synth);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "iqbench: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    return (h.*action)();
  } catch (const std::exception& e) {
    err << "iqbench: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace iqb::cli
