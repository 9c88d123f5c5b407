#include "iqb/detection_eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <numeric>
#include <set>
#include <tuple>

#include "iqb/error.hpp"
#include "json_io.hpp"
#include "text_util.hpp"

namespace iqb::eval {
namespace {

namespace fs = std::filesystem;

// IoU between every prediction (row) and ground truth (column).
struct IouMatrix {
  std::size_t cols = 0;
  std::vector<double> values;
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

IouMatrix iou_matrix(std::span<const DetectionRecord> preds,
                     std::span<const GroundTruthRecord> gts) {
  IouMatrix m;
  m.cols = gts.size();
  m.values.resize(preds.size() * gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) {
      m.values[i * m.cols + j] = geometry::quad_iou(preds[i].quad, gts[j].quad);
    }
  }
  return m;
}

std::vector<std::size_t> rank_by_score(std::span<const DetectionRecord> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].score > preds[b].score;
  });
  return order;
}

MatchResult match_with(std::span<const DetectionRecord> preds,
                       std::span<const GroundTruthRecord> gts,
                       const IouMatrix& iou, double threshold) {
  MatchResult r;
  r.order = rank_by_score(preds);
  r.outcomes.reserve(preds.size());
  std::vector<char> matched(gts.size(), 0);
  for (std::size_t p : r.order) {
    std::ptrdiff_t best = -1;
    double best_iou = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!gts[g].difficult && matched[g]) continue;
      const double v = iou.at(p, g);
      if (v >= threshold && (best < 0 || v > best_iou)) {
        best = static_cast<std::ptrdiff_t>(g);
        best_iou = v;
      }
    }
    if (best < 0) {
      r.outcomes.push_back(MatchOutcome::kFalsePositive);
      ++r.false_positives;
    } else if (gts[static_cast<std::size_t>(best)].difficult) {
      r.outcomes.push_back(MatchOutcome::kIgnored);
    } else {
      matched[static_cast<std::size_t>(best)] = 1;
      r.outcomes.push_back(MatchOutcome::kTruePositive);
      ++r.true_positives;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!gts[g].difficult && !matched[g]) ++r.false_negatives;
  }
  return r;
}

struct ImageClass {
  std::vector<DetectionRecord> preds;
  std::vector<GroundTruthRecord> gts;
  IouMatrix iou;
};

struct RankedOutcome {
  double score;
  const std::string* image_id;
  std::size_t rank;
  bool tp;
};

}  // namespace

GroundTruth ground_truth_from(std::span<const data::ImageEntry> entries) {
  GroundTruth gt;
  for (const auto& e : entries) {
    auto& list = gt[e.id];
    for (const auto& obj : e.annotations) {
      list.push_back({obj.quad, obj.category, obj.difficult});
    }
  }
  return gt;
}

std::vector<DetectionRecord> parse_predictions(std::string_view text) {
  std::vector<DetectionRecord> out;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view raw) {
    const auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') return;
    const auto tok = detail::split_ws(line);
    if (tok.size() != 11) {
      throw ParseError("expected 'image_id x1 y1 x2 y2 x3 y3 x4 y4 category "
                       "score', got " + std::to_string(tok.size()) + " fields",
                       line_no);
    }
    DetectionRecord d;
    d.image_id = std::string(tok[0]);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto x = detail::parse_double(tok[1 + 2 * i]);
      const auto y = detail::parse_double(tok[2 + 2 * i]);
      if (!x || !y || !std::isfinite(*x) || !std::isfinite(*y)) {
        throw ParseError("non-numeric coordinate", line_no);
      }
      d.quad[i] = {*x, *y};
    }
    d.category = std::string(tok[9]);
    const auto score = detail::parse_double(tok[10]);
    if (!score || !std::isfinite(*score) || *score < 0 || *score > 1) {
      throw ParseError("score must be a number in [0, 1]", line_no);
    }
    d.score = *score;
    out.push_back(std::move(d));
  });
  return out;
}

std::string serialize_predictions(std::span<const DetectionRecord> preds) {
  std::string out;
  for (const auto& d : preds) {
    out += d.image_id;
    for (const auto& p : d.quad) {
      out += ' ';
      out += detail::shortest(p.x);
      out += ' ';
      out += detail::shortest(p.y);
    }
    out += ' ';
    out += d.category;
    out += ' ';
    out += detail::shortest(d.score);
    out += '\n';
  }
  return out;
}

std::vector<DetectionRecord> load_predictions(const fs::path& path) {
  auto load_one = [](const fs::path& p) {
    try {
      return parse_predictions(detail::read_text_file(p.string()));
    } catch (const ParseError& e) {
      throw ParseError(p.string() + ": " + e.what(), e.line());
    }
  };
  if (!fs::is_directory(path)) return load_one(path);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<DetectionRecord> out;
  for (const auto& f : files) {
    auto part = load_one(f);
    out.insert(out.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  return out;
}

MatchResult match_detections(std::span<const DetectionRecord> preds,
                             std::span<const GroundTruthRecord> gts,
                             double iou_threshold) {
  return match_with(preds, gts, iou_matrix(preds, gts), iou_threshold);
}

std::string_view to_string(ApMethod method) {
  switch (method) {
    case ApMethod::kAllPoint: return "all_point";
    case ApMethod::kVoc11: return "voc11";
    case ApMethod::kCoco101: return "coco101";
  }
  return "unknown";
}

ApMethod parse_ap_method(std::string_view text) {
  if (text == "all_point" || text == "all-point") return ApMethod::kAllPoint;
  if (text == "voc11" || text == "11-point") return ApMethod::kVoc11;
  if (text == "coco101" || text == "101-point") return ApMethod::kCoco101;
  throw InvalidArgument("unknown AP method '" + std::string(text) + "'");
}

std::optional<double> average_precision(std::span<const bool> ranked_tp,
                                        std::size_t n_gt, ApMethod method) {
  if (n_gt == 0) return std::nullopt;
  const std::size_t n = ranked_tp.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked_tp[i]) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  // Precision envelope: max precision at any equal or higher recall.
  std::vector<double> envelope = precision;
  for (std::size_t i = n; i-- > 1;) {
    envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  }

  switch (method) {
    case ApMethod::kAllPoint: {
      double ap = 0;
      double prev_recall = 0;
      for (std::size_t i = 0; i < n; ++i) {
        ap += (recall[i] - prev_recall) * envelope[i];
        prev_recall = recall[i];
      }
      return ap;
    }
    case ApMethod::kVoc11:
    case ApMethod::kCoco101: {
      const int steps = method == ApMethod::kVoc11 ? 11 : 101;
      double sum = 0;
      std::size_t i = 0;
      for (int k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) / (steps - 1);
        while (i < n && recall[i] < t - 1e-12) ++i;
        if (i < n) sum += envelope[i];
      }
      return sum / steps;
    }
  }
  return std::nullopt;
}

std::vector<double> coco_iou_grid() {
  std::vector<double> grid;
  for (int k = 0; k < 10; ++k) grid.push_back((50 + 5 * k) / 100.0);
  return grid;
}

std::vector<double> parse_iou_grid(std::string_view text) {
  std::vector<double> out;
  auto number = [&](std::string_view s) {
    const auto v = detail::parse_double(detail::trim(s));
    if (!v) throw ParseError("bad IoU grid value '" + std::string(s) + "'");
    return *v;
  };
  if (text.find(':') != std::string_view::npos) {
    const auto a = text.find(':');
    const auto b = text.find(':', a + 1);
    if (b == std::string_view::npos) {
      throw ParseError("IoU grid range must be start:step:stop");
    }
    const double start = number(text.substr(0, a));
    const double step = number(text.substr(a + 1, b - a - 1));
    const double stop = number(text.substr(b + 1));
    if (!(step > 0) || stop < start) throw ParseError("empty IoU grid range");
    const auto count = static_cast<int>(std::floor((stop - start) / step + 1e-9));
    for (int k = 0; k <= count; ++k) {
      // Round to 12 decimals so 0.5 + 9 * 0.05 lands on 0.95.
      out.push_back(std::round((start + k * step) * 1e12) / 1e12);
    }
  } else {
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto end = text.find(',', pos);
      if (end == std::string_view::npos) end = text.size();
      out.push_back(number(text.substr(pos, end - pos)));
      pos = end + 1;
    }
  }
  return out;
}

EvalReport evaluate(std::span<const DetectionRecord> preds,
                    const GroundTruth& gt, const EvalOptions& options) {
  if (options.thresholds.empty()) {
    throw InvalidArgument("evaluate: empty IoU threshold grid");
  }
  for (double t : options.thresholds) {
    if (!(t > 0 && t < 1)) {
      throw InvalidArgument("evaluate: IoU thresholds must lie in (0, 1)");
    }
  }
  std::set<std::string> unknown;
  for (const auto& p : preds) {
    if (!gt.contains(p.image_id)) unknown.insert(p.image_id);
    if (!std::isfinite(p.score)) {
      throw InvalidArgument("evaluate: non-finite score on " + p.image_id);
    }
  }
  if (!unknown.empty()) {
    std::string msg = "predictions reference unknown image ids:";
    std::size_t shown = 0;
    for (const auto& id : unknown) {
      if (shown++ == 10) {
        msg += " ... (" + std::to_string(unknown.size()) + " total)";
        break;
      }
      msg += " " + id;
    }
    throw InvalidArgument(msg);
  }

  // class -> image -> predictions / ground truth
  std::map<std::string, std::map<std::string, ImageClass>> groups;
  for (const auto& [image, objects] : gt) {
    for (const auto& g : objects) groups[g.category][image].gts.push_back(g);
  }
  for (const auto& p : preds) groups[p.category][p.image_id].preds.push_back(p);

  EvalReport report;
  report.thresholds = options.thresholds;
  report.reference_threshold = options.reference_threshold;

  for (auto& [category, images] : groups) {
    std::size_t n_gt = 0, n_pred = 0;
    for (auto& [image, ic] : images) {
      ic.iou = iou_matrix(ic.preds, ic.gts);
      n_pred += ic.preds.size();
      for (const auto& g : ic.gts) n_gt += g.difficult ? 0 : 1;
    }

    for (const auto& [image, ic] : images) {
      const MatchResult m = match_with(ic.preds, ic.gts, ic.iou,
                                       options.reference_threshold);
      report.counts.tp += m.true_positives;
      report.counts.fp += m.false_positives;
      report.counts.fn += m.false_negatives;
    }
    if (n_gt == 0) continue;

    ClassReport cr;
    cr.n_gt = n_gt;
    cr.n_pred = n_pred;
    double recall_sum = 0;
    for (double t : options.thresholds) {
      std::vector<RankedOutcome> ranked;
      std::size_t tp = 0;
      for (const auto& [image, ic] : images) {
        const MatchResult m = match_with(ic.preds, ic.gts, ic.iou, t);
        for (std::size_t k = 0; k < m.order.size(); ++k) {
          if (m.outcomes[k] == MatchOutcome::kIgnored) continue;
          const bool is_tp = m.outcomes[k] == MatchOutcome::kTruePositive;
          ranked.push_back({ic.preds[m.order[k]].score, &image, k, is_tp});
        }
        tp += m.true_positives;
      }
      std::sort(ranked.begin(), ranked.end(),
                [](const RankedOutcome& a, const RankedOutcome& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return std::tie(*a.image_id, a.rank) <
                         std::tie(*b.image_id, b.rank);
                });
      std::unique_ptr<bool[]> flags(new bool[ranked.size()]);
      for (std::size_t i = 0; i < ranked.size(); ++i) flags[i] = ranked[i].tp;
      cr.ap.push_back(*average_precision(
          std::span<const bool>(flags.get(), ranked.size()), n_gt, options.method));
      recall_sum += static_cast<double>(tp) / static_cast<double>(n_gt);
    }
    cr.mean_ap = std::accumulate(cr.ap.begin(), cr.ap.end(), 0.0) /
                 static_cast<double>(cr.ap.size());
    cr.ar = recall_sum / static_cast<double>(options.thresholds.size());
    report.per_class.emplace(category, std::move(cr));
  }

  if (!report.per_class.empty()) {
    double map = 0, ar = 0;
    for (const auto& [c, cr] : report.per_class) {
      map += cr.mean_ap;
      ar += cr.ar;
    }
    report.map = map / static_cast<double>(report.per_class.size());
    report.ar = ar / static_cast<double>(report.per_class.size());
  }
  return report;
}

std::vector<DetectionRecord> suppress_duplicates(
    std::span<const DetectionRecord> preds, double iou_threshold) {
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    groups[{preds[i].image_id, preds[i].category}].push_back(i);
  }
  std::vector<char> keep(preds.size(), 0);
  for (const auto& [key, members] : groups) {
    std::vector<geometry::Quad> quads;
    std::vector<double> scores;
    for (std::size_t i : members) {
      quads.push_back(preds[i].quad);
      scores.push_back(preds[i].score);
    }
    for (std::size_t k : geometry::rotated_nms(quads, scores, iou_threshold)) {
      keep[members[k]] = 1;
    }
  }
  std::vector<DetectionRecord> out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (keep[i]) out.push_back(preds[i]);
  }
  return out;
}

std::string report_to_json(const EvalReport& report, int indent) {
  detail::Json classes = detail::Json::object();
  for (const auto& [c, cr] : report.per_class) {
    classes[c] = {{"ap", cr.ap},
                  {"mean_ap", cr.mean_ap},
                  {"ar", cr.ar},
                  {"n_gt", cr.n_gt},
                  {"n_pred", cr.n_pred}};
  }
  const detail::Json j = {
      {"thresholds", report.thresholds},
      {"map", report.map},
      {"ar", report.ar},
      {"reference_threshold", report.reference_threshold},
      {"counts",
       {{"tp", report.counts.tp}, {"fp", report.counts.fp}, {"fn", report.counts.fn}}},
      {"per_class", classes}};
  return j.dump(indent);
}

EvalReport report_from_json(std::string_view text) {
  EvalReport r;
  try {
    const auto j = detail::Json::parse(text);
    r.thresholds = j.at("thresholds").get<std::vector<double>>();
    r.map = j.at("map").get<double>();
    r.ar = j.at("ar").get<double>();
    r.reference_threshold = j.at("reference_threshold").get<double>();
    const auto& c = j.at("counts");
    r.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                c.at("fn").get<std::size_t>()};
    for (const auto& [name, jc] : j.at("per_class").items()) {
      ClassReport cr;
      cr.ap = jc.at("ap").get<std::vector<double>>();
      cr.mean_ap = jc.at("mean_ap").get<double>();
      cr.ar = jc.at("ar").get<double>();
      cr.n_gt = jc.at("n_gt").get<std::size_t>();
      cr.n_pred = jc.at("n_pred").get<std::size_t>();
      r.per_class.emplace(name, std::move(cr));
    }
  } catch (const detail::Json::exception& e) {
    throw ParseError(std::string("eval report: ") + e.what());
  }
  return r;
}

}  // namespace iqb::eval
