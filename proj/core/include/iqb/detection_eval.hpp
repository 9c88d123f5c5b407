#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iqb/data.hpp"
#include "iqb/geometry.hpp"

namespace iqb::eval {

struct DetectionRecord {
  std::string image_id;
  geometry::Quad quad{};
  std::string category;
  double score = 0.0;
};

struct GroundTruthRecord {
  geometry::Quad quad{};
  std::string category;
  bool difficult = false;
};

// Ground truth keyed by image id. Images with no objects still belong here so
// predictions on them are recognised.
using GroundTruth = std::map<std::string, std::vector<GroundTruthRecord>>;

GroundTruth ground_truth_from(std::span<const data::ImageEntry> entries);

// Parses "image_id x1 y1 x2 y2 x3 y3 x4 y4 category score" lines.
std::vector<DetectionRecord> parse_predictions(std::string_view text);
std::string serialize_predictions(std::span<const DetectionRecord> preds);

// Reads a merged prediction file, or every *.txt file inside a directory.
std::vector<DetectionRecord> load_predictions(const std::filesystem::path& path);

enum class MatchOutcome { kTruePositive, kFalsePositive, kIgnored };

struct MatchResult {
  // Prediction indices in ranked order (score descending, ties by index).
  std::vector<std::size_t> order;
  // Outcome per ranked prediction.
  std::vector<MatchOutcome> outcomes;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;  // unmatched non-difficult ground truth
};

// Greedy matching for one image and one class. A prediction takes the
// candidate ground truth with the highest IoU >= threshold; candidates are
// unmatched regular objects and all difficult objects. Matching a difficult
// object marks the prediction ignored.
MatchResult match_detections(std::span<const DetectionRecord> preds,
                             std::span<const GroundTruthRecord> gts,
                             double iou_threshold);

enum class ApMethod { kAllPoint, kVoc11, kCoco101 };

std::string_view to_string(ApMethod method);
ApMethod parse_ap_method(std::string_view text);

// AP from ranked TP (true) / FP (false) flags. nullopt when n_gt is zero.
std::optional<double> average_precision(std::span<const bool> ranked_tp,
                                        std::size_t n_gt,
                                        ApMethod method = ApMethod::kAllPoint);

// 0.50, 0.55, ..., 0.95
std::vector<double> coco_iou_grid();

// Parses "start:step:stop" or a comma separated list.
std::vector<double> parse_iou_grid(std::string_view text);

struct ClassReport {
  std::vector<double> ap;  // one value per IoU threshold
  double mean_ap = 0.0;
  double ar = 0.0;
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;
};

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct EvalReport {
  std::vector<double> thresholds;
  // Only classes with at least one non-difficult ground truth object.
  std::map<std::string, ClassReport> per_class;
  double map = 0.0;
  double ar = 0.0;
  double reference_threshold = 0.5;
  Counts counts;  // summed over classes at reference_threshold
};

struct EvalOptions {
  std::vector<double> thresholds = coco_iou_grid();
  ApMethod method = ApMethod::kAllPoint;
  double reference_threshold = 0.5;
};

// Throws InvalidArgument listing predictions whose image id is not in `gt`.
EvalReport evaluate(std::span<const DetectionRecord> preds,
                    const GroundTruth& gt, const EvalOptions& options = {});

// Per image and class rotated NMS over predictions.
std::vector<DetectionRecord> suppress_duplicates(
    std::span<const DetectionRecord> preds, double iou_threshold);

std::string report_to_json(const EvalReport& report, int indent = 2);
EvalReport report_from_json(std::string_view text);

}  // namespace iqb::eval
