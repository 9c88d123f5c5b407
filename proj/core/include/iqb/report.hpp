#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iqb/run_store.hpp"

namespace iqb::report {

struct RatePoint {
  double avg_size_mb = 0.0;
  double map = 0.0;
  double ar = 0.0;
  std::string provider;
  std::string modifier;

  friend bool operator==(const RatePoint&, const RatePoint&) = default;
};

// Ok runs with mAP and AR metrics, as rate points.
std::vector<RatePoint> rate_points(std::span<const experiment::RunRecord> runs);

struct SummaryRow {
  std::string provider;
  std::string modifier;
  double ar = 0.0;
  double map = 0.0;
  double size_mb = 0.0;
};

struct Summary {
  // Grouped by provider (first-seen order), descending size within a group.
  std::vector<SummaryRow> rows;
  std::size_t omitted_failed = 0;
};

// Throws InvalidArgument when no run is ok.
Summary summarize(std::span<const experiment::RunRecord> runs);
std::string render_summary(const Summary& summary);

// Smallest-size point whose mAP is within `epsilon` of the best mAP; equal
// sizes prefer the higher mAP. Throws InvalidArgument on empty input or an
// epsilon outside [0, 1).
RatePoint optimal_point(std::span<const RatePoint> points, double epsilon);

inline constexpr std::string_view kScatterHeader =
    "provider,modifier,avg_size_mb,map,ar";

std::string emit_scatter(std::span<const experiment::RunRecord> runs);
std::vector<RatePoint> parse_scatter(std::string_view csv);

// Shortest decimal text that parses back to the same double.
std::string format_shortest(double value);

}  // namespace iqb::report
