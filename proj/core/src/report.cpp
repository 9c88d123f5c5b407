#include "iqb/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "iqb/error.hpp"
#include "text_util.hpp"

namespace iqb::report {
namespace {

using experiment::RunRecord;
using experiment::RunStatus;

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Splits one CSV record starting at `pos`; advances pos past its newline.
std::vector<std::string> csv_record(std::string_view text, std::size_t& pos) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  while (pos < text.size()) {
    const char c = text[pos++];
    if (quoted) {
      if (c == '"') {
        if (pos < text.size() && text[pos] == '"') {
          fields.back() += '"';
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field");
  return fields;
}

}  // namespace

std::vector<RatePoint> rate_points(std::span<const RunRecord> runs) {
  std::vector<RatePoint> out;
  for (const auto& r : runs) {
    if (r.status != RunStatus::kOk) continue;
    const auto map = r.metrics.find("mAP");
    const auto ar = r.metrics.find("AR");
    if (map == r.metrics.end() || ar == r.metrics.end()) continue;
    out.push_back({r.avg_size_mb, map->second, ar->second, r.provider, r.dataset_variant});
  }
  return out;
}

Summary summarize(std::span<const RunRecord> runs) {
  Summary s;
  std::vector<std::string> providers;
  std::map<std::string, std::vector<SummaryRow>> groups;
  for (const auto& r : runs) {
    if (r.status != RunStatus::kOk) {
      ++s.omitted_failed;
      continue;
    }
    if (!groups.contains(r.provider)) providers.push_back(r.provider);
    auto metric = [&](const char* k) {
      const auto it = r.metrics.find(k);
      return it == r.metrics.end() ? std::nan("") : it->second;
    };
    groups[r.provider].push_back(
        {r.provider, r.dataset_variant, metric("AR"), metric("mAP"), r.avg_size_mb});
  }
  if (providers.empty()) throw InvalidArgument("no successful runs to summarize");
  for (const auto& p : providers) {
    auto& rows = groups[p];
    std::stable_sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
      return a.size_mb > b.size_mb;
    });
    s.rows.insert(s.rows.end(), rows.begin(), rows.end());
  }
  return s;
}

std::string render_summary(const Summary& summary) {
  std::size_t pw = 8, mw = 8;
  for (const auto& r : summary.rows) {
    pw = std::max(pw, r.provider.size());
    mw = std::max(mw, r.modifier.size());
  }
  std::string out = fmt::format("{:<{}}  {:<{}}  {:>6}  {:>6}  {:>9}\n", "provider", pw,
                                "modifier", mw, "AR", "mAP", "size (MB)");
  for (const auto& r : summary.rows) {
    out += fmt::format("{:<{}}  {:<{}}  {:>6.3f}  {:>6.3f}  {:>9.3f}\n", r.provider, pw,
                       r.modifier, mw, r.ar, r.map, r.size_mb);
  }
  if (summary.omitted_failed > 0) {
    out += fmt::format("({} failed run{} omitted)\n", summary.omitted_failed,
                       summary.omitted_failed == 1 ? "" : "s");
  }
  return out;
}

RatePoint optimal_point(std::span<const RatePoint> points, double epsilon) {
  if (points.empty()) throw InvalidArgument("optimal_point: no rate points");
  if (!(epsilon >= 0 && epsilon < 1)) {
    throw InvalidArgument("optimal_point: epsilon must lie in [0, 1)");
  }
  double best = -HUGE_VAL;
  for (const auto& p : points) best = std::max(best, p.map);
  // Tables carry 3 decimals, so 0.692 - 0.007 must admit 0.685.
  constexpr double kTol = 1e-9;
  const RatePoint* chosen = nullptr;
  for (const auto& p : points) {
    if (p.map < best - epsilon - kTol) continue;
    if (!chosen || p.avg_size_mb < chosen->avg_size_mb ||
        (p.avg_size_mb == chosen->avg_size_mb && p.map > chosen->map)) {
      chosen = &p;
    }
  }
  return *chosen;
}

std::string emit_scatter(std::span<const RunRecord> runs) {
  const auto points = rate_points(runs);
  if (points.empty()) throw InvalidArgument("no successful runs with mAP/AR metrics");
  std::string out(kScatterHeader);
  out += '\n';
  for (const auto& p : points) {
    out += csv_field(p.provider) + ',' + csv_field(p.modifier) + ',' +
           format_shortest(p.avg_size_mb) + ',' + format_shortest(p.map) + ',' +
           format_shortest(p.ar) + '\n';
  }
  return out;
}

std::vector<RatePoint> parse_scatter(std::string_view csv) {
  std::size_t pos = 0;
  const auto header = csv_record(csv, pos);
  std::string joined;
  for (std::size_t i = 0; i < header.size(); ++i) joined += (i ? "," : "") + header[i];
  if (joined != kScatterHeader) {
    throw ParseError("scatter CSV header must be '" + std::string(kScatterHeader) + "'", 1);
  }
  std::vector<RatePoint> out;
  std::size_t line = 1;
  while (pos < csv.size()) {
    ++line;
    const auto f = csv_record(csv, pos);
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != 5) throw ParseError("expected 5 fields", line);
    auto num = [&](const std::string& s) {
      const auto v = detail::parse_double(s);
      if (!v) throw ParseError("bad number '" + s + "'", line);
      return *v;
    };
    out.push_back({num(f[2]), num(f[3]), num(f[4]), f[0], f[1]});
  }
  return out;
}

std::string format_shortest(double value) { return detail::shortest(value); }

}  // namespace iqb::report
