#include "iqb/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "iqb/error.hpp"

namespace iqb::geometry {
namespace {

constexpr double kPi = std::numbers::pi;
// Inside-test tolerance of the clipper, in pixels.
constexpr double kClipEpsilon = 1e-9;

Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }

// Wraps into [lo, lo + period).
double wrap(double angle, double lo, double period) {
  double a = std::fmod(angle - lo, period);
  if (a < 0) a += period;
  // fmod can round up to exactly `period`.
  if (a >= period) a -= period;
  return a + lo;
}

Polygon dedupe(const Polygon& poly) {
  Polygon out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& p = poly[i];
    if (!out.empty()) {
      const Point d = p - out[out.size() - 1];
      if (std::abs(d.x) < 1e-12 && std::abs(d.y) < 1e-12) continue;
    }
    out.push_back(p);
  }
  while (out.size() > 1) {
    const Point d = out[0] - out[out.size() - 1];
    if (std::abs(d.x) >= 1e-12 || std::abs(d.y) >= 1e-12) break;
    Polygon trimmed;
    for (std::size_t i = 0; i + 1 < out.size(); ++i) trimmed.push_back(out[i]);
    out = trimmed;
  }
  if (out.size() < 3) out.clear();
  return out;
}

bool axis_aligned(const OrientedBox& b) { return b.angle == 0.0; }

double interval_iou(const OrientedBox& a, const OrientedBox& b) {
  const double ix = std::min(a.cx + a.w / 2, b.cx + b.w / 2) -
                    std::max(a.cx - a.w / 2, b.cx - b.w / 2);
  const double iy = std::min(a.cy + a.h / 2, b.cy + b.h / 2) -
                    std::max(a.cy - a.h / 2, b.cy - b.h / 2);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double iou_from_areas(double inter, double area_a, double area_b) {
  const double uni = area_a + area_b - inter;
  if (uni <= 0 || inter <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace

Polygon::Polygon(std::span<const Point> points) {
  for (const Point& p : points) push_back(p);
}

void Polygon::push_back(const Point& p) {
  if (size_ == kCapacity) throw Error("Polygon capacity exceeded");
  points_[size_++] = p;
}

OrientedBox canonicalize(OrientedBox box) {
  if (box.w < box.h) {
    std::swap(box.w, box.h);
    box.angle += kPi / 2;
  }
  if (box.w == box.h) {
    box.angle = wrap(box.angle, -kPi / 4, kPi / 2);
  } else {
    box.angle = wrap(box.angle, -kPi / 2, kPi);
  }
  return box;
}

Quad to_corners(const OrientedBox& box) {
  const double c = std::cos(box.angle);
  const double s = std::sin(box.angle);
  const double hw = box.w / 2;
  const double hh = box.h / 2;
  const std::array<Point, 4> local = {
      Point{-hw, -hh}, Point{hw, -hh}, Point{hw, hh}, Point{-hw, hh}};
  Quad out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {box.cx + local[i].x * c - local[i].y * s,
              box.cy + local[i].x * s + local[i].y * c};
  }
  return out;
}

OrientedBox from_corners(const Quad& quad) {
  const Polygon hull = convex_hull(quad);
  OrientedBox best;
  double best_area = -1.0;
  const std::size_t n = hull.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point e = hull[(i + 1) % n] - hull[i];
    const double len = std::hypot(e.x, e.y);
    if (len == 0) continue;
    const Point u{e.x / len, e.y / len};
    const Point v{-u.y, u.x};
    double umin = INFINITY, umax = -INFINITY, vmin = INFINITY, vmax = -INFINITY;
    for (const Point& p : hull) {
      const double pu = p.x * u.x + p.y * u.y;
      const double pv = p.x * v.x + p.y * v.y;
      umin = std::min(umin, pu);
      umax = std::max(umax, pu);
      vmin = std::min(vmin, pv);
      vmax = std::max(vmax, pv);
    }
    const double area = (umax - umin) * (vmax - vmin);
    if (best_area < 0 || area < best_area) {
      best_area = area;
      const double um = (umin + umax) / 2;
      const double vm = (vmin + vmax) / 2;
      best = {um * u.x + vm * v.x, um * u.y + vm * v.y, umax - umin,
              vmax - vmin, std::atan2(u.y, u.x)};
    }
  }
  if (best_area < 0) {
    // All vertices coincide.
    return {quad[0].x, quad[0].y, 0.0, 0.0, 0.0};
  }
  return canonicalize(best);
}

double signed_area(std::span<const Point> poly) {
  const std::size_t n = poly.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return twice / 2;
}

double polygon_area(std::span<const Point> poly) {
  return std::abs(signed_area(poly));
}

Quad normalize(const Quad& quad) {
  if (signed_area(quad) >= 0) return quad;
  return {quad[0], quad[3], quad[2], quad[1]};
}

bool is_convex(const Quad& quad) {
  bool pos = false;
  bool neg = false;
  for (std::size_t i = 0; i < 4; ++i) {
    const double z = cross(quad[(i + 1) % 4] - quad[i],
                           quad[(i + 2) % 4] - quad[(i + 1) % 4]);
    if (z > 0) pos = true;
    if (z < 0) neg = true;
  }
  return !(pos && neg) && signed_area(quad) != 0.0;
}

Polygon convex_hull(std::span<const Point> points) {
  Polygon out;
  if (points.empty()) return out;
  std::array<Point, Polygon::kCapacity> pts{};
  const std::size_t n = std::min(points.size(), pts.size());
  std::copy_n(points.begin(), n, pts.begin());
  std::sort(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(n),
            [](const Point& a, const Point& b) {
              return a.x < b.x || (a.x == b.x && a.y < b.y);
            });
  std::array<Point, 2 * Polygon::kCapacity> hull{};
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  // The last point repeats the first.
  for (std::size_t i = 0; i + 1 < k; ++i) out.push_back(hull[i]);
  if (out.empty()) out.push_back(pts[0]);
  return out;
}

Polygon clip_polygon(const Polygon& subject, const Polygon& clip) {
  Polygon current = subject;
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !current.empty(); ++e) {
    const Point a = clip[e];
    const Point edge = clip[(e + 1) % m] - a;
    const double len = std::hypot(edge.x, edge.y);
    if (len == 0) continue;
    auto distance = [&](const Point& p) { return cross(edge, p - a) / len; };

    Polygon next;
    const std::size_t n = current.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point& cur = current[i];
      const Point& prev = current[(i + n - 1) % n];
      const double dc = distance(cur);
      const double dp = distance(prev);
      const bool cur_in = dc >= -kClipEpsilon;
      const bool prev_in = dp >= -kClipEpsilon;
      if (cur_in != prev_in) {
        const double t = dp / (dp - dc);
        next.push_back({prev.x + t * (cur.x - prev.x),
                        prev.y + t * (cur.y - prev.y)});
      }
      if (cur_in) next.push_back(cur);
    }
    current = next;
  }
  return dedupe(current);
}

Polygon convex_intersection(const Quad& p, const Quad& q) {
  return clip_polygon(Polygon(normalize(p)), Polygon(normalize(q)));
}

double obb_iou(const OrientedBox& a, const OrientedBox& b) {
  if (axis_aligned(a) && axis_aligned(b)) return interval_iou(a, b);
  const Polygon inter = convex_intersection(to_corners(a), to_corners(b));
  return iou_from_areas(polygon_area(inter), a.w * a.h, b.w * b.h);
}

double quad_iou(const Quad& a, const Quad& b) {
  const Polygon ha = convex_hull(a);
  const Polygon hb = convex_hull(b);
  if (ha.size() < 3 || hb.size() < 3) return 0.0;
  const Polygon inter = clip_polygon(ha, hb);
  return iou_from_areas(polygon_area(inter), polygon_area(ha),
                        polygon_area(hb));
}

namespace {

template <typename IouFn>
std::vector<std::size_t> greedy_nms(std::span<const double> scores,
                                    double iou_threshold, IouFn iou) {
  if (iou_threshold < 0.0 || iou_threshold > 1.0) {
    throw InvalidArgument("rotated_nms: iou_threshold must be in [0, 1]");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) {
                     return scores[i] > scores[j];
                   });
  std::vector<char> suppressed(scores.size(), 0);
  std::vector<std::size_t> keep;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(i, j) >= iou_threshold) suppressed[j] = 1;
    }
  }
  return keep;
}

}  // namespace

std::vector<std::size_t> rotated_nms(std::span<const ScoredBox> dets,
                                     double iou_threshold) {
  std::vector<double> scores;
  scores.reserve(dets.size());
  for (const auto& d : dets) scores.push_back(d.score);
  return greedy_nms(scores, iou_threshold, [&](std::size_t i, std::size_t j) {
    return obb_iou(dets[i].box, dets[j].box);
  });
}

std::vector<std::size_t> rotated_nms(std::span<const Quad> quads,
                                     std::span<const double> scores,
                                     double iou_threshold) {
  if (quads.size() != scores.size()) {
    throw InvalidArgument("rotated_nms: quads and scores differ in length");
  }
  return greedy_nms(scores, iou_threshold, [&](std::size_t i, std::size_t j) {
    return quad_iou(quads[i], quads[j]);
  });
}

}  // namespace iqb::geometry
