#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace iqb::geometry {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

// Rotated rectangle. Canonical form: w >= h and angle in [-pi/2, pi/2).
struct OrientedBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  double angle = 0.0;  // radians, rotation of the w-axis from +x
};

// Four vertices. Annotation quads keep the order they were written in;
// normalize() yields counter-clockwise (positive signed area) order.
using Quad = std::array<Point, 4>;

// Polygon with a small fixed capacity. Clipping two convex quads yields at
// most 8 vertices; non-convex subjects can produce a few more.
class Polygon {
 public:
  static constexpr std::size_t kCapacity = 32;

  Polygon() = default;
  explicit Polygon(std::span<const Point> points);
  explicit Polygon(const Quad& quad) : Polygon(std::span<const Point>(quad)) {}

  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }
  const Point& operator[](std::size_t i) const { return points_[i]; }
  Point& operator[](std::size_t i) { return points_[i]; }
  void push_back(const Point& p);
  void clear() noexcept { size_ = 0; }

  const Point* begin() const noexcept { return points_.data(); }
  const Point* end() const noexcept { return points_.data() + size_; }

 private:
  std::array<Point, kCapacity> points_{};
  std::size_t size_ = 0;
};

// Brings a box to canonical form; the described point set is unchanged.
OrientedBox canonicalize(OrientedBox box);

// Corners of the rectangle in counter-clockwise order, starting from the
// (-w/2, -h/2) corner in the box frame.
Quad to_corners(const OrientedBox& box);

// Minimum-area enclosing rectangle of the quad's convex hull, canonical.
// Exact inverse of to_corners() for rectangles.
OrientedBox from_corners(const Quad& quad);

double signed_area(std::span<const Point> poly);
double polygon_area(std::span<const Point> poly);
inline double polygon_area(const Polygon& poly) {
  return polygon_area(std::span<const Point>(poly.begin(), poly.size()));
}
inline double polygon_area(const Quad& quad) {
  return polygon_area(std::span<const Point>(quad));
}

// Counter-clockwise copy of a simple polygon.
Quad normalize(const Quad& quad);

bool is_convex(const Quad& quad);

// Convex hull, counter-clockwise. Handles bow-tie and non-convex quads.
Polygon convex_hull(std::span<const Point> points);

// Clips `subject` against each edge of the convex polygon `clip`
// (Sutherland-Hodgman). The subject may be non-convex; the result is
// counter-clockwise and empty when the two do not overlap.
Polygon clip_polygon(const Polygon& subject, const Polygon& clip);

// Intersection of two convex quads, counter-clockwise, at most 8 vertices.
Polygon convex_intersection(const Quad& p, const Quad& q);

// Intersection over union of two boxes. Uses interval arithmetic when both
// boxes are axis aligned.
double obb_iou(const OrientedBox& a, const OrientedBox& b);

// IoU of two free quadrilaterals (convex hull of each is used).
double quad_iou(const Quad& a, const Quad& b);

struct ScoredBox {
  OrientedBox box;
  double score = 0.0;
};

// Greedy rotated NMS. Returns kept input indices in decreasing score order;
// equal scores keep input order.
std::vector<std::size_t> rotated_nms(std::span<const ScoredBox> dets,
                                     double iou_threshold);

// Same for free quads.
std::vector<std::size_t> rotated_nms(std::span<const Quad> quads,
                                     std::span<const double> scores,
                                     double iou_threshold);

}  // namespace iqb::geometry
