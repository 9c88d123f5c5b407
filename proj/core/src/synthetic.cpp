#include "iqb/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "iqb/error.hpp"
#include "iqb/image_io.hpp"

namespace iqb::synthetic {
namespace {

namespace fs = std::filesystem;
using geometry::Point;
using geometry::Quad;

constexpr std::array<const char*, 3> kCategories = {"ship", "plane", "vehicle"};

struct Rgb {
  double r, g, b;
};

// Value noise on an integer lattice with smoothstep interpolation.
class ValueNoise {
 public:
  ValueNoise(std::mt19937_64& rng, int cells) : cells_(cells) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    lattice_.resize(static_cast<std::size_t>((cells + 1) * (cells + 1)));
    for (auto& v : lattice_) v = u(rng);
  }

  // u, v in [0, 1]
  double operator()(double u, double v) const {
    const double x = u * cells_, y = v * cells_;
    const int x0 = std::clamp(static_cast<int>(x), 0, cells_ - 1);
    const int y0 = std::clamp(static_cast<int>(y), 0, cells_ - 1);
    const double fx = smooth(x - x0), fy = smooth(y - y0);
    const double a = at(x0, y0), b = at(x0 + 1, y0);
    const double c = at(x0, y0 + 1), d = at(x0 + 1, y0 + 1);
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  double at(int x, int y) const {
    return lattice_[static_cast<std::size_t>(y * (cells_ + 1) + x)];
  }

  int cells_;
  std::vector<double> lattice_;
};

bool inside(const Quad& q, double x, double y) {
  // Works for either winding.
  int sign = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point& a = q[i];
    const Point& b = q[(i + 1) % 4];
    const double cross = (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
    const int s = cross > 0 ? 1 : (cross < 0 ? -1 : 0);
    if (s == 0) continue;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Scene make_scene(std::uint64_t seed, const SceneOptions& o) {
  if (o.width < 16 || o.height < 16) throw InvalidArgument("scene must be at least 16x16");
  if (o.channels != 1 && o.channels != 3) throw InvalidArgument("scene channels must be 1 or 3");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // Terrain: a few octaves of value noise, earthy low-saturation palette.
  ValueNoise coarse(rng, 4), mid(rng, 12), fine(rng, 40);
  const Rgb ground{118 + 20 * u01(rng), 112 + 15 * u01(rng), 96 + 15 * u01(rng)};
  std::vector<Rgb> canvas(static_cast<std::size_t>(o.width) * static_cast<std::size_t>(o.height));
  for (int y = 0; y < o.height; ++y) {
    for (int x = 0; x < o.width; ++x) {
      const double su = (x + 0.5) / o.width, sv = (y + 0.5) / o.height;
      const double t = 28 * coarse(su, sv) + 12 * mid(su, sv) + 5 * fine(su, sv);
      const double veg = 10 * coarse(sv, su);
      canvas[static_cast<std::size_t>(y * o.width + x)] = {ground.r + t - veg, ground.g + t,
                                                           ground.b + t - 0.5 * veg};
    }
  }

  // Roads: straight bands with soft edges.
  const int roads = 1 + static_cast<int>(u01(rng) * 2);
  for (int k = 0; k < roads; ++k) {
    const double ang = u01(rng) * std::numbers::pi;
    const double nx = std::cos(ang), ny = std::sin(ang);
    const double off = (u01(rng) - 0.5) * 0.6 * std::min(o.width, o.height);
    const double half = 2.5 + 3 * u01(rng);
    const double cx = o.width / 2.0, cy = o.height / 2.0;
    for (int y = 0; y < o.height; ++y) {
      for (int x = 0; x < o.width; ++x) {
        const double d = std::abs((x + 0.5 - cx) * nx + (y + 0.5 - cy) * ny - off);
        const double a = std::clamp(half + 0.5 - d, 0.0, 1.0);
        if (a <= 0) continue;
        auto& px = canvas[static_cast<std::size_t>(y * o.width + x)];
        px = {px.r * (1 - a) + 150 * a, px.g * (1 - a) + 148 * a, px.b * (1 - a) + 144 * a};
      }
    }
  }

  // Buildings: axis-aligned flat roofs with exact area coverage, giving the
  // long straight edges that edge-response measurement relies on.
  const int buildings = 1 + static_cast<int>(u01(rng) * 2);
  for (int k = 0; k < buildings; ++k) {
    const double bw = 40 + u01(rng) * 30, bh = 40 + u01(rng) * 30;
    const double bx = 8 + u01(rng) * std::max(1.0, o.width - bw - 16);
    const double by = 8 + u01(rng) * std::max(1.0, o.height - bh - 16);
    const double roof = 175 + 35 * u01(rng);
    auto overlap = [](double lo, double hi, int p) {
      return std::clamp(std::min(hi, p + 1.0) - std::max(lo, static_cast<double>(p)), 0.0, 1.0);
    };
    for (int y = std::max(0, static_cast<int>(by)); y < std::min(o.height, static_cast<int>(by + bh) + 1); ++y) {
      const double cy = overlap(by, by + bh, y);
      for (int x = std::max(0, static_cast<int>(bx)); x < std::min(o.width, static_cast<int>(bx + bw) + 1); ++x) {
        const double a = cy * overlap(bx, bx + bw, x);
        if (a <= 0) continue;
        auto& px = canvas[static_cast<std::size_t>(y * o.width + x)];
        px = {px.r * (1 - a) + roof * a, px.g * (1 - a) + roof * a, px.b * (1 - a) + (roof - 6) * a};
      }
    }
  }

  // Objects: rotated rectangles, 4x4 supersampled coverage.
  Scene scene;
  const double margin = 24;
  for (int k = 0; k < o.object_count; ++k) {
    geometry::OrientedBox box;
    box.cx = margin + u01(rng) * (o.width - 2 * margin);
    box.cy = margin + u01(rng) * (o.height - 2 * margin);
    box.w = 10 + u01(rng) * 26;
    box.h = 6 + u01(rng) * 12;
    box.angle = (u01(rng) - 0.5) * std::numbers::pi;
    const std::size_t cat = static_cast<std::size_t>(u01(rng) * kCategories.size()) % kCategories.size();
    const double tone = u01(rng) < 0.5 ? 60 + 30 * u01(rng) : 190 + 40 * u01(rng);
    const Rgb color{tone + 8 * (u01(rng) - 0.5), tone + 8 * (u01(rng) - 0.5),
                    tone + 8 * (u01(rng) - 0.5)};
    const Quad q = geometry::to_corners(box);
    double x_lo = 1e9, x_hi = -1e9, y_lo = 1e9, y_hi = -1e9;
    for (const auto& p : q) {
      x_lo = std::min(x_lo, p.x);
      x_hi = std::max(x_hi, p.x);
      y_lo = std::min(y_lo, p.y);
      y_hi = std::max(y_hi, p.y);
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(x_lo)));
    const int x1 = std::min(o.width - 1, static_cast<int>(std::ceil(x_hi)));
    const int y0 = std::max(0, static_cast<int>(std::floor(y_lo)));
    const int y1 = std::min(o.height - 1, static_cast<int>(std::ceil(y_hi)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < 4; ++sy) {
          for (int sx = 0; sx < 4; ++sx) {
            hits += inside(q, x + (sx + 0.5) / 4, y + (sy + 0.5) / 4) ? 1 : 0;
          }
        }
        if (hits == 0) continue;
        const double a = hits / 16.0;
        auto& px = canvas[static_cast<std::size_t>(y * o.width + x)];
        px = {px.r * (1 - a) + color.r * a, px.g * (1 - a) + color.g * a,
              px.b * (1 - a) + color.b * a};
      }
    }
    scene.objects.push_back({q, kCategories[cat], box.w * box.h < 90});
  }

  std::normal_distribution<double> noise(0.0, o.noise_sigma);
  scene.image = Image8(o.width, o.height, o.channels);
  for (int y = 0; y < o.height; ++y) {
    for (int x = 0; x < o.width; ++x) {
      const Rgb& px = canvas[static_cast<std::size_t>(y * o.width + x)];
      if (o.channels == 1) {
        scene.image.at(x, y) = to_byte(0.299 * px.r + 0.587 * px.g + 0.114 * px.b + noise(rng));
      } else {
        const double n = noise(rng);
        scene.image.at(x, y, 0) = to_byte(px.r + n);
        scene.image.at(x, y, 1) = to_byte(px.g + n);
        scene.image.at(x, y, 2) = to_byte(px.b + n);
      }
    }
  }
  return scene;
}

GrayImage blurred_edge(int width, int height, double edge_x, double sigma, double low,
                       double high, bool vertical) {
  if (!(sigma > 0)) throw InvalidArgument("blurred_edge: sigma must be positive");
  GrayImage img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double t = (vertical ? x : y) + 0.5 - edge_x;
      img.at(x, y) = low + (high - low) * 0.5 * (1 + std::erf(t / (sigma * std::numbers::sqrt2)));
    }
  }
  return img;
}

GrayImage flat_noise(int width, int height, double mean, double sigma, std::uint64_t seed) {
  GrayImage img(width, height, mean);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) img.at(x, y) = mean + n(rng);
  }
  return img;
}

data::Dataset write_corpus(const fs::path& root, const CorpusOptions& options) {
  if (options.images_per_partition < 1) {
    throw InvalidArgument("write_corpus: images_per_partition must be positive");
  }
  data::Dataset ds;
  ds.name = options.name;
  for (std::size_t p = 0; p < options.partitions.size(); ++p) {
    const std::string& part = options.partitions[p];
    data::Partition entries;
    for (int i = 0; i < options.images_per_partition; ++i) {
      const Scene scene = make_scene(mix(mix(options.seed, p), static_cast<std::uint64_t>(i)),
                                     options.scene);
      data::ImageEntry e;
      e.id = fmt::format("{}_{:04d}", part, i);
      e.path = root / part / "images" / (e.id + ".png");
      e.annotation_path = root / part / "labelTxt" / (e.id + ".txt");
      e.width = scene.image.width();
      e.height = scene.image.height();
      e.annotations = scene.objects;
      save_png(e.path, scene.image);
      const std::string labels = data::serialize_obb_annotations(e.annotations);
      write_file_bytes(e.annotation_path,
                       std::span(reinterpret_cast<const std::uint8_t*>(labels.data()), labels.size()));
      e.byte_size = fs::file_size(e.path);
      entries.push_back(std::move(e));
    }
    ds.partitions[part] = std::move(entries);
  }
  ds.validate();
  data::save_manifest(ds, root / "manifest.json");
  return ds;
}

}  // namespace iqb::synthetic
