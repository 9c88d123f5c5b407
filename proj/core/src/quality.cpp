#include "iqb/quality.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "iqb/error.hpp"

namespace iqb::quality {
namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

void require_metric_size(const GrayImage& image, const char* what) {
  if (image.width() < kMinMetricSize || image.height() < kMinMetricSize) {
    throw InvalidArgument(std::string(what) + ": image must be at least " +
                          std::to_string(kMinMetricSize) + "x" +
                          std::to_string(kMinMetricSize));
  }
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return (lo + hi) / 2;
}

struct Sample {
  double d;  // signed distance along the edge normal
  double value;
};

double phi(double z) { return 0.5 * (1.0 + std::erf(z / kSqrt2)); }

// lo + (hi - lo) * Phi((d - x0) / exp(log_sigma))
struct EsfModel {
  double lo = 0, hi = 1, x0 = 0, log_sigma = 0;

  double sigma() const { return std::exp(log_sigma); }
  double operator()(double d) const {
    return lo + (hi - lo) * phi((d - x0) / sigma());
  }
};

// Solves the 4x4 system a * x = b by Gaussian elimination with partial
// pivoting. Returns false when singular.
bool solve4(std::array<std::array<double, 4>, 4> a, std::array<double, 4> b,
            std::array<double, 4>& x) {
  for (int c = 0; c < 4; ++c) {
    int piv = c;
    for (int r = c + 1; r < 4; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    if (std::abs(a[piv][c]) < 1e-300) return false;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (int r = c + 1; r < 4; ++r) {
      const double f = a[r][c] / a[c][c];
      for (int k = c; k < 4; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  for (int r = 3; r >= 0; --r) {
    double s = b[r];
    for (int k = r + 1; k < 4; ++k) s -= a[r][k] * x[k];
    x[r] = s / a[r][r];
  }
  return true;
}

double sum_sq(const std::vector<Sample>& samples, const EsfModel& m) {
  double s = 0;
  for (const auto& p : samples) {
    const double r = p.value - m(p.d);
    s += r * r;
  }
  return s;
}

// Levenberg-Marquardt fit of the erf edge profile.
EsfModel fit_esf(const std::vector<Sample>& samples, EsfModel model) {
  double lambda = 1e-3;
  double cost = sum_sq(samples, model);
  for (int iter = 0; iter < 200; ++iter) {
    std::array<std::array<double, 4>, 4> jtj{};
    std::array<double, 4> jtr{};
    const double sigma = model.sigma();
    for (const auto& p : samples) {
      const double z = (p.d - model.x0) / sigma;
      const double f = phi(z);
      const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi);
      const double amp = model.hi - model.lo;
      const std::array<double, 4> j = {1.0 - f, f, -amp * pdf / sigma,
                                       -amp * pdf * z};
      const double r = p.value - (model.lo + amp * f);
      for (int a = 0; a < 4; ++a) {
        jtr[a] += j[a] * r;
        for (int b = 0; b < 4; ++b) jtj[a][b] += j[a] * j[b];
      }
    }
    bool improved = false;
    for (int attempt = 0; attempt < 20 && !improved; ++attempt) {
      auto damped = jtj;
      for (int a = 0; a < 4; ++a) damped[a][a] += lambda * jtj[a][a];
      std::array<double, 4> step{};
      if (!solve4(damped, jtr, step)) {
        lambda *= 10;
        continue;
      }
      EsfModel trial = model;
      trial.lo += step[0];
      trial.hi += step[1];
      trial.x0 += step[2];
      trial.log_sigma += std::clamp(step[3], -1.0, 1.0);
      const double trial_cost = sum_sq(samples, trial);
      if (trial_cost <= cost) {
        const bool converged =
            cost - trial_cost <= 1e-15 * (cost + 1e-300) ||
            std::abs(step[3]) < 1e-13;
        model = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10, 1e-12);
        improved = true;
        if (converged) return model;
      } else {
        lambda *= 10;
      }
    }
    if (!improved) break;
  }
  return model;
}

struct Gradient {
  GrayImage gx, gy, mag;
};

Gradient sobel(const GrayImage& img) {
  const int w = img.width(), h = img.height();
  Gradient g{GrayImage(w, h), GrayImage(w, h), GrayImage(w, h)};
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const double gx = (img.at(x + 1, y - 1) + 2 * img.at(x + 1, y) +
                         img.at(x + 1, y + 1)) -
                        (img.at(x - 1, y - 1) + 2 * img.at(x - 1, y) +
                         img.at(x - 1, y + 1));
      const double gy = (img.at(x - 1, y + 1) + 2 * img.at(x, y + 1) +
                         img.at(x + 1, y + 1)) -
                        (img.at(x - 1, y - 1) + 2 * img.at(x, y - 1) +
                         img.at(x + 1, y - 1));
      g.gx.at(x, y) = gx;
      g.gy.at(x, y) = gy;
      g.mag.at(x, y) = std::hypot(gx, gy);
    }
  }
  return g;
}

struct Pixel {
  int x, y;
};

std::optional<EdgeMeasurement> measure_edge(const GrayImage& img,
                                            const Gradient& g,
                                            const std::vector<Pixel>& pixels,
                                            bool x_axis,
                                            const RerOptions& opt) {
  // Mean unit normal.
  double nx = 0, ny = 0;
  for (const auto& p : pixels) {
    const double m = g.mag.at(p.x, p.y);
    nx += g.gx.at(p.x, p.y) / m;
    ny += g.gy.at(p.x, p.y) / m;
  }
  const double nlen = std::hypot(nx, ny);
  if (nlen == 0) return std::nullopt;
  nx /= nlen;
  ny /= nlen;
  // Median angular deviation of the pixel normals; sensor noise jitters
  // individual Sobel directions by a few degrees.
  std::vector<double> deviation;
  deviation.reserve(pixels.size());
  for (const auto& p : pixels) {
    const double m = g.mag.at(p.x, p.y);
    const double c = (g.gx.at(p.x, p.y) * nx + g.gy.at(p.x, p.y) * ny) / m;
    deviation.push_back(std::acos(std::clamp(c, -1.0, 1.0)));
  }
  if (median_of(deviation) > opt.max_orientation_deviation_deg * std::numbers::pi / 180) {
    return std::nullopt;
  }
  const double tx = -ny, ty = nx;

  double cx = 0, cy = 0;
  for (const auto& p : pixels) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pixels.size());
  cy /= static_cast<double>(pixels.size());

  // Straightness: principal axis of the pixel chain against the tangent.
  double sxx = 0, sxy = 0, syy = 0, smin = INFINITY, smax = -INFINITY;
  for (const auto& p : pixels) {
    const double dx = p.x - cx, dy = p.y - cy;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
    const double s = dx * tx + dy * ty;
    smin = std::min(smin, s);
    smax = std::max(smax, s);
  }
  const double length = smax - smin + 1;
  if (length < opt.min_edge_length) return std::nullopt;
  const double axis = 0.5 * std::atan2(2 * sxy, sxx - syy);
  const double dev = std::abs(std::sin(axis - std::atan2(ty, tx)));
  if (dev > std::sin(opt.max_orientation_deviation_deg * std::numbers::pi / 180)) {
    return std::nullopt;
  }

  // Project the neighbourhood onto the normal.
  const double R = opt.profile_half_width;
  const double s_lo = smin + 2, s_hi = smax - 2;
  int x0 = img.width(), x1 = 0, y0 = img.height(), y1 = 0;
  for (const auto& p : pixels) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const int pad = static_cast<int>(std::ceil(R)) + 1;
  x0 = std::max(0, x0 - pad);
  y0 = std::max(0, y0 - pad);
  x1 = std::min(img.width() - 1, x1 + pad);
  y1 = std::min(img.height() - 1, y1 + pad);
  std::vector<Sample> samples;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double s = dx * tx + dy * ty;
      const double d = dx * nx + dy * ny;
      if (s < s_lo || s > s_hi || std::abs(d) > R) continue;
      samples.push_back({d, img.at(x, y)});
    }
  }
  if (samples.size() < 16) return std::nullopt;

  // Plateaus from the outer thirds of the profile.
  std::vector<double> low, high;
  for (const auto& s : samples) {
    if (s.d < -2 * R / 3) low.push_back(s.value);
    if (s.d > 2 * R / 3) high.push_back(s.value);
  }
  if (low.empty() || high.empty()) return std::nullopt;
  EsfModel model;
  model.lo = median_of(low);
  model.hi = median_of(high);
  if (!(model.hi > model.lo)) return std::nullopt;
  model = fit_esf(samples, model);

  const double contrast = model.hi - model.lo;
  const double sigma = model.sigma();
  if (!(contrast > 0) || !(sigma >= 0.05 && sigma <= R / 2) ||
      std::abs(model.x0) > R / 2) {
    return std::nullopt;
  }
  // Residual in excess of the plateau noise, so sensor noise alone does not
  // disqualify an otherwise clean edge.
  std::vector<double> spread;
  const double lo_med = median_of(low), hi_med = median_of(high);
  for (double v : low) spread.push_back(std::abs(v - lo_med));
  for (double v : high) spread.push_back(std::abs(v - hi_med));
  const double noise = 1.4826 * median_of(spread);
  const double mse = sum_sq(samples, model) / static_cast<double>(samples.size());
  const double rms = std::sqrt(std::max(0.0, mse - noise * noise)) / contrast;
  if (rms > opt.max_fit_residual) return std::nullopt;

  EdgeMeasurement e;
  e.x_axis = x_axis;
  e.sigma = sigma;
  e.rer = rer_from_sigma(sigma);
  e.length = length;
  e.residual = rms;
  return e;
}

}  // namespace

double rer_from_sigma(double sigma) { return std::erf(0.5 / (sigma * kSqrt2)); }

RerResult rer(const GrayImage& image, const RerOptions& options) {
  require_metric_size(image, "rer");
  const int w = image.width(), h = image.height();
  const Gradient g = sobel(image);
  double max_mag = 0;
  for (double m : g.mag.data()) max_mag = std::max(max_mag, m);

  RerResult result;
  if (max_mag == 0) return result;
  const double threshold = options.min_gradient_fraction * max_mag;

  // 0: none, 1: x-family edge pixel, 2: y-family edge pixel.
  std::vector<std::uint8_t> label(static_cast<std::size_t>(w) * h, 0);
  auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };
  for (int y = 2; y < h - 2; ++y) {
    for (int x = 2; x < w - 2; ++x) {
      const double m = g.mag.at(x, y);
      if (m < threshold || m == 0) continue;
      const bool x_family = std::abs(g.gx.at(x, y)) >= std::abs(g.gy.at(x, y));
      const bool peak =
          x_family ? (m > g.mag.at(x - 1, y) && m >= g.mag.at(x + 1, y))
                   : (m > g.mag.at(x, y - 1) && m >= g.mag.at(x, y + 1));
      if (peak) label[idx(x, y)] = x_family ? 1 : 2;
    }
  }

  std::vector<std::uint8_t> seen(label.size(), 0);
  std::vector<Pixel> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint8_t fam = label[idx(x, y)];
      if (fam == 0 || seen[idx(x, y)]) continue;
      std::vector<Pixel> component;
      stack.push_back({x, y});
      seen[idx(x, y)] = 1;
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        component.push_back(p);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int qx = p.x + dx, qy = p.y + dy;
            if (qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
            const std::size_t q = idx(qx, qy);
            if (label[q] == fam && !seen[q]) {
              seen[q] = 1;
              stack.push_back({qx, qy});
            }
          }
        }
      }
      if (static_cast<int>(component.size()) < options.min_edge_length) continue;
      if (auto e = measure_edge(image, g, component, fam == 1, options)) {
        result.edges.push_back(*e);
      }
    }
  }

  std::vector<double> xs, ys, all;
  for (const auto& e : result.edges) {
    (e.x_axis ? xs : ys).push_back(e.rer);
    all.push_back(e.rer);
  }
  result.edge_count = static_cast<int>(result.edges.size());
  if (!xs.empty()) result.rer_x = median_of(xs);
  if (!ys.empty()) result.rer_y = median_of(ys);
  if (!all.empty()) result.rer_median = median_of(all);
  return result;
}

SnrResult snr(const GrayImage& image, const SnrOptions& options) {
  require_metric_size(image, "snr");
  const int b = options.block_size;
  if (b < 4) throw InvalidArgument("snr: block size must be at least 4");
  if (!(options.homogeneous_fraction > 0 && options.homogeneous_fraction <= 1)) {
    throw InvalidArgument("snr: homogeneous fraction must be in (0, 1]");
  }
  // Gain of "x - mean3x3(x)" on white noise: sqrt(1 - 1/9).
  const double residual_gain = std::sqrt(8.0 / 9.0);

  struct Block {
    double variance;
    double median;
    double noise;
  };
  std::vector<Block> blocks;
  std::vector<double> values, residual;
  for (int by = 0; by + b <= image.height(); by += b) {
    for (int bx = 0; bx + b <= image.width(); bx += b) {
      values.clear();
      residual.clear();
      double sum = 0, sum2 = 0;
      for (int y = by; y < by + b; ++y) {
        for (int x = bx; x < bx + b; ++x) {
          const double v = image.at(x, y);
          values.push_back(v);
          sum += v;
          sum2 += v * v;
        }
      }
      for (int y = by + 1; y < by + b - 1; ++y) {
        for (int x = bx + 1; x < bx + b - 1; ++x) {
          double s = 0;
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) s += image.at(x + dx, y + dy);
          }
          residual.push_back(image.at(x, y) - s / 9.0);
        }
      }
      const double n = static_cast<double>(values.size());
      const double mean = sum / n;
      const double var = std::max(0.0, sum2 / n - mean * mean);
      const double med = median_of(residual);
      for (double& r : residual) r = std::abs(r - med);
      const double mad = median_of(residual);
      blocks.push_back({var, median_of(values), 1.4826 * mad / residual_gain});
    }
  }

  std::stable_sort(blocks.begin(), blocks.end(),
                   [](const Block& a, const Block& c) {
                     return a.variance < c.variance;
                   });
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(options.homogeneous_fraction *
                                            static_cast<double>(blocks.size()))));
  std::vector<double> noise, level;
  for (std::size_t i = 0; i < keep && i < blocks.size(); ++i) {
    noise.push_back(blocks[i].noise);
    level.push_back(blocks[i].median);
  }

  SnrResult out;
  out.block_count = static_cast<int>(noise.size());
  out.noise_sigma = median_of(noise);
  out.signal_mean = median_of(level);
  // Residuals of non-integer luma are never exactly 0; anything this small
  // is rounding error, not noise.
  constexpr double kNoiseFloor = 1e-6;
  if (out.noise_sigma < kNoiseFloor) out.noise_sigma = 0;
  if (out.noise_sigma > 0) {
    out.snr_linear = out.signal_mean / out.noise_sigma;
    if (*out.snr_linear > 0) out.snr_db = 20 * std::log10(*out.snr_linear);
  }
  return out;
}

double psnr(const Image8& reference, const Image8& test) {
  if (reference.width() != test.width() || reference.height() != test.height() ||
      reference.channels() != test.channels()) {
    throw InvalidArgument("psnr: images differ in size or channel count");
  }
  if (reference.empty()) throw InvalidArgument("psnr: empty images");
  auto a = reference.data();
  auto b = test.data();
  double sse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sse += d * d;
  }
  if (sse == 0) return std::numeric_limits<double>::infinity();
  const double mse = sse / static_cast<double>(a.size());
  return 10 * std::log10(255.0 * 255.0 / mse);
}

}  // namespace iqb::quality
