#include "iqb/resize.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <spdlog/spdlog.h>

#include "iqb/error.hpp"

namespace iqb {
namespace {

// Keys cubic convolution kernel, a = -0.5.
double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1) return ((a + 2) * t - (a + 3)) * t * t + 1;
  if (t < 2) return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a;
  return 0.0;
}

struct Tap {
  std::array<int, 4> index{};
  std::array<double, 4> weight{};
  int count = 0;
};

// Source taps for each output coordinate along one axis.
std::vector<Tap> axis_taps(int in, int out, Interpolation method) {
  const double ratio = static_cast<double>(in) / out;
  std::vector<Tap> taps(out);
  for (int d = 0; d < out; ++d) {
    Tap& t = taps[d];
    const double center = (d + 0.5) * ratio;
    switch (method) {
      case Interpolation::kNearest: {
        t.count = 1;
        t.index[0] = std::clamp(static_cast<int>(std::floor(center)), 0, in - 1);
        t.weight[0] = 1.0;
        break;
      }
      case Interpolation::kBilinear: {
        const double x = center - 0.5;
        const int x0 = static_cast<int>(std::floor(x));
        const double fx = x - x0;
        t.count = 2;
        t.index = {std::clamp(x0, 0, in - 1), std::clamp(x0 + 1, 0, in - 1), 0, 0};
        t.weight = {1.0 - fx, fx, 0.0, 0.0};
        break;
      }
      case Interpolation::kBicubic: {
        const double x = center - 0.5;
        const int x0 = static_cast<int>(std::floor(x));
        const double fx = x - x0;
        t.count = 4;
        double sum = 0;
        for (int k = 0; k < 4; ++k) {
          t.index[k] = std::clamp(x0 - 1 + k, 0, in - 1);
          t.weight[k] = cubic_weight(fx - (k - 1));
          sum += t.weight[k];
        }
        for (int k = 0; k < 4; ++k) t.weight[k] /= sum;
        break;
      }
    }
  }
  return taps;
}

}  // namespace

Image8 resize_interpolate(const Image8& image, double scale,
                          Interpolation method) {
  if (!(std::isfinite(scale) && scale > 0.0 && scale <= 1.0)) {
    throw InvalidArgument("resize scale must be in (0, 1]");
  }
  if (image.empty()) throw InvalidArgument("resize of an empty image");
  const int ch = image.channels();
  int out_w = static_cast<int>(std::floor(image.width() * scale));
  int out_h = static_cast<int>(std::floor(image.height() * scale));
  if (out_w < 1 || out_h < 1) {
    spdlog::warn("resize x{} of a {}x{} image clamped to at least 1 pixel",
                 scale, image.width(), image.height());
    out_w = std::max(out_w, 1);
    out_h = std::max(out_h, 1);
  }

  std::array<std::uint8_t, 4> lo{255, 255, 255, 255};
  std::array<std::uint8_t, 4> hi{0, 0, 0, 0};
  auto src = image.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto c = i % ch;
    lo[c] = std::min(lo[c], src[i]);
    hi[c] = std::max(hi[c], src[i]);
  }

  const auto xt = axis_taps(image.width(), out_w, method);
  const auto yt = axis_taps(image.height(), out_h, method);
  Image8 out(out_w, out_h, ch);
  for (int y = 0; y < out_h; ++y) {
    const Tap& ty = yt[y];
    for (int x = 0; x < out_w; ++x) {
      const Tap& tx = xt[x];
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int j = 0; j < ty.count; ++j) {
          double row = 0.0;
          for (int i = 0; i < tx.count; ++i) {
            row += tx.weight[i] * image.at(tx.index[i], ty.index[j], c);
          }
          acc += ty.weight[j] * row;
        }
        const double v = std::clamp(std::round(acc), double(lo[c]), double(hi[c]));
        out.at(x, y, c) = static_cast<std::uint8_t>(v);
      }
    }
  }
  return out;
}

}  // namespace iqb
