#include "iqb/image.hpp"

#include <algorithm>

#include "iqb/error.hpp"

namespace iqb {

Image8::Image8(int width, int height, int channels, std::uint8_t fill)
    : width_(width), height_(height), channels_(channels) {
  if (width < 0 || height < 0 || channels < 1 || channels > 4) {
    throw InvalidArgument("Image8: invalid dimensions");
  }
  pixels_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

GrayImage::GrayImage(int width, int height, double fill)
    : width_(width), height_(height) {
  if (width < 0 || height < 0) {
    throw InvalidArgument("GrayImage: invalid dimensions");
  }
  values_.assign(static_cast<std::size_t>(width) * height, fill);
}

double GrayImage::at_clamped(int x, int y) const {
  x = std::clamp(x, 0, width_ - 1);
  y = std::clamp(y, 0, height_ - 1);
  return values_[index(x, y)];
}

GrayImage to_luma(const Image8& image) {
  GrayImage out(image.width(), image.height());
  const int c = image.channels();
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const std::uint8_t* p = src.data() + i * c;
    if (c < 3) {
      dst[i] = p[0];
    } else {
      dst[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  }
  return out;
}

Image8 drop_extra_bands(const Image8& image) {
  if (image.channels() == 1 || image.channels() == 3) return image;
  // Two-channel input is gray + alpha.
  const int keep = image.channels() == 2 ? 1 : 3;
  Image8 out(image.width(), image.height(), keep);
  auto src = image.data();
  auto dst = out.data();
  const std::size_t n = image.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < keep; ++k) {
      dst[i * keep + k] = src[i * image.channels() + k];
    }
  }
  return out;
}

}  // namespace iqb
