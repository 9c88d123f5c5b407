#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace iqb {

// 8-bit raster with interleaved channels (1 = gray, 3 = RGB, 4 = RGBA).
class Image8 {
 public:
  Image8() = default;
  Image8(int width, int height, int channels, std::uint8_t fill = 0);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return pixels_.empty(); }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels_[index(x, y, c)];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels_[index(x, y, c)];
  }

  std::span<std::uint8_t> data() noexcept { return pixels_; }
  std::span<const std::uint8_t> data() const noexcept { return pixels_; }

  // Row-major pointer to row `y`.
  const std::uint8_t* row(int y) const {
    return pixels_.data() + index(0, y, 0);
  }
  std::uint8_t* row(int y) { return pixels_.data() + index(0, y, 0); }

  friend bool operator==(const Image8&, const Image8&) = default;

 private:
  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(c);
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// Single-channel floating point raster used by the quality metrics.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, double fill = 0.0);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return values_.empty(); }

  double& at(int x, int y) { return values_[index(x, y)]; }
  double at(int x, int y) const { return values_[index(x, y)]; }

  // Clamp-to-edge access.
  double at_clamped(int x, int y) const;

  std::span<double> data() noexcept { return values_; }
  std::span<const double> data() const noexcept { return values_; }

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

// ITU-R BT.601 luma for RGB(A) input, a plain copy for gray input.
GrayImage to_luma(const Image8& image);

// Keeps the first three channels of a multi-band image. Gray and RGB input
// is returned unchanged.
Image8 drop_extra_bands(const Image8& image);

}  // namespace iqb
