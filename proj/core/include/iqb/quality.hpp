#pragma once

#include <optional>
#include <vector>

#include "iqb/image.hpp"

namespace iqb::quality {

// Relative edge response of one straight edge.
struct EdgeMeasurement {
  bool x_axis = true;  // edge normal closer to the x axis than to y
  double sigma = 0.0;  // fitted Gaussian blur of the edge spread function
  double rer = 0.0;
  double length = 0.0;  // pixels along the edge
  double residual = 0.0;  // fit RMS net of noise, over contrast
};

struct RerResult {
  // Unavailable (nullopt) when no edge qualified along that axis.
  std::optional<double> rer_x;
  std::optional<double> rer_y;
  std::optional<double> rer_median;
  int edge_count = 0;
  std::vector<EdgeMeasurement> edges;
};

struct RerOptions {
  // Edge pixels need a gradient magnitude of at least this fraction of the
  // image's maximum gradient magnitude.
  double min_gradient_fraction = 0.2;
  int min_edge_length = 16;
  double max_orientation_deviation_deg = 5.0;
  // Half-width of the band sampled across the edge, in pixels.
  double profile_half_width = 12.0;
  // Edges whose fit residual, net of plateau noise and normalized by the
  // edge contrast, exceeds this are rejected.
  double max_fit_residual = 0.05;
};

// Minimum raster size accepted by rer() and snr().
inline constexpr int kMinMetricSize = 64;

RerResult rer(const GrayImage& image, const RerOptions& options = {});

// Relative edge response implied by an erf-shaped edge spread function with
// blur sigma: ESF(+0.5) - ESF(-0.5) = erf(0.5 / (sigma * sqrt(2))).
double rer_from_sigma(double sigma);

struct SnrResult {
  // Unavailable when the estimated noise is zero.
  std::optional<double> snr_linear;
  std::optional<double> snr_db;
  double noise_sigma = 0.0;
  double signal_mean = 0.0;
  int block_count = 0;  // homogeneous blocks used
};

struct SnrOptions {
  int block_size = 32;
  double homogeneous_fraction = 0.1;
};

SnrResult snr(const GrayImage& image, const SnrOptions& options = {});

// 10 log10(255^2 / MSE). Identical inputs give +infinity. Throws
// InvalidArgument on a size or channel mismatch.
double psnr(const Image8& reference, const Image8& test);

}  // namespace iqb::quality
