#pragma once

#include "iqb/image.hpp"
#include "iqb/modifier_spec.hpp"

namespace iqb {

// Downscales by `scale` in (0, 1]. Output dimensions are
// max(1, floor(dim * scale)); samples are taken at pixel centers mapped back
// into the source, and results stay within the source intensity range.
Image8 resize_interpolate(const Image8& image, double scale,
                          Interpolation method);

}  // namespace iqb
