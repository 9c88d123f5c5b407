#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "iqb/image.hpp"
#include "iqb/modifier_spec.hpp"

namespace iqb::jpeg {

// Quantization table in natural (row-major) order.
using QuantTable = std::array<std::uint16_t, 64>;

// ITU-T T.81 Annex K example tables (K.1 luminance, K.2 chrominance).
const QuantTable& base_luma_table();
const QuantTable& base_chroma_table();

// IJG quality scaling: q clamped to [1, 100], scale = 5000/q below 50 and
// 200 - 2q otherwise, entries floor((base*scale + 50)/100) clamped to
// [1, 255].
int quality_scale_factor(int quality);
QuantTable scale_table(const QuantTable& base, int quality);

struct EncodeOptions {
  int quality = 95;
  ChromaSubsampling chroma = ChromaSubsampling::k420;
};

// Baseline sequential JFIF with the standard Huffman tables. Accepts 8-bit
// gray or RGB input; anything else throws InvalidArgument.
std::vector<std::uint8_t> encode(const Image8& image,
                                 const EncodeOptions& options);

}  // namespace iqb::jpeg
