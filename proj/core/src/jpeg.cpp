#include "iqb/jpeg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>

#include "iqb/error.hpp"

namespace iqb::jpeg {
namespace {

// Zigzag position -> natural (row-major) index.
constexpr std::array<std::uint8_t, 64> kZigzag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

constexpr QuantTable kLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

constexpr QuantTable kChroma = {
    17, 18, 24, 47, 99, 99, 99, 99,  //
    18, 21, 26, 66, 99, 99, 99, 99,  //
    24, 26, 56, 99, 99, 99, 99, 99,  //
    47, 66, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99};

// Annex K.3 - K.6 Huffman specifications: code counts per length 1..16,
// then symbols.
struct HuffSpec {
  std::array<std::uint8_t, 16> counts;
  std::span<const std::uint8_t> symbols;
};

constexpr std::uint8_t kDcSymbols[12] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};

constexpr std::uint8_t kAcLumaSymbols[162] = {
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06,
    0x13, 0x51, 0x61, 0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08,
    0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0, 0x24, 0x33, 0x62, 0x72,
    0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45,
    0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
    0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75,
    0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3,
    0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6,
    0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9,
    0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4,
    0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa};

constexpr std::uint8_t kAcChromaSymbols[162] = {
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41,
    0x51, 0x07, 0x61, 0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91,
    0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0, 0x15, 0x62, 0x72, 0xd1,
    0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26,
    0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44,
    0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58,
    0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74,
    0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a,
    0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4,
    0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7,
    0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
    0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4,
    0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa};

constexpr HuffSpec kDcLuma{{0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0},
                           kDcSymbols};
constexpr HuffSpec kDcChroma{{0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0},
                             kDcSymbols};
constexpr HuffSpec kAcLuma{
    {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d}, kAcLumaSymbols};
constexpr HuffSpec kAcChroma{
    {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77}, kAcChromaSymbols};

struct HuffCode {
  std::uint16_t code = 0;
  std::uint8_t length = 0;
};

using HuffTable = std::array<HuffCode, 256>;

// Canonical code assignment (T.81 Annex C).
HuffTable build_codes(const HuffSpec& spec) {
  HuffTable table{};
  std::uint16_t code = 0;
  std::size_t k = 0;
  for (int len = 1; len <= 16; ++len) {
    for (int i = 0; i < spec.counts[len - 1]; ++i) {
      table[spec.symbols[k++]] = {code, static_cast<std::uint8_t>(len)};
      ++code;
    }
    code <<= 1;
  }
  return table;
}

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void put(std::uint32_t bits, int count) {
    acc_ = (acc_ << count) | (bits & ((1u << count) - 1));
    used_ += count;
    while (used_ >= 8) {
      const auto byte = static_cast<std::uint8_t>(acc_ >> (used_ - 8));
      out_.push_back(byte);
      if (byte == 0xFF) out_.push_back(0x00);
      used_ -= 8;
    }
    acc_ &= (1u << used_) - 1;
  }

  void put(const HuffCode& c) { put(c.code, c.length); }

  // Pads the final byte with 1-bits.
  void flush() {
    if (used_ > 0) put(0x7F, 8 - used_);
  }

 private:
  std::vector<std::uint8_t>& out_;
  std::uint32_t acc_ = 0;
  int used_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, unsigned v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_marker(std::vector<std::uint8_t>& out, std::uint8_t marker) {
  out.push_back(0xFF);
  out.push_back(marker);
}

void write_dht(std::vector<std::uint8_t>& out, std::uint8_t cls_id,
               const HuffSpec& spec) {
  put_marker(out, 0xC4);
  put_u16(out, static_cast<unsigned>(2 + 1 + 16 + spec.symbols.size()));
  out.push_back(cls_id);
  out.insert(out.end(), spec.counts.begin(), spec.counts.end());
  out.insert(out.end(), spec.symbols.begin(), spec.symbols.end());
}

// Orthonormal 8-point DCT-II basis: basis[u][x].
const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::sqrt(0.125) : 0.5;
      for (int x = 0; x < 8; ++x) {
        b[u][x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16);
      }
    }
    return b;
  }();
  return basis;
}

// Level-shifted samples in, quantized coefficients in zigzag order out.
void fdct_quantize(const std::array<double, 64>& block,
                   const QuantTable& table, std::array<int, 64>& zz) {
  const auto& b = dct_basis();
  std::array<double, 64> tmp{};
  for (int y = 0; y < 8; ++y) {
    for (int u = 0; u < 8; ++u) {
      double s = 0;
      for (int x = 0; x < 8; ++x) s += b[u][x] * block[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  }
  std::array<double, 64> coef{};
  for (int u = 0; u < 8; ++u) {
    for (int v = 0; v < 8; ++v) {
      double s = 0;
      for (int y = 0; y < 8; ++y) s += b[v][y] * tmp[y * 8 + u];
      coef[v * 8 + u] = s;
    }
  }
  for (int k = 0; k < 64; ++k) {
    const int n = kZigzag[k];
    zz[k] = static_cast<int>(std::lround(coef[n] / table[n]));
  }
}

int magnitude_category(int v) {
  v = std::abs(v);
  int n = 0;
  while (v) {
    ++n;
    v >>= 1;
  }
  return n;
}

std::uint32_t magnitude_bits(int v, int category) {
  return static_cast<std::uint32_t>(v < 0 ? v + (1 << category) - 1 : v);
}

struct Component {
  std::vector<double> plane;  // level-shifted, padded
  int stride = 0;
  int rows = 0;
  int h_samp = 1;
  int v_samp = 1;
  const QuantTable* table = nullptr;
  const HuffTable* dc = nullptr;
  const HuffTable* ac = nullptr;
  int last_dc = 0;
};

void encode_block(BitWriter& bw, Component& comp, int bx, int by) {
  std::array<double, 64> block{};
  for (int y = 0; y < 8; ++y) {
    const double* src =
        comp.plane.data() + static_cast<std::size_t>(by + y) * comp.stride + bx;
    std::copy_n(src, 8, block.begin() + y * 8);
  }
  std::array<int, 64> zz{};
  fdct_quantize(block, *comp.table, zz);

  const int diff = zz[0] - comp.last_dc;
  comp.last_dc = zz[0];
  const int dc_cat = magnitude_category(diff);
  bw.put((*comp.dc)[dc_cat]);
  if (dc_cat) bw.put(magnitude_bits(diff, dc_cat), dc_cat);

  int run = 0;
  for (int k = 1; k < 64; ++k) {
    if (zz[k] == 0) {
      ++run;
      continue;
    }
    while (run > 15) {
      bw.put((*comp.ac)[0xF0]);
      run -= 16;
    }
    // Baseline AC magnitudes are limited to category 10.
    const int value = std::clamp(zz[k], -1023, 1023);
    const int cat = magnitude_category(value);
    bw.put((*comp.ac)[(run << 4) | cat]);
    bw.put(magnitude_bits(value, cat), cat);
    run = 0;
  }
  if (run > 0) bw.put((*comp.ac)[0x00]);
}

// Copies a full-resolution plane into a padded buffer by edge replication.
std::vector<double> pad_plane(const std::vector<double>& src, int w, int h,
                              int pw, int ph) {
  std::vector<double> out(static_cast<std::size_t>(pw) * ph);
  for (int y = 0; y < ph; ++y) {
    const int sy = std::min(y, h - 1);
    for (int x = 0; x < pw; ++x) {
      const int sx = std::min(x, w - 1);
      out[static_cast<std::size_t>(y) * pw + x] =
          src[static_cast<std::size_t>(sy) * w + sx];
    }
  }
  return out;
}

// 2x2 box average of a padded plane with even dimensions.
std::vector<double> downsample(const std::vector<double>& src, int pw, int ph) {
  const int dw = pw / 2;
  const int dh = ph / 2;
  std::vector<double> out(static_cast<std::size_t>(dw) * dh);
  for (int y = 0; y < dh; ++y) {
    for (int x = 0; x < dw; ++x) {
      const std::size_t i0 = static_cast<std::size_t>(2 * y) * pw + 2 * x;
      out[static_cast<std::size_t>(y) * dw + x] =
          (src[i0] + src[i0 + 1] + src[i0 + pw] + src[i0 + pw + 1]) / 4;
    }
  }
  return out;
}

}  // namespace

const QuantTable& base_luma_table() { return kLuma; }
const QuantTable& base_chroma_table() { return kChroma; }

int quality_scale_factor(int quality) {
  quality = std::clamp(quality, 1, 100);
  return quality < 50 ? 5000 / quality : 200 - 2 * quality;
}

QuantTable scale_table(const QuantTable& base, int quality) {
  const long scale = quality_scale_factor(quality);
  QuantTable out{};
  for (std::size_t i = 0; i < 64; ++i) {
    const long v = (static_cast<long>(base[i]) * scale + 50) / 100;
    out[i] = static_cast<std::uint16_t>(std::clamp(v, 1L, 255L));
  }
  return out;
}

std::vector<std::uint8_t> encode(const Image8& image,
                                 const EncodeOptions& options) {
  const int ch = image.channels();
  if (ch != 1 && ch != 3) {
    throw InvalidArgument("jpeg::encode: expected 1 or 3 channels, got " +
                          std::to_string(ch));
  }
  const int w = image.width();
  const int h = image.height();
  if (w < 1 || h < 1 || w > 65535 || h > 65535) {
    throw InvalidArgument("jpeg::encode: unsupported image size");
  }

  const QuantTable luma_q = scale_table(kLuma, options.quality);
  const QuantTable chroma_q = scale_table(kChroma, options.quality);
  static const HuffTable dc_luma = build_codes(kDcLuma);
  static const HuffTable ac_luma = build_codes(kAcLuma);
  static const HuffTable dc_chroma = build_codes(kDcChroma);
  static const HuffTable ac_chroma = build_codes(kAcChroma);

  const bool subsample = ch == 3 && options.chroma == ChromaSubsampling::k420;
  const int mcu = subsample ? 16 : 8;
  const int pw = (w + mcu - 1) / mcu * mcu;
  const int ph = (h + mcu - 1) / mcu * mcu;

  // Level-shifted YCbCr planes (JFIF conversion).
  const std::size_t n = image.pixel_count();
  std::vector<std::vector<double>> planes(ch, std::vector<double>(n));
  auto px = image.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (ch == 1) {
      planes[0][i] = px[i] - 128.0;
      continue;
    }
    const double r = px[3 * i], g = px[3 * i + 1], b = px[3 * i + 2];
    planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
    planes[1][i] = -0.168735892 * r - 0.331264108 * g + 0.5 * b;
    planes[2][i] = 0.5 * r - 0.418687589 * g - 0.081312411 * b;
  }

  std::vector<Component> comps(ch);
  for (int c = 0; c < ch; ++c) {
    auto& comp = comps[c];
    auto padded = pad_plane(planes[c], w, h, pw, ph);
    if (c == 0) {
      comp.plane = std::move(padded);
      comp.stride = pw;
      comp.rows = ph;
      comp.h_samp = comp.v_samp = subsample ? 2 : 1;
      comp.table = &luma_q;
      comp.dc = &dc_luma;
      comp.ac = &ac_luma;
    } else {
      comp.plane = subsample ? downsample(padded, pw, ph) : std::move(padded);
      comp.stride = subsample ? pw / 2 : pw;
      comp.rows = subsample ? ph / 2 : ph;
      comp.table = &chroma_q;
      comp.dc = &dc_chroma;
      comp.ac = &ac_chroma;
    }
  }

  std::vector<std::uint8_t> out;
  out.reserve(n / 2 + 1024);
  put_marker(out, 0xD8);

  // JFIF APP0: version 1.01, no density units, 1:1 aspect, no thumbnail.
  put_marker(out, 0xE0);
  put_u16(out, 16);
  for (char c : {'J', 'F', 'I', 'F', '\0'}) out.push_back(static_cast<std::uint8_t>(c));
  out.insert(out.end(), {1, 1, 0});
  put_u16(out, 1);
  put_u16(out, 1);
  out.insert(out.end(), {0, 0});

  auto write_dqt = [&](std::uint8_t id, const QuantTable& t) {
    put_marker(out, 0xDB);
    put_u16(out, 67);
    out.push_back(id);
    for (int k = 0; k < 64; ++k) out.push_back(static_cast<std::uint8_t>(t[kZigzag[k]]));
  };
  write_dqt(0, luma_q);
  if (ch == 3) write_dqt(1, chroma_q);

  put_marker(out, 0xC0);
  put_u16(out, static_cast<unsigned>(8 + 3 * ch));
  out.push_back(8);
  put_u16(out, static_cast<unsigned>(h));
  put_u16(out, static_cast<unsigned>(w));
  out.push_back(static_cast<std::uint8_t>(ch));
  for (int c = 0; c < ch; ++c) {
    out.push_back(static_cast<std::uint8_t>(c + 1));
    out.push_back(static_cast<std::uint8_t>((comps[c].h_samp << 4) | comps[c].v_samp));
    out.push_back(c == 0 ? 0 : 1);
  }

  write_dht(out, 0x00, kDcLuma);
  write_dht(out, 0x10, kAcLuma);
  if (ch == 3) {
    write_dht(out, 0x01, kDcChroma);
    write_dht(out, 0x11, kAcChroma);
  }

  put_marker(out, 0xDA);
  put_u16(out, static_cast<unsigned>(6 + 2 * ch));
  out.push_back(static_cast<std::uint8_t>(ch));
  for (int c = 0; c < ch; ++c) {
    out.push_back(static_cast<std::uint8_t>(c + 1));
    out.push_back(c == 0 ? 0x00 : 0x11);
  }
  out.insert(out.end(), {0, 63, 0});

  BitWriter bw(out);
  for (int my = 0; my < ph; my += mcu) {
    for (int mx = 0; mx < pw; mx += mcu) {
      for (int c = 0; c < ch; ++c) {
        auto& comp = comps[c];
        const int cx = c == 0 ? mx : (subsample ? mx / 2 : mx);
        const int cy = c == 0 ? my : (subsample ? my / 2 : my);
        for (int v = 0; v < comp.v_samp; ++v) {
          for (int u = 0; u < comp.h_samp; ++u) {
            encode_block(bw, comp, cx + 8 * u, cy + 8 * v);
          }
        }
      }
    }
  }
  bw.flush();
  put_marker(out, 0xD9);
  return out;
}

}  // namespace iqb::jpeg
