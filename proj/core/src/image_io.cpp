#include "iqb/image_io.hpp"

#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include <jpeglib.h>
#include <png.h>

#include "iqb/error.hpp"

namespace iqb {
namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silent(j_common_ptr, int) {}

// Skips whitespace and '#' comments in a PNM header.
std::size_t pnm_skip(std::span<const std::uint8_t> b, std::size_t i) {
  while (i < b.size()) {
    if (b[i] == '#') {
      while (i < b.size() && b[i] != '\n') ++i;
    } else if (std::isspace(b[i])) {
      ++i;
    } else {
      break;
    }
  }
  return i;
}

int pnm_int(std::span<const std::uint8_t> b, std::size_t& i) {
  i = pnm_skip(b, i);
  if (i >= b.size() || !std::isdigit(b[i])) {
    throw IoError("PNM: malformed header");
  }
  long v = 0;
  while (i < b.size() && std::isdigit(b[i])) {
    v = v * 10 + (b[i] - '0');
    if (v > (1L << 30)) throw IoError("PNM: header value too large");
    ++i;
  }
  return static_cast<int>(v);
}

struct PnmHeader {
  ImageInfo info;
  int maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(std::span<const std::uint8_t> b) {
  if (b.size() < 3 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) {
    throw IoError("PNM: only binary P5/P6 is supported");
  }
  PnmHeader h;
  std::size_t i = 2;
  h.info.channels = b[1] == '5' ? 1 : 3;
  h.info.width = pnm_int(b, i);
  h.info.height = pnm_int(b, i);
  h.maxval = pnm_int(b, i);
  if (i >= b.size() || !std::isspace(b[i])) {
    throw IoError("PNM: malformed header");
  }
  h.data_offset = i + 1;
  if (h.maxval != 255) {
    throw IoError("PNM: unsupported bit depth (maxval " +
                  std::to_string(h.maxval) + ")");
  }
  return h;
}

Image8 decode_pnm(std::span<const std::uint8_t> b) {
  const PnmHeader h = parse_pnm_header(b);
  Image8 out(h.info.width, h.info.height, h.info.channels);
  if (b.size() - h.data_offset < out.data().size()) {
    throw IoError("PNM: truncated pixel data");
  }
  std::memcpy(out.data().data(), b.data() + h.data_offset, out.data().size());
  return out;
}

}  // namespace

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G',
                                              '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) {
    return ImageFormat::kPng;
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 &&
      bytes[2] == 0xFF) {
    return ImageFormat::kJpeg;
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' &&
      (bytes[1] == '5' || bytes[1] == '6')) {
    return ImageFormat::kPnm;
  }
  return ImageFormat::kUnknown;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()),
                           static_cast<std::streamsize>(size))) {
    throw IoError("cannot read " + path.string());
  }
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

ImageInfo probe_image(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::kPng: {
      png_image img{};
      img.version = PNG_IMAGE_VERSION;
      if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw IoError(std::string("PNG: ") + img.message);
      }
      ImageInfo info{static_cast<int>(img.width), static_cast<int>(img.height),
                     static_cast<int>(PNG_IMAGE_SAMPLE_CHANNELS(img.format))};
      png_image_free(&img);
      return info;
    }
    case ImageFormat::kJpeg: {
      jpeg_decompress_struct cinfo{};
      JpegErrorManager err{};
      cinfo.err = jpeg_std_error(&err.base);
      err.base.error_exit = jpeg_error_exit;
      err.base.emit_message = jpeg_silent;
      if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError(std::string("JPEG: ") + err.message);
      }
      jpeg_create_decompress(&cinfo);
      jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
      jpeg_read_header(&cinfo, TRUE);
      ImageInfo info{static_cast<int>(cinfo.image_width),
                     static_cast<int>(cinfo.image_height),
                     cinfo.num_components == 1 ? 1 : 3};
      jpeg_destroy_decompress(&cinfo);
      return info;
    }
    case ImageFormat::kPnm:
      return parse_pnm_header(bytes).info;
    case ImageFormat::kUnknown:
      break;
  }
  throw IoError("unrecognised image format");
}

Image8 decode_png(std::span<const std::uint8_t> bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError(std::string("PNG: ") + img.message);
  }
  if ((img.format & PNG_FORMAT_FLAG_LINEAR) != 0) {
    png_image_free(&img);
    throw IoError("PNG: unsupported bit depth (16-bit)");
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  img.format = color ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB)
                     : (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY);
  Image8 out(static_cast<int>(img.width), static_cast<int>(img.height),
             static_cast<int>(PNG_IMAGE_SAMPLE_CHANNELS(img.format)));
  if (!png_image_finish_read(&img, nullptr, out.data().data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("PNG: " + msg);
  }
  return out;
}

Image8 decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_silent;
  Image8 out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError(std::string("JPEG: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_start_decompress(&cinfo);
  out = Image8(static_cast<int>(cinfo.output_width),
               static_cast<int>(cinfo.output_height),
               cinfo.output_components);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.row(static_cast<int>(cinfo.output_scanline));
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

Image8 decode_image(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::kPng:
      return decode_png(bytes);
    case ImageFormat::kJpeg:
      return decode_jpeg(bytes);
    case ImageFormat::kPnm:
      return decode_pnm(bytes);
    case ImageFormat::kUnknown:
      break;
  }
  throw IoError("unrecognised image format");
}

Image8 load_image(const std::filesystem::path& path) {
  try {
    return decode_image(read_file_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Image8& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  switch (image.channels()) {
    case 1: img.format = PNG_FORMAT_GRAY; break;
    case 2: img.format = PNG_FORMAT_GA; break;
    case 3: img.format = PNG_FORMAT_RGB; break;
    default: img.format = PNG_FORMAT_RGBA; break;
  }
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.data().data(),
                                 0, nullptr)) {
    throw IoError(std::string("PNG: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0,
                                 image.data().data(), 0, nullptr)) {
    throw IoError(std::string("PNG: ") + img.message);
  }
  out.resize(size);
  return out;
}

void save_png(const std::filesystem::path& path, const Image8& image) {
  write_file_bytes(path, encode_png(image));
}

}  // namespace iqb
