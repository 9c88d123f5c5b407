#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "iqb/image.hpp"

namespace iqb {

enum class ImageFormat { kUnknown, kPng, kJpeg, kPnm };

ImageFormat sniff_format(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

struct ImageInfo {
  int width = 0;
  int height = 0;
  int channels = 0;
};

// Reads only the header.
ImageInfo probe_image(std::span<const std::uint8_t> bytes);

// Decodes PNG (8-bit), baseline/progressive JPEG and binary PGM/PPM.
// 16-bit sources are rejected with IoError.
Image8 decode_image(std::span<const std::uint8_t> bytes);
Image8 load_image(const std::filesystem::path& path);

Image8 decode_jpeg(std::span<const std::uint8_t> bytes);
Image8 decode_png(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const Image8& image);
void save_png(const std::filesystem::path& path, const Image8& image);

}  // namespace iqb
