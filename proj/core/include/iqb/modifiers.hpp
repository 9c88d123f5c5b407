#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "iqb/data.hpp"
#include "iqb/modifier_spec.hpp"

namespace iqb::modifiers {

struct ImageFailure {
  std::string partition;
  std::string image_id;
  std::string message;
};

struct ApplyOptions {
  std::filesystem::path output_root;
  // Abort when any image fails; otherwise failed images are dropped and
  // reported in ModifiedDataset::failures.
  bool strict = true;
  // 0 picks std::thread::hardware_concurrency().
  int workers = 0;
};

struct ModifiedDataset {
  std::string base_name;
  ModifierSpec spec;
  data::Dataset dataset;  // paths point at the emitted files
  double avg_size_mb = 0.0;
  std::map<std::string, double> partition_avg_size_mb;
  std::filesystem::path output_root;  // <root>/<modifier name>
  std::vector<ImageFailure> failures;
};

// Transformed file bytes for one image plus the extension to store them
// under (identity keeps the original bytes and extension).
struct EncodedImage {
  std::vector<std::uint8_t> bytes;
  std::string extension;
  int width = 0;
  int height = 0;
};

EncodedImage transform_image(std::span<const std::uint8_t> source_bytes,
                             const std::string& source_extension,
                             const ModifierSpec& spec);

// Writes <output_root>/<name>/<partition>/<id>.<ext> plus <id>.txt
// annotation files and <output_root>/<name>/manifest.json.
ModifiedDataset apply_modifier(const data::Dataset& dataset,
                               const ModifierSpec& spec,
                               const ApplyOptions& options);

// One JPEG variant per quality, in input order.
std::vector<ModifiedDataset> sweep(const data::Dataset& dataset,
                                   std::span<const int> qualities,
                                   const ApplyOptions& options);

// Reads back a variant written by apply_modifier().
ModifiedDataset load_modified_dataset(const std::filesystem::path& variant_root);

}  // namespace iqb::modifiers
