#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iqb/geometry.hpp"
#include "iqb/image.hpp"
#include "iqb/modifier_spec.hpp"

namespace iqb::data {

struct AnnotatedObject {
  geometry::Quad quad{};
  std::string category;
  bool difficult = false;

  friend bool operator==(const AnnotatedObject&,
                         const AnnotatedObject&) = default;
};

// Parses "x1 y1 x2 y2 x3 y3 x4 y4 category difficult" lines. Blank lines,
// lines starting with '#' and the DOTA "imagesource:"/"gsd:" header lines
// are skipped. Throws ParseError carrying the 1-based line number.
std::vector<AnnotatedObject> parse_obb_annotations(std::string_view text);

// Inverse of parse_obb_annotations; coordinates use the shortest decimal
// form that round-trips.
std::string serialize_obb_annotations(std::span<const AnnotatedObject> objects);

std::vector<AnnotatedObject> load_annotations(const std::filesystem::path& path);

struct ImageEntry {
  std::string id;
  std::filesystem::path path;
  int width = 0;
  int height = 0;
  std::uint64_t byte_size = 0;
  std::vector<AnnotatedObject> annotations;
  // Source annotation file, if any. Copied verbatim when geometry is kept.
  std::filesystem::path annotation_path;
};

using Partition = std::vector<ImageEntry>;

struct Dataset {
  std::string name;
  std::map<std::string, Partition> partitions;
  // Modifiers in application order.
  std::vector<ModifierSpec> provenance;

  // Checks entry invariants and that image ids are unique across all
  // partitions. Throws InvalidArgument.
  void validate() const;

  std::size_t image_count() const;
  const Partition& partition(const std::string& name) const;
};

// Dataset manifest (JSON: name, partitions, modifiers[]). Paths in the file
// are relative to the manifest's directory.
Dataset load_manifest(const std::filesystem::path& path);
void save_manifest(const Dataset& dataset, const std::filesystem::path& path);

// Builds a dataset from "<root>/<partition>/images/*" with optional
// "<root>/<partition>/labelTxt/<id>.txt" annotation files.
Dataset scan_directory(const std::filesystem::path& root, std::string name);

// Accepts either a manifest file or a directory for scan_directory().
Dataset open_dataset(const std::filesystem::path& path);

struct TileOptions {
  int tile = 1024;
  int overlap = 0;
  std::uint8_t pad_value = 0;
  // An object joins a tile when at least this fraction of its area lies
  // inside the tile.
  double min_area_fraction = 0.5;
};

struct Tile {
  ImageEntry entry;  // id "<source>__<x>_<y>", annotations in tile frame
  Image8 pixels;     // always tile x tile
  int offset_x = 0;
  int offset_y = 0;
};

// Grid offsets along one axis: stride tile - overlap, enough tiles to cover
// `extent`, the last one possibly running past the edge.
std::vector<int> tile_offsets(int extent, int tile, int overlap);

// Annotations of `objects` assigned to the tile at (x0, y0), shifted into
// tile coordinates.
std::vector<AnnotatedObject> assign_to_tile(
    std::span<const AnnotatedObject> objects, int x0, int y0, int tile,
    double min_area_fraction);

std::vector<Tile> tile_image(const ImageEntry& entry, const Image8& pixels,
                             const TileOptions& options);

// Seeded random split of whole images. Weights are normalized; sizes follow
// largest-remainder apportionment; each output keeps input order.
std::vector<Partition> split_partition(std::span<const ImageEntry> entries,
                                       std::span<const double> fractions,
                                       std::uint64_t seed);

// Mean byte size in decimal megabytes (1 MB = 10^6 bytes).
double avg_file_size_mb(std::span<const ImageEntry> entries);

}  // namespace iqb::data
