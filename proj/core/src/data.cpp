#include "iqb/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "iqb/error.hpp"
#include "iqb/image_io.hpp"
#include "json_io.hpp"
#include "text_util.hpp"

namespace iqb::data {
namespace {

namespace fs = std::filesystem;
using geometry::Point;
using geometry::Polygon;

bool is_header_line(std::string_view line) {
  return line.starts_with("imagesource:") || line.starts_with("gsd:");
}

Polygon object_polygon(const geometry::Quad& quad) {
  if (geometry::is_convex(quad)) return Polygon(geometry::normalize(quad));
  return geometry::convex_hull(quad);
}

// Unbiased draw from [0, bound).
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

bool is_image_extension(std::string ext) {
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".pgm" ||
         ext == ".ppm";
}

Partition scan_partition(const fs::path& dir) {
  Partition out;
  const fs::path images = dir / "images";
  const fs::path labels = dir / "labelTxt";
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.is_regular_file() && is_image_extension(e.path().extension().string())) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    ImageEntry entry;
    entry.id = f.stem().string();
    entry.path = fs::absolute(f);
    const auto bytes = read_file_bytes(f);
    const ImageInfo info = probe_image(bytes);
    entry.width = info.width;
    entry.height = info.height;
    entry.byte_size = bytes.size();
    const fs::path label = labels / (entry.id + ".txt");
    if (fs::exists(label)) {
      entry.annotation_path = fs::absolute(label);
      entry.annotations = load_annotations(label);
    }
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace

std::vector<AnnotatedObject> parse_obb_annotations(std::string_view text) {
  std::vector<AnnotatedObject> out;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view raw) {
    const std::string_view line = detail::trim(raw);
    if (line.empty() || line.front() == '#' || is_header_line(line)) return;
    const auto tokens = detail::split_ws(line);
    if (tokens.size() < 10) {
      throw ParseError("expected 8 coordinates, a category and a difficult "
                       "flag, got " + std::to_string(tokens.size()) + " fields",
                       line_no);
    }
    AnnotatedObject obj;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto x = detail::parse_double(tokens[2 * i]);
      const auto y = detail::parse_double(tokens[2 * i + 1]);
      if (!x || !y || !std::isfinite(*x) || !std::isfinite(*y)) {
        throw ParseError("non-numeric coordinate", line_no);
      }
      obj.quad[i] = {*x, *y};
    }
    obj.category = std::string(tokens[8]);
    if (tokens[9] == "0") {
      obj.difficult = false;
    } else if (tokens[9] == "1") {
      obj.difficult = true;
    } else {
      throw ParseError("difficult flag must be 0 or 1", line_no);
    }
    out.push_back(std::move(obj));
  });
  return out;
}

std::string serialize_obb_annotations(std::span<const AnnotatedObject> objects) {
  std::string out;
  for (const auto& obj : objects) {
    for (const Point& p : obj.quad) {
      out += detail::shortest(p.x);
      out += ' ';
      out += detail::shortest(p.y);
      out += ' ';
    }
    out += obj.category;
    out += obj.difficult ? " 1\n" : " 0\n";
  }
  return out;
}

std::vector<AnnotatedObject> load_annotations(const fs::path& path) {
  try {
    return parse_obb_annotations(detail::read_text_file(path.string()));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const auto& [pname, entries] : partitions) {
    for (const auto& e : entries) {
      if (e.id.empty()) throw InvalidArgument("image with empty id in " + pname);
      if (!ids.insert(e.id).second) {
        throw InvalidArgument("duplicate image id '" + e.id + "'");
      }
      if (e.width < 1 || e.height < 1) {
        throw InvalidArgument("image '" + e.id + "' has no pixels");
      }
      for (const auto& obj : e.annotations) {
        if (obj.category.empty()) {
          throw InvalidArgument("image '" + e.id + "': empty category");
        }
        for (const Point& p : obj.quad) {
          if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw InvalidArgument("image '" + e.id + "': non-finite vertex");
          }
        }
      }
    }
  }
}

std::size_t Dataset::image_count() const {
  std::size_t n = 0;
  for (const auto& [name, entries] : partitions) n += entries.size();
  return n;
}

const Partition& Dataset::partition(const std::string& pname) const {
  auto it = partitions.find(pname);
  if (it == partitions.end()) {
    throw InvalidArgument("dataset '" + name + "' has no partition '" + pname +
                          "'");
  }
  return it->second;
}

Dataset load_manifest(const fs::path& path) {
  const auto j = detail::parse_json_file(path);
  return detail::dataset_from_json(j, fs::absolute(path).parent_path());
}

void save_manifest(const Dataset& dataset, const fs::path& path) {
  detail::write_json_file(
      path, detail::dataset_to_json(dataset, fs::absolute(path).parent_path()));
}

Dataset scan_directory(const fs::path& root, std::string name) {
  if (!fs::is_directory(root)) {
    throw IoError("not a directory: " + root.string());
  }
  Dataset ds;
  ds.name = std::move(name);
  if (fs::is_directory(root / "images")) {
    ds.partitions["test"] = scan_partition(root);
  } else {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory() && fs::is_directory(e.path() / "images")) {
        dirs.push_back(e.path());
      }
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      ds.partitions[d.filename().string()] = scan_partition(d);
    }
  }
  if (ds.partitions.empty()) {
    throw IoError("no images/ directory under " + root.string());
  }
  ds.validate();
  return ds;
}

Dataset open_dataset(const fs::path& path) {
  if (fs::is_directory(path)) {
    if (fs::exists(path / "manifest.json")) {
      return load_manifest(path / "manifest.json");
    }
    fs::path dir = fs::absolute(path).lexically_normal();
    if (dir.filename().empty()) dir = dir.parent_path();
    return scan_directory(path, dir.filename().string());
  }
  return load_manifest(path);
}

std::vector<int> tile_offsets(int extent, int tile, int overlap) {
  if (tile < 1 || overlap < 0 || overlap >= tile) {
    throw InvalidArgument("tiling requires tile >= 1 and 0 <= overlap < tile");
  }
  if (extent < 1) throw InvalidArgument("tiling a degenerate image");
  const int stride = tile - overlap;
  std::vector<int> out{0};
  while (out.back() + tile < extent) out.push_back(out.back() + stride);
  return out;
}

std::vector<AnnotatedObject> assign_to_tile(
    std::span<const AnnotatedObject> objects, int x0, int y0, int tile,
    double min_area_fraction) {
  const double x1 = static_cast<double>(x0) + tile;
  const double y1 = static_cast<double>(y0) + tile;
  const std::array<Point, 4> rect = {Point{double(x0), double(y0)},
                                     Point{x1, double(y0)}, Point{x1, y1},
                                     Point{double(x0), y1}};
  const Polygon clip(rect);
  std::vector<AnnotatedObject> out;
  for (const auto& obj : objects) {
    const Polygon poly = object_polygon(obj.quad);
    const double area = geometry::polygon_area(poly);
    bool keep = false;
    if (area <= 1e-12) {
      // Degenerate outline: fall back to the vertex centroid.
      double cx = 0, cy = 0;
      for (const Point& p : obj.quad) {
        cx += p.x / 4;
        cy += p.y / 4;
      }
      keep = cx >= x0 && cx < x1 && cy >= y0 && cy < y1;
    } else {
      const double inside =
          geometry::polygon_area(geometry::clip_polygon(poly, clip));
      keep = inside >= min_area_fraction * area - 1e-9 * area;
    }
    if (!keep) continue;
    AnnotatedObject shifted = obj;
    for (Point& p : shifted.quad) {
      p.x -= x0;
      p.y -= y0;
    }
    out.push_back(std::move(shifted));
  }
  return out;
}

std::vector<Tile> tile_image(const ImageEntry& entry, const Image8& pixels,
                             const TileOptions& options) {
  if (pixels.width() < 1 || pixels.height() < 1) {
    throw InvalidArgument("image '" + entry.id + "' has no pixels");
  }
  if ((entry.width != 0 && entry.width != pixels.width()) ||
      (entry.height != 0 && entry.height != pixels.height())) {
    throw InvalidArgument("image '" + entry.id +
                          "': entry size does not match pixel data");
  }
  const auto xs = tile_offsets(pixels.width(), options.tile, options.overlap);
  const auto ys = tile_offsets(pixels.height(), options.tile, options.overlap);
  const int ch = pixels.channels();
  std::vector<Tile> out;
  out.reserve(xs.size() * ys.size());
  for (int y0 : ys) {
    for (int x0 : xs) {
      Tile t;
      t.offset_x = x0;
      t.offset_y = y0;
      t.pixels = Image8(options.tile, options.tile, ch, options.pad_value);
      const int w = std::min(options.tile, pixels.width() - x0);
      const int h = std::min(options.tile, pixels.height() - y0);
      for (int y = 0; y < h; ++y) {
        std::copy_n(pixels.row(y0 + y) + static_cast<std::size_t>(x0) * ch,
                    static_cast<std::size_t>(w) * ch, t.pixels.row(y));
      }
      t.entry.id = entry.id + "__" + std::to_string(x0) + "_" +
                   std::to_string(y0);
      t.entry.width = options.tile;
      t.entry.height = options.tile;
      t.entry.annotations = assign_to_tile(entry.annotations, x0, y0,
                                           options.tile,
                                           options.min_area_fraction);
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<Partition> split_partition(std::span<const ImageEntry> entries,
                                       std::span<const double> fractions,
                                       std::uint64_t seed) {
  if (entries.empty()) throw InvalidArgument("split_partition: empty input");
  if (fractions.empty()) throw InvalidArgument("split_partition: no fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(std::isfinite(f) && f > 0.0)) {
      throw InvalidArgument("split_partition: fractions must be positive");
    }
    total += f;
  }
  const std::size_t n = entries.size();
  const std::size_t k = fractions.size();

  // Largest-remainder apportionment.
  std::vector<std::size_t> sizes(k);
  std::vector<double> remainders(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double quota = static_cast<double>(n) * fractions[i] / total;
    sizes[i] = static_cast<std::size_t>(std::floor(quota));
    remainders[i] = quota - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::vector<std::size_t> by_remainder(k);
  std::iota(by_remainder.begin(), by_remainder.end(), 0);
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) {
                     return remainders[a] > remainders[b];
                   });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) {
    ++sizes[by_remainder[i % k]];
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[bounded(rng, i)]);
  }

  std::vector<Partition> out(k);
  std::size_t pos = 0;
  for (std::size_t p = 0; p < k; ++p) {
    std::vector<std::size_t> members(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                                     perm.begin() + static_cast<std::ptrdiff_t>(pos + sizes[p]));
    pos += sizes[p];
    std::sort(members.begin(), members.end());
    out[p].reserve(members.size());
    for (std::size_t idx : members) out[p].push_back(entries[idx]);
  }
  return out;
}

double avg_file_size_mb(std::span<const ImageEntry> entries) {
  if (entries.empty()) throw InvalidArgument("avg_file_size_mb: empty input");
  double total = 0.0;
  for (const auto& e : entries) total += static_cast<double>(e.byte_size);
  return total / static_cast<double>(entries.size()) / 1e6;
}

}  // namespace iqb::data
