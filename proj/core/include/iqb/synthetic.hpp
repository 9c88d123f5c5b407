#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "iqb/data.hpp"
#include "iqb/image.hpp"

namespace iqb::synthetic {

// Deterministic aerial-like scene: smooth terrain, fractal texture, roads,
// rotated rectangular objects and sensor noise.
struct Scene {
  Image8 image;
  std::vector<data::AnnotatedObject> objects;
};

struct SceneOptions {
  int width = 256;
  int height = 256;
  int channels = 3;
  int object_count = 12;
  double noise_sigma = 2.0;
};

Scene make_scene(std::uint64_t seed, const SceneOptions& options = {});

// Vertical step edge at x = edge_x, point-sampled from a Gaussian-blurred
// ideal step: low + (high - low) * 0.5 * (1 + erf((x - edge_x)/(sigma*sqrt2))).
GrayImage blurred_edge(int width, int height, double edge_x, double sigma,
                       double low, double high, bool vertical = true);

// Constant `mean` plus seeded white Gaussian noise.
GrayImage flat_noise(int width, int height, double mean, double sigma,
                     std::uint64_t seed);

struct CorpusOptions {
  std::string name = "synthetic";
  int images_per_partition = 4;
  std::vector<std::string> partitions = {"train", "val", "test"};
  SceneOptions scene;
  std::uint64_t seed = 1;
};

// Writes "<root>/<partition>/images/<id>.png" and labelTxt files, plus
// <root>/manifest.json, and returns the dataset.
data::Dataset write_corpus(const std::filesystem::path& root,
                           const CorpusOptions& options = {});

}  // namespace iqb::synthetic
