#include "iqb/modifiers.hpp"

#include <algorithm>
#include <filesystem>
#include <mutex>
#include <optional>
#include <tuple>

#include <spdlog/spdlog.h>

#include "iqb/error.hpp"
#include "iqb/image_io.hpp"
#include "iqb/jpeg.hpp"
#include "iqb/resize.hpp"
#include "json_io.hpp"
#include "parallel.hpp"

namespace iqb::modifiers {
namespace {

namespace fs = std::filesystem;
using data::AnnotatedObject;
using data::ImageEntry;

Image8 decode_for_coding(std::span<const std::uint8_t> bytes) {
  Image8 img = decode_image(bytes);
  if (img.channels() == 2 || img.channels() == 4) {
    spdlog::warn("{}-band image: keeping the first {} band(s)", img.channels(),
                 img.channels() == 2 ? 1 : 3);
    img = drop_extra_bands(img);
  }
  return img;
}

bool keeps_geometry(const ModifierSpec& spec) {
  return spec.kind != ModifierKind::kResize;
}

std::vector<AnnotatedObject> scale_annotations(
    std::span<const AnnotatedObject> objects, double sx, double sy) {
  std::vector<AnnotatedObject> out(objects.begin(), objects.end());
  for (auto& obj : out) {
    for (auto& p : obj.quad) {
      p.x *= sx;
      p.y *= sy;
    }
  }
  return out;
}

struct Task {
  std::string partition;
  std::size_t index = 0;
};

}  // namespace

EncodedImage transform_image(std::span<const std::uint8_t> source_bytes,
                             const std::string& source_extension,
                             const ModifierSpec& spec) {
  EncodedImage out;
  switch (spec.kind) {
    case ModifierKind::kIdentity: {
      const ImageInfo info = probe_image(source_bytes);
      out.bytes.assign(source_bytes.begin(), source_bytes.end());
      out.extension = source_extension;
      out.width = info.width;
      out.height = info.height;
      break;
    }
    case ModifierKind::kJpeg: {
      const Image8 img = decode_for_coding(source_bytes);
      out.bytes = jpeg::encode(img, {spec.quality, spec.chroma});
      out.extension = ".jpg";
      out.width = img.width();
      out.height = img.height();
      break;
    }
    case ModifierKind::kResize: {
      const Image8 img = decode_for_coding(source_bytes);
      const Image8 small = resize_interpolate(img, spec.scale, spec.interpolation);
      out.bytes = encode_png(small);
      out.extension = ".png";
      out.width = small.width();
      out.height = small.height();
      break;
    }
  }
  return out;
}

ModifiedDataset apply_modifier(const data::Dataset& dataset,
                               const ModifierSpec& spec,
                               const ApplyOptions& options) {
  spec.validate();
  if (options.output_root.empty()) {
    throw InvalidArgument("apply_modifier: output_root is empty");
  }
  const fs::path root = options.output_root / spec.name();
  fs::create_directories(root);

  std::vector<Task> tasks;
  std::map<std::string, std::vector<std::optional<ImageEntry>>> emitted;
  for (const auto& [pname, entries] : dataset.partitions) {
    emitted[pname].resize(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) tasks.push_back({pname, i});
  }

  std::vector<ImageFailure> failures;
  std::mutex failure_mutex;

  detail::parallel_for(tasks.size(), options.workers, [&](std::size_t t) {
    const Task& task = tasks[t];
    const ImageEntry& src = dataset.partitions.at(task.partition)[task.index];
    try {
      const auto bytes = read_file_bytes(src.path);
      const EncodedImage enc =
          transform_image(bytes, src.path.extension().string(), spec);
      const fs::path dir = root / task.partition;
      const fs::path image_path = dir / (src.id + enc.extension);
      write_file_bytes(image_path, enc.bytes);

      ImageEntry out;
      out.id = src.id;
      out.path = image_path;
      out.width = enc.width;
      out.height = enc.height;
      out.byte_size = fs::file_size(image_path);
      out.annotation_path = dir / (src.id + ".txt");
      if (keeps_geometry(spec)) {
        out.annotations = src.annotations;
        if (!src.annotation_path.empty() && fs::exists(src.annotation_path)) {
          fs::copy_file(src.annotation_path, out.annotation_path,
                        fs::copy_options::overwrite_existing);
        } else {
          const auto text = data::serialize_obb_annotations(out.annotations);
          write_file_bytes(out.annotation_path,
                           {reinterpret_cast<const std::uint8_t*>(text.data()),
                            text.size()});
        }
      } else {
        const double sx = static_cast<double>(enc.width) / src.width;
        const double sy = static_cast<double>(enc.height) / src.height;
        out.annotations = scale_annotations(src.annotations, sx, sy);
        const auto text = data::serialize_obb_annotations(out.annotations);
        write_file_bytes(out.annotation_path,
                         {reinterpret_cast<const std::uint8_t*>(text.data()),
                          text.size()});
      }
      emitted.at(task.partition)[task.index] = std::move(out);
    } catch (const std::exception& e) {
      std::lock_guard lock(failure_mutex);
      failures.push_back({task.partition, src.id, e.what()});
    }
  });

  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end(),
              [](const ImageFailure& a, const ImageFailure& b) {
                return std::tie(a.partition, a.image_id) <
                       std::tie(b.partition, b.image_id);
              });
    if (options.strict) {
      std::string msg = spec.name() + ": " + std::to_string(failures.size()) +
                        " image(s) failed; first: " + failures.front().image_id +
                        ": " + failures.front().message;
      throw Error(msg);
    }
    for (const auto& f : failures) {
      spdlog::warn("{}: dropping {}/{}: {}", spec.name(), f.partition,
                   f.image_id, f.message);
    }
  }

  ModifiedDataset result;
  result.base_name = dataset.name;
  result.spec = spec;
  result.output_root = root;
  result.failures = std::move(failures);
  result.dataset.name = dataset.name + "@" + spec.name();
  result.dataset.provenance = dataset.provenance;
  result.dataset.provenance.push_back(spec);
  std::vector<ImageEntry> all;
  for (auto& [pname, slots] : emitted) {
    auto& part = result.dataset.partitions[pname];
    for (auto& slot : slots) {
      if (slot) part.push_back(std::move(*slot));
    }
    if (!part.empty()) {
      result.partition_avg_size_mb[pname] = data::avg_file_size_mb(part);
      all.insert(all.end(), part.begin(), part.end());
    }
  }
  if (all.empty()) throw Error(spec.name() + ": no images were emitted");
  result.avg_size_mb = data::avg_file_size_mb(all);

  auto j = detail::dataset_to_json(result.dataset, root);
  j["base"] = result.base_name;
  j["spec"] = detail::spec_to_json(spec);
  j["avg_size_mb"] = result.avg_size_mb;
  j["partition_avg_size_mb"] = result.partition_avg_size_mb;
  auto jf = detail::Json::array();
  for (const auto& f : result.failures) {
    jf.push_back({{"partition", f.partition},
                  {"image_id", f.image_id},
                  {"message", f.message}});
  }
  j["failures"] = jf;
  detail::write_json_file(root / "manifest.json", j);
  return result;
}

std::vector<ModifiedDataset> sweep(const data::Dataset& dataset,
                                   std::span<const int> qualities,
                                   const ApplyOptions& options) {
  if (qualities.empty()) throw InvalidArgument("sweep: no quality levels");
  for (int q : qualities) ModifierSpec::jpeg(q).validate();
  std::vector<ModifiedDataset> out;
  out.reserve(qualities.size());
  for (int q : qualities) {
    out.push_back(apply_modifier(dataset, ModifierSpec::jpeg(q), options));
  }
  return out;
}

ModifiedDataset load_modified_dataset(const fs::path& variant_root) {
  const auto j = detail::parse_json_file(variant_root / "manifest.json");
  ModifiedDataset out;
  out.dataset = detail::dataset_from_json(j, fs::absolute(variant_root));
  try {
    out.base_name = j.at("base").get<std::string>();
    out.spec = detail::spec_from_json(j.at("spec"));
    out.avg_size_mb = j.at("avg_size_mb").get<double>();
    out.partition_avg_size_mb =
        j.at("partition_avg_size_mb").get<std::map<std::string, double>>();
    for (const auto& f : j.value("failures", detail::Json::array())) {
      out.failures.push_back({f.at("partition").get<std::string>(),
                              f.at("image_id").get<std::string>(),
                              f.at("message").get<std::string>()});
    }
  } catch (const detail::Json::exception& e) {
    throw ParseError("variant manifest: " + std::string(e.what()));
  }
  out.output_root = fs::absolute(variant_root);
  return out;
}

}  // namespace iqb::modifiers
