#include "json_io.hpp"

#include <cmath>
#include <fstream>

#include "iqb/error.hpp"
#include "text_util.hpp"

namespace iqb::detail {
namespace {

namespace fs = std::filesystem;

std::string relative_to(const fs::path& p, const fs::path& base) {
  if (p.empty()) return {};
  const fs::path rel = fs::absolute(p).lexically_normal().lexically_proximate(
      fs::absolute(base).lexically_normal());
  return rel.generic_string();
}

fs::path resolve(const std::string& p, const fs::path& base) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

Json object_to_json(const data::AnnotatedObject& obj) {
  Json quad = Json::array();
  for (const auto& p : obj.quad) quad.push_back({p.x, p.y});
  return {{"quad", quad}, {"category", obj.category},
          {"difficult", obj.difficult}};
}

data::AnnotatedObject object_from_json(const Json& j) {
  data::AnnotatedObject obj;
  const auto& quad = j.at("quad");
  if (!quad.is_array() || quad.size() != 4) {
    throw ParseError("annotation quad must have 4 vertices");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    obj.quad[i] = {quad[i].at(0).get<double>(), quad[i].at(1).get<double>()};
  }
  obj.category = j.at("category").get<std::string>();
  obj.difficult = j.value("difficult", false);
  return obj;
}

}  // namespace

Json spec_to_json(const ModifierSpec& spec) {
  Json j = {{"kind", std::string(to_string(spec.kind))}, {"name", spec.name()}};
  switch (spec.kind) {
    case ModifierKind::kIdentity:
      break;
    case ModifierKind::kJpeg:
      j["quality"] = spec.quality;
      j["chroma"] = std::string(to_string(spec.chroma));
      break;
    case ModifierKind::kResize:
      j["scale"] = spec.scale;
      j["interpolation"] = std::string(to_string(spec.interpolation));
      break;
  }
  return j;
}

ModifierSpec spec_from_json(const Json& j) {
  ModifierSpec spec;
  spec.kind = parse_modifier_kind(j.at("kind").get<std::string>());
  if (spec.kind == ModifierKind::kJpeg) {
    spec.quality = j.at("quality").get<int>();
    if (j.contains("chroma")) {
      const auto& c = j.at("chroma");
      spec.chroma = parse_chroma(c.is_number() ? std::to_string(c.get<int>())
                                               : c.get<std::string>());
    }
  } else if (spec.kind == ModifierKind::kResize) {
    spec.scale = j.at("scale").get<double>();
    if (j.contains("interpolation")) {
      spec.interpolation =
          parse_interpolation(j.at("interpolation").get<std::string>());
    }
  }
  spec.validate();
  return spec;
}

Json dataset_to_json(const data::Dataset& dataset, const fs::path& base_dir) {
  Json partitions = Json::object();
  for (const auto& [name, entries] : dataset.partitions) {
    Json list = Json::array();
    for (const auto& e : entries) {
      Json je = {{"id", e.id},
                 {"path", relative_to(e.path, base_dir)},
                 {"width", e.width},
                 {"height", e.height},
                 {"byte_size", e.byte_size}};
      if (!e.annotation_path.empty()) {
        je["annotations"] = relative_to(e.annotation_path, base_dir);
      } else {
        Json objs = Json::array();
        for (const auto& obj : e.annotations) objs.push_back(object_to_json(obj));
        je["objects"] = objs;
      }
      list.push_back(std::move(je));
    }
    partitions[name] = std::move(list);
  }
  Json modifiers = Json::array();
  for (const auto& s : dataset.provenance) modifiers.push_back(spec_to_json(s));
  return {{"name", dataset.name},
          {"partitions", partitions},
          {"modifiers", modifiers}};
}

data::Dataset dataset_from_json(const Json& j, const fs::path& base_dir) {
  data::Dataset ds;
  try {
    ds.name = j.at("name").get<std::string>();
    for (const auto& [name, list] : j.at("partitions").items()) {
      data::Partition entries;
      for (const auto& je : list) {
        data::ImageEntry e;
        e.id = je.at("id").get<std::string>();
        e.path = resolve(je.at("path").get<std::string>(), base_dir);
        e.width = je.value("width", 0);
        e.height = je.value("height", 0);
        e.byte_size = je.value("byte_size", std::uint64_t{0});
        if (je.contains("annotations") && je.at("annotations").is_string()) {
          e.annotation_path =
              resolve(je.at("annotations").get<std::string>(), base_dir);
          e.annotations = data::load_annotations(e.annotation_path);
        } else if (je.contains("objects")) {
          for (const auto& jo : je.at("objects")) {
            e.annotations.push_back(object_from_json(jo));
          }
        }
        entries.push_back(std::move(e));
      }
      ds.partitions[name] = std::move(entries);
    }
    if (j.contains("modifiers")) {
      for (const auto& js : j.at("modifiers")) {
        ds.provenance.push_back(spec_from_json(js));
      }
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("dataset manifest: ") + e.what());
  }
  ds.validate();
  return ds;
}

Json parse_json_file(const fs::path& path) {
  const std::string text = read_text_file(path.string());
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const Json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

Json number_or_sentinel(double value) {
  if (std::isnan(value)) return nullptr;
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return value;
}

}  // namespace iqb::detail
