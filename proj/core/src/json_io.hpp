#pragma once

#include <filesystem>

#include "iqb/data.hpp"
#include "iqb/modifier_spec.hpp"
#include "json.hpp"

namespace iqb::detail {

using Json = nlohmann::json;

Json spec_to_json(const ModifierSpec& spec);
ModifierSpec spec_from_json(const Json& j);

// Paths are written relative to `base_dir` where possible.
Json dataset_to_json(const data::Dataset& dataset,
                     const std::filesystem::path& base_dir);
data::Dataset dataset_from_json(const Json& j,
                                const std::filesystem::path& base_dir);

Json parse_json_file(const std::filesystem::path& path);
// Writes to a temporary sibling and renames over `path`.
void write_json_file(const std::filesystem::path& path, const Json& j);

// Non-finite values become the strings "inf", "-inf" or null for NaN.
Json number_or_sentinel(double value);

}  // namespace iqb::detail
