#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "anyres/model.hpp"

namespace anyres {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// Single-file container: magic, JSON manifest (format version, config echo,
// resolutions, backbone, content hash), then a tensor blob of records
// (name length, UTF-8 name, dtype code, rank, dims, little-endian row-major
// data). Round-trips are byte-identical.
void save_checkpoint(const Model<float>& model, const std::string& path,
                     const nlohmann::json& config_echo = nlohmann::json::object());

Model<float> load_checkpoint(const std::string& path);

nlohmann::json load_checkpoint_manifest(const std::string& path);

// FNV-1a hash of the canonical tensor blob; keys calibration caches and the
// manifest integrity check.
std::uint64_t model_content_hash(const Model<float>& model);

}  // namespace anyres
