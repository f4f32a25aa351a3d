#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sidecar/model.hpp"

namespace sidecar {

inline constexpr std::uint32_t kModelFormatVersion = 1;

nlohmann::json config_to_json(const ModelConfig& config);
/// Missing fields take the desk-scale defaults; unknown fields are rejected.
ModelConfig config_from_json(const nlohmann::json& j);
ModelConfig load_config(const std::filesystem::path& path);

/// Layout (all integers little-endian):
///
///   "SIDECARM"             8-byte magic
///   u32 format_version
///   u64 checksum           FNV-1a 64 over every byte after this field
///   u64 header_len, header UTF-8 JSON {config, trainable_mask, init_records}
///   u32 block_count
///   per block: u32 name_len, name, u32 rows, u32 cols, rows*cols f64
///
/// Blocks are the extension parameters in trainable_parameters order (all
/// of them, regardless of mask) followed by the backbone blocks.
std::vector<std::uint8_t> serialize_model(const HybridModel& model);
HybridModel deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const HybridModel& model, const std::filesystem::path& path);
/// Throws VersionError on a different format version, CorruptionError on a
/// bad magic, checksum, or truncation.
HybridModel load_model(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

}  // namespace sidecar
