#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "climatellm/model.hpp"
#include "climatellm/train.hpp"

namespace climatellm {

// Checkpoint file layout (all integers little-endian):
//   8 bytes   magic "CLLMCKPT"
//   uint32    format version (1)
//   uint32    header length H, then H bytes of UTF-8 JSON
//             {"model": ModelConfig, "meta": {...}}
//   uint32    block count, then per block:
//     uint32 name length, name bytes, uint32 rows, uint32 cols,
//     uint32 dtype (1 = float32, 2 = float64), rows*cols values.
// Parameter blocks are float32 and keep the model's names. Optimizer
// moments, when present, are float64 blocks named "adam.m/<name>" and
// "adam.v/<name>"; the step count lives in meta.adam_step.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Model<float> model;
    std::optional<AdamState> adam;
    nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const AdamState* adam, const nlohmann::json& meta);

/// Throws CorruptData on bad magic, version, truncation or block mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64-bit hash of a byte string, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

/// FNV-1a hash of a file's contents.
std::string file_hash(const std::filesystem::path& path);

}  // namespace climatellm
