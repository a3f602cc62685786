// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "s2kg/json.hpp"
#include "s2kg/nn/graph.hpp"

namespace s2kg::nn {

inline constexpr char kCheckpointMagic[8] = {'S', '2', 'K', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Json metadata;
  ParameterSet<float> params;
};

// Layout: magic[8], u32 version, u64 metadata length, metadata JSON,
// u32 parameter count, then per parameter {u32 name length, name, u64 rows,
// u64 cols}, then every payload as little-endian float32 in index order.
std::string encode_checkpoint(const ParameterSet<float>& params, const Json& metadata);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& where = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params, const Json& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace s2kg::nn
