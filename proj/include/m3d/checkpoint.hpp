// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (all integers little-endian):
//
//   "M3DT" | u32 version | u32 header_len | header_len bytes of key=value text
//   u32 entry_count
//   per entry, in name order:
//     u32 name_len | UTF-8 name | u32 rank | rank x u64 dims | f32 payload
//
// The header block carries a model configuration; it may be empty.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "m3d/param_store.hpp"

namespace m3d {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string header;
  ParamStore params;
};

std::string encode_checkpoint(const ParamStore& params, std::string_view header = {});
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& context = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, std::string_view header = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace m3d
