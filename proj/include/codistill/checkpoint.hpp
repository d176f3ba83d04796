// Copyright 2026 The Codistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "codistill/nn.hpp"

namespace codistill::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "CDSM" | u32 version | 8 x u32 architecture fields | u32 tensor count |
//   per tensor: u32 name length, name bytes, u32 rank, u64 extents, f64 data.
std::vector<std::uint8_t> encode_checkpoint(const ModelState& model);
ModelState decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace codistill::nn
