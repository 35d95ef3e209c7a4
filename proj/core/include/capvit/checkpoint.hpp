// Copyright 2026 The capvit Authors. All Rights Reserved.
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
#include <string>
#include <vector>

#include "capvit/model.hpp"
#include "capvit/optim.hpp"

// Checkpoint directory:
//   manifest.json  format_version, configs {model, train}, step, and an
//                  array index of {name, shape, dtype, file, byte_offset}
//   weights.bin    little-endian float32 arrays in manifest order, each
//                  starting on a 64-byte boundary
// Optimizer moments are stored as arrays named optim.m.<param> and
// optim.v.<param>.
namespace capvit {

inline constexpr int kCheckpointFormat = 1;
inline constexpr std::size_t kCheckpointAlign = 64;

struct LoadedCheckpoint {
  Model<float> model;
  std::uint64_t step = 0;
  std::string train_config_json = "{}";
  bool has_optimizer = false;
  std::uint64_t optimizer_steps = 0;
  std::vector<std::vector<float>> first_moments, second_moments;

  // Copies the stored moments into `opt`; throws CheckpointError when none
  // were saved or the layout differs.
  void restore_optimizer(AdamW<float>& opt) const;
};

void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model,
                     const AdamW<float>* optimizer, std::uint64_t step,
                     const std::string& train_config_json = "{}");

// Throws CheckpointError naming the offending array on a missing, misshapen,
// unknown or truncated array, and on a corrupt manifest.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace capvit
