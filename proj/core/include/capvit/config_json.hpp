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

#include <string>

#include "capvit/model.hpp"
#include "capvit/trainer.hpp"

// JSON forms of the model and training configs. Parsing starts from the
// defaults, overrides the keys present and rejects unknown keys with a
// ConfigError naming the key path.
namespace capvit {

std::string to_json(const ModelConfig& cfg);
std::string to_json(const TrainConfig& cfg);

ModelConfig model_config_from_json(const std::string& text,
                                   const ModelConfig& base = {});
TrainConfig train_config_from_json(const std::string& text,
                                   const TrainConfig& base = {});

}  // namespace capvit
