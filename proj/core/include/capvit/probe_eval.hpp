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

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "capvit/model.hpp"
#include "capvit/trainer.hpp"

// Evaluation of a trained model: caption exact match and perplexity on a
// corpus, and a frozen-encoder linear probe on scene attributes.
namespace capvit::eval {

// Fraction of examples whose greedy decode (all visual tokens kept) equals
// the synthetic caption token for token. Throws DegenerateBatchError on an
// empty dataset.
template <typename T>
double exact_match(const Model<T>& model, const Dataset& data,
                   std::size_t batch_size = 64);

// exp of the token-level mean caption NLL on synthetic captions, keep
// ratio 1.
template <typename T>
double perplexity(const Model<T>& model, const Dataset& data,
                  std::size_t batch_size = 64);

enum class ProbeLabel : std::uint8_t { kShape, kColor };

ProbeLabel parse_probe_label(std::string_view name);
std::string_view probe_label_name(ProbeLabel label);

// The dominant object is the first object in cell order.
struct ProbeTask {
  ProbeLabel label = ProbeLabel::kShape;
  std::uint64_t train_begin = 1'000'000;
  std::size_t train_count = 400;
  std::uint64_t test_begin = 2'000'000;
  std::size_t test_count = 400;

  std::size_t classes() const;
  int label_of(const synth::Scene& scene) const;
};

struct ProbeSplit {
  std::vector<std::uint64_t> seeds;
  std::vector<int> labels;
};

// Scans seeds upward from `begin`, accepting a scene while its class is
// below count / classes, so every class gets the same quota. Throws
// ConfigError when the scan would reach `limit`.
ProbeSplit balanced_split(const ProbeTask& task, std::uint64_t begin,
                          std::size_t count, std::uint64_t limit);

// Mean-pooled final encoder tokens, one row per image.
template <typename T>
std::vector<std::vector<double>> encoder_features(
    const Model<T>& model, const std::vector<synth::Image>& images,
    std::size_t batch_size = 64);

struct ProbeOptions {
  double l2 = 0.0;
  std::size_t epochs = 300;
  double lr = 0.5;
};

// Multinomial logistic regression on z-scored features (train statistics),
// trained by full-batch gradient descent from zero weights; returns test
// accuracy. Throws ConfigError when the training labels hold one class.
double linear_probe(const std::vector<std::vector<double>>& train_x,
                    const std::vector<int>& train_y,
                    const std::vector<std::vector<double>>& test_x,
                    const std::vector<int>& test_y, std::size_t classes,
                    const ProbeOptions& options = {});

// Renders both splits at the model's resolution and probes its encoder.
template <typename T>
double probe_accuracy(const Model<T>& model, const ProbeTask& task,
                      const ProbeOptions& options = {});

}  // namespace capvit::eval
