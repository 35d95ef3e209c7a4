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
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "capvit/data_synth.hpp"
#include "capvit/model.hpp"
#include "capvit/optim.hpp"

namespace capvit {

// One curriculum stage: resolution, length, batch size and schedule.
struct StageConfig {
  std::size_t resolution = 32;
  std::size_t steps = 500;
  std::size_t batch_size = 16;
  double peak_lr = 1e-3;
  std::size_t warmup = 50;
};

struct TrainConfig {
  std::vector<StageConfig> stages{StageConfig{}};
  AdamWConfig optim;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  synth::CorpusSpec corpus{0, 64, synth::CaptionMode::kRecapV2, 0.0};

  // Stages must exist, be ordered by non-decreasing resolution and have
  // positive batch sizes; a stage may have zero steps.
  void validate() const;
  std::size_t total_steps() const;
};

// Parses "32x500,64x100" into stages (resolution x steps); other fields are
// copied from `base`.
std::vector<StageConfig> parse_stages(const std::string& text,
                                      const StageConfig& base);

// A tokenized corpus with per-resolution image caches.
class Dataset {
 public:
  struct Example {
    synth::Scene scene;
    std::vector<int> synthetic;  // BOS .. EOS
    std::vector<int> web;
    std::vector<int> target;  // what a caption-only model learns
  };

  Dataset(const synth::CorpusSpec& spec, const synth::Vocab& vocab,
          std::size_t max_len);

  std::size_t size() const { return examples_.size(); }
  const Example& example(std::size_t i) const { return examples_.at(i); }
  const synth::CorpusSpec& spec() const { return spec_; }
  const synth::Vocab& vocab() const { return vocab_; }

  // Rendered once per resolution and cached.
  const std::vector<synth::Image>& images(std::size_t resolution) const;

  // Batch of examples `idx` at the encoder's resolution. With
  // clean_target the decoder target is the synthetic caption even for
  // alt_text corpora.
  template <typename T>
  Batch<T> batch(const std::vector<std::size_t>& idx, const EncoderConfig& enc,
                 bool clean_target = false) const;

 private:
  synth::CorpusSpec spec_;
  synth::Vocab vocab_;
  std::vector<Example> examples_;
  mutable std::map<std::size_t, std::vector<synth::Image>> cache_;
};

struct MetricsRow {
  std::size_t step = 0;  // global, 1-based
  double loss = 0.0;
  double lr = 0.0;
  std::size_t stage = 0;
  std::size_t kept_tokens = 0;
};

// Writes "step,loss,lr,stage" rows.
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsRow>& rows);

// Dataset indices of update `step` (1-based) within `stage`: consecutive
// slices of per-epoch shuffles keyed by (seed, stage, epoch).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t stage,
                                       std::size_t step, std::size_t batch_size,
                                       std::size_t dataset_size);

// Serial training loop. A fresh optimizer and schedule start every stage;
// the positional table is resampled when the stage changes resolution.
class Trainer {
 public:
  using StepCallback = std::function<void(const MetricsRow&)>;

  Trainer(TrainConfig cfg, Model<float>& model, const Dataset& data);

  // Runs one stage. On a non-finite loss or gradient the parameters keep
  // their last good values and NumericError is thrown.
  void run_stage(std::size_t stage);
  // Runs every stage in order.
  void run();

  void set_callback(StepCallback cb) { callback_ = std::move(cb); }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  std::size_t global_step() const { return global_step_; }
  const AdamW<float>* optimizer() const { return optim_.get(); }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  Model<float>& model_;
  const Dataset& data_;
  std::unique_ptr<AdamW<float>> optim_;
  std::vector<MetricsRow> metrics_;
  std::size_t global_step_ = 0;
  StepCallback callback_;
};

}  // namespace capvit
