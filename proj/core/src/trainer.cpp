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

#include "capvit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "capvit/error.hpp"

namespace capvit {

void TrainConfig::validate() const {
  if (stages.empty()) throw ConfigError("train: at least one stage is required");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (s.batch_size == 0 || s.resolution == 0) {
      throw ConfigError("train: stage " + std::to_string(i) +
                        " needs a positive batch size and resolution");
    }
    if (!(s.peak_lr >= 0.0) || !std::isfinite(s.peak_lr)) {
      throw ConfigError("train: stage " + std::to_string(i) +
                        " has an invalid peak lr");
    }
    if (i > 0 && s.resolution < stages[i - 1].resolution) {
      throw ConfigError("train: stages must not decrease in resolution");
    }
  }
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
  if (corpus.seed_end <= corpus.seed_begin) {
    throw ConfigError("train: corpus seed range is empty");
  }
  if (!(corpus.noise >= 0.0 && corpus.noise <= 1.0)) {
    throw ConfigError("train: corpus noise must lie in [0, 1]");
  }
}

std::size_t TrainConfig::total_steps() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.steps;
  return n;
}

std::vector<StageConfig> parse_stages(const std::string& text,
                                      const StageConfig& base) {
  std::vector<StageConfig> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    std::size_t res = 0, steps = 0;
    try {
      if (x == std::string::npos) throw std::invalid_argument(item);
      std::size_t used = 0;
      res = std::stoul(item.substr(0, x), &used);
      if (used != x) throw std::invalid_argument(item);
      const std::string tail = item.substr(x + 1);
      steps = std::stoul(tail, &used);
      if (used != tail.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("stage '" + item +
                        "' is not of the form <resolution>x<steps>");
    }
    StageConfig s = base;
    s.resolution = res;
    s.steps = steps;
    out.push_back(s);
  }
  if (out.empty()) throw ConfigError("no stages given");
  return out;
}

Dataset::Dataset(const synth::CorpusSpec& spec, const synth::Vocab& vocab,
                 std::size_t max_len)
    : spec_(spec), vocab_(vocab) {
  for (std::uint64_t seed = spec.seed_begin; seed < spec.seed_end; ++seed) {
    const auto rec = synth::make_record(seed, spec);
    Example e;
    e.scene = rec.scene;
    e.synthetic = synth::strip_padding(
        synth::tokenize(rec.captions.synthetic, vocab, max_len));
    e.web = synth::strip_padding(synth::tokenize(rec.captions.web, vocab, max_len));
    e.target = synth::strip_padding(
        synth::tokenize(rec.captions.training_target(), vocab, max_len));
    examples_.push_back(std::move(e));
  }
}

const std::vector<synth::Image>& Dataset::images(std::size_t resolution) const {
  auto it = cache_.find(resolution);
  if (it != cache_.end()) return it->second;
  std::vector<synth::Image> imgs;
  imgs.reserve(examples_.size());
  for (const auto& e : examples_) {
    imgs.push_back(synth::render(e.scene, resolution, resolution));
  }
  return cache_.emplace(resolution, std::move(imgs)).first->second;
}

template <typename T>
Batch<T> Dataset::batch(const std::vector<std::size_t>& idx,
                        const EncoderConfig& enc, bool clean_target) const {
  const auto& imgs = images(enc.image_size);
  std::vector<const synth::Image*> ptrs;
  Batch<T> b;
  b.size = idx.size();
  for (std::size_t i : idx) {
    ptrs.push_back(&imgs.at(i));
    const auto& e = examples_[i];
    b.target.push_back(clean_target ? e.synthetic : e.target);
    b.web.push_back(e.web);
    b.indices.push_back(i);
  }
  b.patches = patchify_batch<T>(ptrs, enc);
  return b;
}

template Batch<float> Dataset::batch(const std::vector<std::size_t>&,
                                     const EncoderConfig&, bool) const;
template Batch<double> Dataset::batch(const std::vector<std::size_t>&,
                                      const EncoderConfig&, bool) const;

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,loss,lr,stage\n";
  out.precision(9);
  for (const auto& r : rows) {
    out << r.step << ',' << r.loss << ',' << r.lr << ',' << r.stage << '\n';
  }
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t stage,
                                       std::size_t step, std::size_t batch_size,
                                       std::size_t dataset_size) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::size_t cached_epoch = SIZE_MAX;
  std::vector<std::size_t> perm(dataset_size);
  const std::size_t first = (step - 1) * batch_size;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t pos = first + i;
    const std::size_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      SplitMix64 rng(stream_key(seed, {role(RngRole::kShuffle), stage, epoch}));
      for (std::size_t j = dataset_size; j > 1; --j) {
        std::swap(perm[j - 1], perm[rng.below(j)]);
      }
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

Trainer::Trainer(TrainConfig cfg, Model<float>& model, const Dataset& data)
    : cfg_(std::move(cfg)), model_(model), data_(data) {
  cfg_.validate();
}

void Trainer::run_stage(std::size_t stage) {
  const StageConfig& sc = cfg_.stages.at(stage);
  model_.set_resolution(sc.resolution);
  ParamList<float> params = model_.params();
  optim_ = std::make_unique<AdamW<float>>(cfg_.optim, params);
  const LrSchedule sched{sc.steps, std::min(sc.warmup, sc.steps), sc.peak_lr};

  for (std::size_t k = 1; k <= sc.steps; ++k) {
    const auto idx =
        batch_indices(cfg_.seed, stage, k, sc.batch_size, data_.size());
    const Batch<float> batch = data_.batch<float>(idx, model_.cfg.encoder);
    for (auto& p : params) p.tensor.zero_grad();

    Graph<float> g;
    StepLoss<float> out =
        training_loss(g, model_, batch, MaskKey{cfg_.seed, stage, k});
    const double loss = out.loss.item();
    if (!std::isfinite(loss)) {
      throw NumericError("training loss became non-finite at step " +
                         std::to_string(global_step_ + 1));
    }
    g.backward(out.loss);
    const double norm = clip_grad_norm(params, cfg_.clip_norm);
    if (!std::isfinite(norm)) {
      throw NumericError("non-finite gradient norm at step " +
                         std::to_string(global_step_ + 1));
    }
    const double lr = sched.lr_at(k);
    optim_->step(params, lr);
    ++global_step_;
    MetricsRow row{global_step_, loss, lr, stage, out.kept_tokens};
    metrics_.push_back(row);
    if (callback_) callback_(row);
  }
}

void Trainer::run() {
  for (std::size_t s = 0; s < cfg_.stages.size(); ++s) run_stage(s);
}

}  // namespace capvit
