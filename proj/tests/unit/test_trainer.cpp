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

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "capvit/contrastive.hpp"
#include "capvit/error.hpp"
#include "capvit/optim.hpp"
#include "capvit/trainer.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace capvit;

namespace {

ModelConfig tiny_model(Pipeline p = Pipeline::kV2Generative) {
  ModelConfig m;
  m.pipeline = p;
  m.encoder.image_size = 16;
  m.encoder.patch_size = 8;
  m.encoder.width = 16;
  m.encoder.depth = 1;
  m.encoder.heads = 2;
  m.decoder.width = 16;
  m.decoder.depth = 1;
  m.decoder.heads = 2;
  m.text.width = 16;
  m.text.depth = 1;
  m.text.heads = 2;
  m.text.embed_dim = 8;
  m.decoder.keep_ratio = 0.5;
  return m;
}

TrainConfig tiny_train(std::size_t steps) {
  TrainConfig t;
  t.stages = {StageConfig{16, steps, 4, 3e-3, 2}};
  t.corpus = {0, 8, synth::CaptionMode::kRecapV2, 0.0};
  t.seed = 5;
  return t;
}

std::vector<std::vector<float>> snapshot(const Model<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& p : m.params()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

std::vector<MetricsRow> train(const ModelConfig& mc, const TrainConfig& tc,
                              Model<float>* out = nullptr) {
  Dataset data(tc.corpus, synth::grammar_vocab(), mc.decoder.max_len);
  auto model = Model<float>::init(mc, tc.seed);
  Trainer t(tc, model, data);
  t.run();
  if (out) *out = model;
  return t.metrics();
}

ParamList<double> scalar_param(double value, bool decay) {
  return {{"p", Tensor<double>({1}, {value}, true), decay}};
}

}  // namespace

TEST_CASE("adamw hand-evaluated updates") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  auto p = scalar_param(1.0, true);
  AdamW<double> opt(cfg, p);
  p[0].tensor.grad()[0] = 1.0;
  opt.step(p, 0.1);
  CHECK(p[0].tensor.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(opt.steps() == 1);

  auto q = scalar_param(2.0, true);
  AdamW<double> frozen(AdamWConfig{}, q);
  q[0].tensor.grad()[0] = 0.5;
  frozen.step(q, 0.0);
  CHECK(q[0].tensor.data()[0] == 2.0);
  CHECK(frozen.first_moments()[0][0] == doctest::Approx(0.05));
  CHECK(frozen.second_moments()[0][0] == doctest::Approx(0.05 * 0.25));

  AdamWConfig wd;
  wd.weight_decay = 0.1;
  auto r = ParamList<double>{{"w", Tensor<double>({1}, {3.0}, true), true},
                             {"b", Tensor<double>({1}, {3.0}, true), false}};
  AdamW<double> decay(wd, r);
  r[0].tensor.grad()[0] = 0.0;
  r[1].tensor.grad()[0] = 0.0;
  decay.step(r, 0.5);
  CHECK(r[0].tensor.data()[0] == doctest::Approx(3.0 * (1 - 0.5 * 0.1)));
  CHECK(r[1].tensor.data()[0] == 3.0);
}

TEST_CASE("adamw refuses non-finite gradients") {
  auto p = scalar_param(1.0, true);
  AdamW<double> opt(AdamWConfig{}, p);
  p[0].tensor.grad()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(p, 0.1), NumericError);
  CHECK(p[0].tensor.data()[0] == 1.0);
  CHECK(opt.first_moments()[0][0] == 0.0);
  CHECK(opt.steps() == 0);
}

TEST_CASE("learning-rate schedule") {
  LrSchedule s{100, 10, 1e-3};
  CHECK(s.lr_at(0) == 0.0);
  CHECK(s.lr_at(5) == doctest::Approx(5e-4));
  CHECK(s.lr_at(10) == doctest::Approx(1e-3));
  CHECK(s.lr_at(100) == doctest::Approx(0.0));
  CHECK(s.lr_at(55) == doctest::Approx(5e-4));
  for (std::size_t k = 11; k <= 100; ++k) CHECK(s.lr_at(k) <= s.lr_at(k - 1));
}

TEST_CASE("gradient clipping bounds the global norm") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamList<double> ps;
    for (int i = 0; i < 3; ++i) {
      auto t = testing::random_tensor({4}, seed * 3 + i);
      auto g = testing::random_tensor({4}, seed * 3 + i + 100, 5.0, false);
      std::copy(g.data().begin(), g.data().end(), t.grad().begin());
      ps.push_back({"p", t});
    }
    const double before = global_grad_norm(ps);
    const double returned = clip_grad_norm(ps, 1.0);
    CHECK(returned == doctest::Approx(before));
    CHECK(global_grad_norm(ps) <= 1.0 + 1e-9);
    CHECK(clip_grad_norm(ps, 1e9) == doctest::Approx(global_grad_norm(ps)));
  }
}

TEST_CASE("stage parsing and validation") {
  StageConfig base;
  base.batch_size = 7;
  const auto st = parse_stages("32x500,64x100", base);
  REQUIRE(st.size() == 2);
  CHECK(st[0].resolution == 32);
  CHECK(st[1].steps == 100);
  CHECK(st[1].batch_size == 7);
  CHECK_THROWS_AS(parse_stages("32x", base), ConfigError);
  CHECK_THROWS_AS(parse_stages("", base), ConfigError);
  TrainConfig t;
  t.stages = parse_stages("64x10,32x10", base);
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t.stages = {};
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("batch indices are deterministic epoch shuffles") {
  const auto a = batch_indices(1, 0, 1, 4, 8);
  CHECK(a == batch_indices(1, 0, 1, 4, 8));
  auto b = batch_indices(1, 0, 2, 4, 8);
  std::vector<std::size_t> epoch(a);
  epoch.insert(epoch.end(), b.begin(), b.end());
  std::sort(epoch.begin(), epoch.end());
  for (std::size_t i = 0; i < 8; ++i) CHECK(epoch[i] == i);
  CHECK(batch_indices(2, 0, 1, 4, 8) != a);
}

TEST_CASE("training is deterministic and logs every step") {
  const auto a = train(tiny_model(), tiny_train(6));
  const auto b = train(tiny_model(), tiny_train(6));
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].step == i + 1);
    CHECK(a[i].loss == b[i].loss);
    CHECK(a[i].stage == 0);
    CHECK(a[i].kept_tokens == 2);
  }
  CHECK(a.back().lr == doctest::Approx(0.0));

  const auto dir = testing::scratch_dir("metrics");
  write_metrics_csv(dir / "m.csv", a);
  std::ifstream in(dir / "m.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,loss,lr,stage");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 6);
}

TEST_CASE("the v1 pipeline trains end to end") {
  const auto rows = train(tiny_model(Pipeline::kV1Contrastive), tiny_train(3));
  CHECK(rows.size() == 3);
  for (const auto& r : rows) CHECK(std::isfinite(r.loss));
  CHECK(rows[0].kept_tokens == 4);
}

TEST_CASE("a zero-step stage only resamples positions") {
  ModelConfig mc = tiny_model();
  TrainConfig tc = tiny_train(0);
  tc.stages = {StageConfig{16, 0, 4, 1e-3, 0}, StageConfig{32, 0, 4, 1e-3, 0}};
  Model<float> trained;
  const auto rows = train(mc, tc, &trained);
  CHECK(rows.empty());
  const auto fresh = Model<float>::init(mc, tc.seed);
  CHECK(trained.cfg.encoder.image_size == 32);
  const auto a = trained.params(), b = fresh.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CAPTURE(a[i].name);
    if (a[i].name == "encoder.pos") {
      CHECK(a[i].tensor.shape() == Shape{16, 16});
      const auto want = interpolate_pos(b[i].tensor, 4);
      CHECK(std::equal(want.data().begin(), want.data().end(), a[i].tensor.data().begin()));
    } else {
      CHECK(std::equal(b[i].tensor.data().begin(), b[i].tensor.data().end(),
                       a[i].tensor.data().begin()));
    }
  }
}

TEST_CASE("a non-finite loss aborts with the last good parameters") {
  ModelConfig mc = tiny_model();
  TrainConfig tc = tiny_train(20);
  tc.stages[0].peak_lr = 1e30;
  tc.stages[0].warmup = 0;
  Dataset data(tc.corpus, synth::grammar_vocab(), mc.decoder.max_len);
  auto model = Model<float>::init(mc, tc.seed);
  Trainer t(tc, model, data);
  std::vector<std::vector<float>> last = snapshot(model);
  t.set_callback([&](const MetricsRow&) { last = snapshot(model); });
  CHECK_THROWS_AS(t.run(), NumericError);
  CHECK(t.global_step() < 20);
  CHECK(snapshot(model) == last);
}

TEST_CASE("v2 at keep 1 matches v1 with an empty web caption at init") {
  ModelConfig v2 = tiny_model();
  v2.decoder.keep_ratio = 1.0;
  ModelConfig v1 = tiny_model(Pipeline::kV1Contrastive);
  const auto m2 = Model<double>::init(v2, 3);
  const auto m1 = Model<double>::init(v1, 3);
  TrainConfig tc = tiny_train(1);
  Dataset data(tc.corpus, synth::grammar_vocab(), v2.decoder.max_len);
  const auto batch = data.batch<double>({0, 1, 2, 3}, v2.encoder);
  Graph<double> g(false);
  const double a = caption_only_loss(g, m2, batch, 1.0, MaskKey{1, 0, 1}).item();
  const double b = caption_only_loss(g, m2, batch, 1.0, MaskKey{9, 0, 4}).item();
  CHECK(a == b);
  const Tensor<double> visual = encode(g, batch.patches, batch.size, m1.encoder, v1.encoder);
  const std::vector<std::vector<int>> empty(batch.size, {synth::Vocab::kBos, synth::Vocab::kEos});
  const double c = v1_caption_loss(g, m1.decoder, v1.decoder, m1.v1->web_seg, visual,
                                   batch.size, empty, batch.target).item();
  CHECK(std::abs(a - c) < 1e-12);
}

TEST_CASE("an overfit run lowers the smoothed loss") {
  TrainConfig tc = tiny_train(120);
  tc.corpus = {0, 4, synth::CaptionMode::kRecap, 0.0};
  const auto rows = train(tiny_model(), tc);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    head += rows[i].loss;
    tail += rows[rows.size() - 50 + i].loss;
  }
  CHECK(tail < head);
}
