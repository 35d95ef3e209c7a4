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

#include "capvit/probe_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "capvit/error.hpp"

namespace capvit::eval {

template <typename T>
double exact_match(const Model<T>& model, const Dataset& data,
                   std::size_t batch_size) {
  if (data.size() == 0) {
    throw DegenerateBatchError("exact_match: empty dataset");
  }
  std::size_t hits = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) {
      idx.push_back(i);
    }
    const Batch<T> b = data.batch<T>(idx, model.cfg.encoder, true);
    Graph<T> g(/*recording=*/false);
    const Tensor<T> visual =
        encode(g, b.patches, b.size, model.encoder, model.cfg.encoder);
    const auto decoded =
        greedy_decode(model.decoder, model.cfg.decoder, visual, b.size, 1.0);
    for (std::size_t i = 0; i < b.size; ++i) {
      hits += decoded[i] == b.target[i];
    }
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

template <typename T>
double perplexity(const Model<T>& model, const Dataset& data,
                  std::size_t batch_size) {
  if (data.size() == 0) {
    throw DegenerateBatchError("perplexity: empty dataset");
  }
  double nll = 0.0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) {
      idx.push_back(i);
    }
    const Batch<T> b = data.batch<T>(idx, model.cfg.encoder, true);
    Graph<T> g(/*recording=*/false);
    const double mean =
        static_cast<double>(caption_only_loss(g, model, b, 1.0, MaskKey{}).item());
    std::size_t count = 0;
    for (const auto& c : b.target) count += c.size() - 1;
    nll += mean * static_cast<double>(count);
    tokens += count;
  }
  return std::exp(nll / static_cast<double>(tokens));
}

ProbeLabel parse_probe_label(std::string_view name) {
  if (name == "shape") return ProbeLabel::kShape;
  if (name == "color") return ProbeLabel::kColor;
  throw ConfigError("unknown probe task '" + std::string(name) +
                    "' (valid: shape, color)");
}

std::string_view probe_label_name(ProbeLabel label) {
  return label == ProbeLabel::kShape ? "shape" : "color";
}

std::size_t ProbeTask::classes() const {
  return label == ProbeLabel::kShape ? synth::kNumShapes : synth::kNumColors;
}

int ProbeTask::label_of(const synth::Scene& scene) const {
  const auto& o = scene.objects.front();
  return label == ProbeLabel::kShape ? static_cast<int>(o.shape)
                                     : static_cast<int>(o.color);
}

ProbeSplit balanced_split(const ProbeTask& task, std::uint64_t begin,
                          std::size_t count, std::uint64_t limit) {
  const std::size_t k = task.classes();
  if (count < k) {
    throw ConfigError("probe split of " + std::to_string(count) +
                      " examples cannot cover " + std::to_string(k) +
                      " classes");
  }
  // The first count % k classes take one extra example.
  std::vector<std::size_t> quota(k, count / k), have(k, 0);
  for (std::size_t c = 0; c < count % k; ++c) ++quota[c];
  ProbeSplit split;
  for (std::uint64_t seed = begin; split.seeds.size() < count; ++seed) {
    if (seed >= limit) {
      throw ConfigError("probe split starting at " + std::to_string(begin) +
                        " overlaps the next split");
    }
    const int y = task.label_of(synth::generate_scene(seed));
    if (have[y] >= quota[y]) continue;
    ++have[y];
    split.seeds.push_back(seed);
    split.labels.push_back(y);
  }
  return split;
}

template <typename T>
std::vector<std::vector<double>> encoder_features(
    const Model<T>& model, const std::vector<synth::Image>& images,
    std::size_t batch_size) {
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    std::vector<const synth::Image*> ptrs;
    for (std::size_t i = start; i < std::min(images.size(), start + batch_size);
         ++i) {
      ptrs.push_back(&images[i]);
    }
    Graph<T> g(/*recording=*/false);
    const Tensor<T> patches = patchify_batch<T>(ptrs, model.cfg.encoder);
    const Tensor<T> pooled = ops::mean_pool(
        g, encode(g, patches, ptrs.size(), model.encoder, model.cfg.encoder),
        ptrs.size());
    const std::size_t d = pooled.cols();
    for (std::size_t r = 0; r < ptrs.size(); ++r) {
      const T* row = pooled.data().data() + r * d;
      out.emplace_back(row, row + d);
    }
  }
  return out;
}

double linear_probe(const std::vector<std::vector<double>>& train_x,
                    const std::vector<int>& train_y,
                    const std::vector<std::vector<double>>& test_x,
                    const std::vector<int>& test_y, std::size_t classes,
                    const ProbeOptions& options) {
  if (train_x.empty() || train_x.size() != train_y.size() ||
      test_x.size() != test_y.size() || test_x.empty()) {
    throw ConfigError("linear_probe: empty or mismatched splits");
  }
  {
    std::vector<int> seen(train_y);
    std::sort(seen.begin(), seen.end());
    if (seen.front() == seen.back()) {
      throw ConfigError("linear_probe: training split holds a single class");
    }
  }
  const std::size_t n = train_x.size(), dim = train_x.front().size();
  std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
  for (const auto& x : train_x) {
    for (std::size_t j = 0; j < dim; ++j) mu[j] += x[j];
  }
  for (auto& v : mu) v /= static_cast<double>(n);
  for (const auto& x : train_x) {
    for (std::size_t j = 0; j < dim; ++j) sd[j] += (x[j] - mu[j]) * (x[j] - mu[j]);
  }
  for (auto& v : sd) {
    v = std::sqrt(v / static_cast<double>(n));
    if (v < 1e-12) v = 1.0;
  }
  auto standardize = [&](const std::vector<std::vector<double>>& xs) {
    std::vector<double> z(xs.size() * dim);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        z[i * dim + j] = (xs[i][j] - mu[j]) / sd[j];
      }
    }
    return z;
  };
  const std::vector<double> xtr = standardize(train_x);
  const std::vector<double> xte = standardize(test_x);

  const std::size_t k = classes;
  std::vector<double> w(dim * k, 0.0), b(k, 0.0), gw(dim * k), gb(k), p(k);
  auto scores = [&](const double* x, std::vector<double>& s) {
    for (std::size_t c = 0; c < k; ++c) s[c] = b[c];
    for (std::size_t j = 0; j < dim; ++j) {
      for (std::size_t c = 0; c < k; ++c) s[c] += x[j] * w[j * k + c];
    }
  };
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = xtr.data() + i * dim;
      scores(x, p);
      const double mx = *std::max_element(p.begin(), p.end());
      double z = 0.0;
      for (auto& v : p) z += (v = std::exp(v - mx));
      for (auto& v : p) v /= z;
      p[static_cast<std::size_t>(train_y[i])] -= 1.0;
      for (std::size_t j = 0; j < dim; ++j) {
        for (std::size_t c = 0; c < k; ++c) gw[j * k + c] += x[j] * p[c];
      }
      for (std::size_t c = 0; c < k; ++c) gb[c] += p[c];
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= options.lr * (gw[i] * inv + options.l2 * w[i]);
    }
    for (std::size_t c = 0; c < k; ++c) b[c] -= options.lr * gb[c] * inv;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    scores(xte.data() + i * dim, p);
    correct += static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) ==
               test_y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test_x.size());
}

template <typename T>
double probe_accuracy(const Model<T>& model, const ProbeTask& task,
                      const ProbeOptions& options) {
  const ProbeSplit train =
      balanced_split(task, task.train_begin, task.train_count, task.test_begin);
  const ProbeSplit test =
      balanced_split(task, task.test_begin, task.test_count, UINT64_MAX);
  const std::size_t res = model.cfg.encoder.image_size;
  auto render_all = [&](const ProbeSplit& s) {
    std::vector<synth::Image> imgs;
    for (auto seed : s.seeds) {
      imgs.push_back(synth::render(synth::generate_scene(seed), res, res));
    }
    return imgs;
  };
  return linear_probe(encoder_features(model, render_all(train)), train.labels,
                      encoder_features(model, render_all(test)), test.labels,
                      task.classes(), options);
}

#define CAPVIT_INSTANTIATE_EVAL(T)                                             \
  template double exact_match(const Model<T>&, const Dataset&, std::size_t);   \
  template double perplexity(const Model<T>&, const Dataset&, std::size_t);    \
  template std::vector<std::vector<double>> encoder_features(                  \
      const Model<T>&, const std::vector<synth::Image>&, std::size_t);         \
  template double probe_accuracy(const Model<T>&, const ProbeTask&,            \
                                 const ProbeOptions&);

CAPVIT_INSTANTIATE_EVAL(float)
CAPVIT_INSTANTIATE_EVAL(double)

}  // namespace capvit::eval
