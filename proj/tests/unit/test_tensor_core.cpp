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
#include <numbers>

#include "capvit/error.hpp"
#include "capvit/grad_check.hpp"
#include "capvit/ops.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace capvit;
using capvit::testing::random_tensor;
using Td = Tensor<double>;

namespace {

Td make(Shape s, std::vector<double> v, bool rg = false) {
  return Td(std::move(s), std::move(v), rg);
}

ParamList<double> plist(std::initializer_list<Td> ts) {
  ParamList<double> out;
  int i = 0;
  for (const auto& t : ts) out.push_back({"p" + std::to_string(i++), t});
  return out;
}

// Weighted sum with fixed random weights, so every output coordinate
// contributes a distinct gradient.
Td weighted_sum(Graph<double>& g, const Td& y, std::uint64_t seed) {
  Td w = random_tensor(y.shape(), seed ^ 0xABCD, 1.0, false);
  return ops::sum(g, ops::mul(g, y, w));
}

}  // namespace

TEST_CASE("matmul values and dimension errors") {
  Graph<double> g;
  Td eye = make({2, 2}, {1, 0, 0, 1});
  Td b = make({2, 2}, {3, 4, 5, 6});
  auto c = ops::matmul(g, eye, b);
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) ==
        std::vector<double>{3, 4, 5, 6});
  auto d = ops::matmul(g, make({2, 2}, {1, 2, 3, 4}), make({2, 2}, {5, 6, 7, 8}));
  CHECK(std::vector<double>(d.data().begin(), d.data().end()) ==
        std::vector<double>{19, 22, 43, 50});
  try {
    ops::matmul(g, Td({2, 3}), Td({4, 5}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("softmax is stable and normalized") {
  Graph<double> g;
  auto a = ops::softmax(g, make({1, 2}, {0, 0}), 1);
  CHECK(a.data()[0] == doctest::Approx(0.5));
  auto b = ops::softmax(g, make({1, 2}, {1000, 1000}), 1);
  CHECK(b.data()[0] == doctest::Approx(0.5));
  CHECK(b.all_finite());
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto x = random_tensor({3, 7}, s, 10.0, false);
    auto y = ops::softmax(g, x, 1);
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(y.data()[r * 7 + c] >= 0.0);
        total += y.data()[r * 7 + c];
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
  CHECK_THROWS_AS(ops::softmax(g, make({1, 2}, {std::nan(""), 0}), 1),
                  NumericError);
}

TEST_CASE("softmax along the leading axis") {
  Graph<double> g;
  auto y = ops::softmax(g, make({2, 2}, {0, 5, 0, 5}), 0);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("layernorm and gelu values") {
  Graph<double> g;
  auto y = ops::layernorm(g, make({1, 4}, {5, 5, 5, 5}), Td::full({4}, 1.0),
                          Td::zeros({4}));
  for (double v : y.data()) CHECK(v == 0.0);
  Td beta = make({3}, {0.5, -1, 2});
  auto z = ops::layernorm(g, random_tensor({2, 3}, 1, 1.0, false),
                          Td::zeros({3}), beta);
  for (std::size_t i = 0; i < 6; ++i) CHECK(z.data()[i] == beta.data()[i % 3]);

  auto act = ops::gelu(g, make({3}, {0.0, 20.0, -20.0}));
  CHECK(act.data()[0] == 0.0);
  CHECK(act.data()[1] == doctest::Approx(20.0));
  CHECK(std::abs(act.data()[2]) < 1e-12);
  const double x = 0.7;
  const double ref =
      0.5 * x * (1 + std::tanh(std::sqrt(2 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
  CHECK(ops::gelu(g, make({1}, {x})).data()[0] == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("embedding lookup gathers and scatter-adds") {
  Td table = random_tensor({4, 3}, 7);
  {
    Graph<double> g;
    auto y = ops::embedding_lookup(g, table, IntTensor({1}, {0}));
    for (std::size_t j = 0; j < 3; ++j) CHECK(y.data()[j] == table.data()[j]);
  }
  {
    Graph<double> g;
    table.zero_grad();
    auto y = ops::embedding_lookup(g, table, IntTensor({2}, {1, 1}));
    auto loss = ops::sum(g, y);
    g.backward(loss);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(table.grad()[3 + j] == 2.0);
      CHECK(table.grad()[j] == 0.0);
    }
  }
  Graph<double> g;
  try {
    ops::embedding_lookup(g, table, IntTensor({1}, {4}));
    FAIL("expected IndexError");
  } catch (const IndexError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('4') != std::string::npos);
  }
}

TEST_CASE("cross entropy") {
  Graph<double> g;
  std::vector<int> t{3, 5};
  auto uni = ops::cross_entropy(g, Td::zeros({2, 16}), t, -1);
  CHECK(uni.item() == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  double prev = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 50.0}) {
    Td logits = Td::zeros({1, 4});
    logits.data()[2] = margin;
    std::vector<int> t2{2};
    const double l = ops::cross_entropy(g, logits, t2, -1).item();
    CHECK(l >= 0.0);
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-20);
  std::vector<int> ignored{0, 0};
  CHECK_THROWS_AS(ops::cross_entropy(g, Td::zeros({2, 4}), ignored, 0),
                  DegenerateBatchError);
}

TEST_CASE("graph replays in reverse order and refuses a second backward") {
  Td x = random_tensor({2, 2}, 3);
  Graph<double> g;
  auto y = ops::gelu(g, ops::matmul(g, x, x));
  auto loss = ops::sum(g, y);
  auto tags = g.op_tags();
  g.backward(loss);
  std::vector<std::string_view> rev(tags.rbegin(), tags.rend());
  CHECK(g.last_backward_order() == rev);
  CHECK_THROWS_AS(g.backward(loss), GraphError);
}

TEST_CASE("forward replay is bit-identical") {
  Td x = random_tensor({4, 6}, 11);
  Td w = random_tensor({6, 6}, 12);
  auto run = [&] {
    Graph<double> g(false);
    auto h = ops::softmax(g, ops::gelu(g, ops::matmul(g, x, w)), 1);
    return std::vector<double>(h.data().begin(), h.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("grad_check oracle cases") {
  Td x = random_tensor({5}, 2);
  auto params = plist({x});
  auto quad = grad_check([&](Graph<double>& g) { return ops::sum(g, ops::mul(g, x, x)); },
                         params);
  CHECK(quad.max_rel_error < 1e-8);
  auto constant = grad_check(
      [&](Graph<double>&) { return Td::scalar(3.0); }, params);
  CHECK(constant.max_rel_error == 0.0);
  CHECK(constant.analytic == 0.0);
}

TEST_CASE("every differentiable op passes a finite-difference check") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SplitMix64 rng(seed);
    auto dim = [&] { return static_cast<std::size_t>(1 + rng.below(8)); };
    const std::size_t m = dim(), k = dim(), n = dim();
    CAPTURE(seed);
    Td a = random_tensor({m, k}, seed * 7 + 1);
    Td b = random_tensor({k, n}, seed * 7 + 2);
    Td bias = random_tensor({n}, seed * 7 + 3);
    Td gamma = random_tensor({k}, seed * 7 + 4);
    Td beta = random_tensor({k}, seed * 7 + 5);
    Td sq = random_tensor({m, k}, seed * 7 + 6);
    Td s = random_tensor({1}, seed * 7 + 7);
    // Normalized axes are kept non-degenerate. A one-element layernorm or
    // l2 norm, and a two-element layernorm, have gradients that vanish as
    // eps -> 0, so the relative error would only measure roundoff.
    const std::size_t kn = 2 + rng.below(7);
    const std::size_t kl = 3 + rng.below(6);
    Td an = random_tensor({m, kn}, seed * 7 + 8);
    Td al = random_tensor({m, kl}, seed * 7 + 11);
    Td gn = random_tensor({kl}, seed * 7 + 9);
    Td bn = random_tensor({kl}, seed * 7 + 10);

    struct Case {
      const char* name;
      ScalarFn f;
      ParamList<double> params;
    };
    std::vector<Case> cases = {
        {"matmul", [&](Graph<double>& g) { return weighted_sum(g, ops::matmul(g, a, b), seed); },
         plist({a, b})},
        {"linear", [&](Graph<double>& g) { return weighted_sum(g, ops::linear(g, a, b, bias), seed); },
         plist({a, b, bias})},
        {"transpose", [&](Graph<double>& g) { return weighted_sum(g, ops::transpose(g, a), seed); },
         plist({a})},
        {"add_mul", [&](Graph<double>& g) {
           return weighted_sum(g, ops::mul(g, ops::add(g, a, sq), sq), seed);
         }, plist({a, sq})},
        {"add_row", [&](Graph<double>& g) { return weighted_sum(g, ops::add_row(g, a, gamma), seed); },
         plist({a, gamma})},
        {"scale_exp", [&](Graph<double>& g) {
           return weighted_sum(g, ops::exp(g, ops::scale(g, a, 0.3)), seed);
         }, plist({a})},
        {"mul_scalar", [&](Graph<double>& g) { return weighted_sum(g, ops::mul_scalar(g, a, s), seed); },
         plist({a, s})},
        {"softmax", [&](Graph<double>& g) { return weighted_sum(g, ops::softmax(g, a, 1), seed); },
         plist({a})},
        {"layernorm", [&](Graph<double>& g) {
           return weighted_sum(g, ops::layernorm(g, al, gn, bn), seed);
         }, plist({al, gn, bn})},
        {"gelu", [&](Graph<double>& g) { return weighted_sum(g, ops::gelu(g, a), seed); },
         plist({a})},
        {"mean", [&](Graph<double>& g) { return ops::mean(g, ops::mul(g, a, a)); },
         plist({a})},
        {"l2_normalize", [&](Graph<double>& g) {
           return weighted_sum(g, ops::l2_normalize(g, an), seed);
         }, plist({an})},
        {"mean_pool", [&](Graph<double>& g) {
           return weighted_sum(g, ops::mean_pool(g, a, 1), seed);
         }, plist({a})},
    };
    for (auto& c : cases) {
      const std::string op = c.name;
      CAPTURE(op);
      const auto r = grad_check(c.f, c.params);
      CAPTURE(r.worst_param);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("layernorm of a single element has a vanishing input gradient") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Td x = random_tensor({3, 1}, seed);
    Graph<double> g;
    auto y = ops::layernorm(g, x, Td::full({1}, 1.5), Td::zeros({1}));
    auto loss = weighted_sum(g, y, seed);
    g.backward(loss);
    for (double v : x.grad()) CHECK(std::abs(v) < 1e-12);
  }
}

TEST_CASE("sequence ops, embedding and cross entropy gradients") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    const std::size_t batch = 2, sa = 3, sb = 2, d = 4, v = 5;
    Td a = random_tensor({batch * sa, d}, seed + 100);
    Td b = random_tensor({batch * sb, d}, seed + 200);
    Td table = random_tensor({v, d}, seed + 300);
    Td pos = random_tensor({sa, d}, seed + 400);
    std::vector<std::size_t> rows{0, 2, 2, 5};
    auto f = [&](Graph<double>& g) {
      auto cat = ops::concat_sequences(g, ops::add_tiled(g, a, pos), b, batch);
      auto mid = ops::slice_sequences(g, cat, batch, 1, 3);
      auto picked = ops::gather_rows(g, mid, rows);
      auto emb = ops::embedding_lookup(g, table, IntTensor({4}, {1, 3, 3, 0}));
      auto logits = ops::add(g, picked, emb);
      std::vector<int> targets{0, 3, -1, 2};
      return ops::cross_entropy(g, logits, targets, -1);
    };
    auto params = plist({a, b, table, pos});
    CHECK(grad_check(f, params).max_rel_error < 1e-4);
  }
}

TEST_CASE("attention gradients under every mask kind") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    const std::size_t batch = 2, seq = 4, d = 4;
    Td q = random_tensor({batch * seq, d}, seed + 1);
    Td k = random_tensor({batch * seq, d}, seed + 2);
    Td v = random_tensor({batch * seq, d}, seed + 3);
    ops::AttentionMask padded = ops::AttentionMask::prefix_causal(2);
    padded.key_valid = {1, 1, 1, 0, 1, 0, 1, 1};
    for (const auto& mask : {ops::AttentionMask::full(seq),
                             ops::AttentionMask::causal(),
                             ops::AttentionMask::prefix_causal(2), padded}) {
      auto f = [&](Graph<double>& g) {
        return weighted_sum(g, ops::attention(g, q, k, v, {batch, seq, 2}, mask), seed);
      };
      auto params = plist({q, k, v});
      CHECK(grad_check(f, params).max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("clamp passes gradient only inside the range") {
  Td x = make({3}, {-2.0, 0.5, 3.0}, true);
  Graph<double> g;
  auto y = ops::clamp(g, x, -1.0, 1.0);
  CHECK(y.data()[0] == -1.0);
  CHECK(y.data()[2] == 1.0);
  auto loss = ops::sum(g, y);
  g.backward(loss);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}
