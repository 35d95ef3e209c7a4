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

#include <algorithm>
#include <array>
#include <set>
#include <sstream>

#include "capvit/data_synth.hpp"
#include "capvit/error.hpp"
#include "doctest.h"

using namespace capvit::synth;
using capvit::ConfigError;

namespace {

std::multiset<std::string> words(const std::string& s) {
  std::multiset<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.insert(w);
  return out;
}

}  // namespace

TEST_CASE("scenes are deterministic and satisfy their invariants") {
  CHECK(render(generate_scene(42), 32, 32).pixels ==
        render(generate_scene(42), 32, 32).pixels);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const Scene s = generate_scene(seed);
    REQUIRE(s.objects.size() >= 1);
    REQUIRE(s.objects.size() <= kMaxObjects);
    std::set<int> cells;
    for (const auto& o : s.objects) {
      REQUIRE(o.cell >= 0);
      REQUIRE(o.cell < static_cast<int>(kGridCells));
      cells.insert(o.cell);
    }
    REQUIRE(cells.size() == s.objects.size());
    REQUIRE(std::is_sorted(s.objects.begin(), s.objects.end(),
                           [](auto& a, auto& b) { return a.cell < b.cell; }));
  }
}

TEST_CASE("color marginals are uniform") {
  std::array<std::size_t, kNumColors> counts{};
  std::size_t total = 0;
  for (std::uint64_t seed = 0; seed < 100000; ++seed) {
    for (const auto& o : generate_scene(seed).objects) {
      ++counts[static_cast<std::size_t>(o.color)];
      ++total;
    }
  }
  for (auto c : counts) {
    const double freq = static_cast<double>(c) / static_cast<double>(total);
    CHECK(std::abs(freq - 0.2) <= 0.02 * 0.2);
  }
}

TEST_CASE("rendering is pure and bounded") {
  Scene s{{{ObjectShape::kCircle, Color::kRed, 4}}, 0};
  const Image a = render(s, 32, 32);
  CHECK(a.pixels.size() == 32 * 32 * 3);
  for (float v : a.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  s.seed = 999;  // the seed is not an input of render
  CHECK(render(s, 32, 32).pixels == a.pixels);
  CHECK(a.at(16, 16, 0) > 0.9f);  // red at the center
  CHECK(a.at(16, 16, 0) > a.at(16, 16, 2) + 0.5f);
  CHECK(a.at(1, 1, 0) == 0.0f);  // background in the corner cell
}

TEST_CASE("caption templates") {
  Scene s{{{ObjectShape::kCircle, Color::kRed, 4}}, 0};
  CHECK(caption(s, CaptionMode::kRecap, 0.0, 1).synthetic ==
        "a red circle in the middle");
  CHECK_THROWS_AS(caption(s, CaptionMode::kAltText, 1.5, 1), ConfigError);
  CHECK_THROWS_AS(parse_caption_mode("bogus"), ConfigError);
  for (auto m : {CaptionMode::kAltText, CaptionMode::kRecap, CaptionMode::kRecapV2}) {
    CHECK(parse_caption_mode(caption_mode_name(m)) == m);
  }
}

TEST_CASE("alt_text noise controls degradation") {
  std::size_t differ = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Scene s = generate_scene(seed);
    const auto clean = caption(s, CaptionMode::kAltText, 0.0, caption_seed(seed));
    CHECK(clean.web == clean.synthetic);
    const auto noisy = caption(s, CaptionMode::kAltText, 1.0, caption_seed(seed));
    differ += noisy.web != noisy.synthetic;
    CHECK(noisy.training_target() == noisy.web);
  }
  CHECK(differ == 1000);
}

TEST_CASE("recap_v2 enriches recap") {
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const Scene s = generate_scene(seed);
    const auto r1 = words(caption(s, CaptionMode::kRecap, 0.0, caption_seed(seed)).synthetic);
    const auto r2 = words(caption(s, CaptionMode::kRecapV2, 0.0, caption_seed(seed)).synthetic);
    CHECK(std::includes(r2.begin(), r2.end(), r1.begin(), r1.end()));
  }
}

TEST_CASE("vocabulary construction") {
  CHECK(Vocab().size() == Vocab::kReserved);
  CHECK(build_vocab(CorpusSpec{0, 0}).size() == Vocab::kReserved);
  const CorpusSpec spec{0, 500, CaptionMode::kAltText, 0.5};
  const Vocab a = build_vocab(spec);
  CHECK(a == build_vocab(spec));
  CHECK(a.size() <= 64 + Vocab::kReserved);
  const Vocab full = build_vocab(CorpusSpec{0, 5000, CaptionMode::kRecapV2, 0.0});
  const Vocab g = grammar_vocab();
  for (const auto& w : grammar_words()) {
    CHECK(g.contains(w));
    CHECK(full.contains(w));
  }
  CHECK(g.size() == grammar_words().size() + Vocab::kReserved);
  CHECK(g.token(Vocab::kPad) == "<pad>");
  CHECK(g.id("zebra") == Vocab::kUnk);
}

TEST_CASE("tokenize and detokenize") {
  const Vocab v = grammar_vocab();
  const auto empty = tokenize("", v, 5);
  CHECK(empty == std::vector<int>{Vocab::kBos, Vocab::kEos, Vocab::kPad,
                                  Vocab::kPad, Vocab::kPad});
  const std::size_t max_len = max_caption_words() + 2;
  for (std::uint64_t seed = 0; seed < 3000; ++seed) {
    for (auto mode : {CaptionMode::kRecap, CaptionMode::kRecapV2}) {
      const auto text = caption(generate_scene(seed), mode, 0.0, caption_seed(seed)).synthetic;
      const auto ids = tokenize(text, v, max_len);
      REQUIRE(ids.size() == max_len);
      CHECK(detokenize(ids, v) == text);
      // PAD never sits between BOS and EOS.
      const auto eos = std::find(ids.begin(), ids.end(), Vocab::kEos);
      REQUIRE(eos != ids.end());
      CHECK(std::find(ids.begin(), eos, Vocab::kPad) == eos);
      CHECK(std::find(ids.begin(), ids.end(), Vocab::kUnk) == ids.end());
    }
  }
  const auto cut = tokenize("a red circle in the middle", v, 5);
  CHECK(cut.size() == 5);
  CHECK(cut.front() == Vocab::kBos);
  CHECK(cut.back() == Vocab::kEos);
  CHECK(detokenize(cut, v) == "a red circle");
  CHECK(tokenize("a zebra", v, 6)[2] == Vocab::kUnk);
  CHECK(strip_padding(empty) == std::vector<int>{Vocab::kBos, Vocab::kEos});
}

TEST_CASE("corpus records are reproducible") {
  const CorpusSpec spec{10, 20, CaptionMode::kAltText, 0.5};
  for (std::uint64_t s = 10; s < 20; ++s) {
    const auto a = make_record(s, spec);
    const auto b = make_record(s, spec);
    CHECK(a.scene.objects == b.scene.objects);
    CHECK(a.captions.web == b.captions.web);
    CHECK(a.captions.synthetic == b.captions.synthetic);
  }
}
