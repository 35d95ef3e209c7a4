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

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

// Procedural captioned-scene corpus. Each scene places 1-3 colored shapes in
// distinct cells of a 3x3 grid; captions come from a closed template grammar
// documented in docs/caption_grammar.md.
namespace capvit::synth {

enum class ObjectShape : std::uint8_t { kCircle, kSquare, kTriangle, kCross };
enum class Color : std::uint8_t { kRed, kGreen, kBlue, kYellow, kPurple };

inline constexpr std::size_t kNumShapes = 4;
inline constexpr std::size_t kNumColors = 5;
inline constexpr std::size_t kGridCells = 9;
inline constexpr std::size_t kMaxObjects = 3;

std::string_view shape_word(ObjectShape s);
std::string_view color_word(Color c);
// "top left", "top", ..., "middle", ..., "bottom right".
std::string_view position_words(int cell);

struct SceneObject {
  ObjectShape shape;
  Color color;
  int cell;  // row-major index into the 3x3 grid

  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::vector<SceneObject> objects;  // in cell order
  std::uint64_t seed = 0;
};

// H x W x 3 image, channel-fastest, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
};

// Deterministic in the seed: object count, cells, shapes and colors are drawn
// from one SplitMix64 stream seeded with `seed`.
Scene generate_scene(std::uint64_t seed);

// Anti-aliased rasterization (4x4 supersampling per pixel) on a black
// background. Pure function of (objects, height, width).
Image render(const Scene& scene, std::size_t height, std::size_t width);

enum class CaptionMode : std::uint8_t { kAltText, kRecap, kRecapV2 };

// Accepts "alt_text", "recap", "recap_v2"; throws ConfigError listing the
// valid names otherwise.
CaptionMode parse_caption_mode(std::string_view name);
std::string_view caption_mode_name(CaptionMode mode);

struct CaptionPair {
  std::string synthetic;
  std::string web;
  CaptionMode mode = CaptionMode::kRecap;

  // The caption a caption-only model is trained on for this mode: the raw
  // web caption for alt_text, the synthetic caption otherwise.
  const std::string& training_target() const {
    return mode == CaptionMode::kAltText ? web : synthetic;
  }
};

// Template A: one "a <color> <shape> in the <position>" phrase per object,
// in cell order, joined by "and".
std::string describe(const Scene& scene);

// Builds the caption pair for `mode`:
//   alt_text  synthetic = template A; web = template A degraded (drop color,
//             swap color, drop position) with probability `noise`
//   recap     synthetic = web = template A
//   recap_v2  synthetic = web = template A + one relational clause picked by
//             weighted top-k sampling over the scene's object pairs
// Throws ConfigError when noise is outside [0, 1].
CaptionPair caption(const Scene& scene, CaptionMode mode, double noise,
                    std::uint64_t seed);

// Seed of the caption stream belonging to a scene seed.
std::uint64_t caption_seed(std::uint64_t scene_seed);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab();
  // Reserved tokens must come first, in order.
  static Vocab from_tokens(std::vector<std::string> tokens);

  // Returns the existing id or assigns the next one.
  int add(std::string_view word);
  // UNK for unknown words.
  int id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// A seed range plus caption settings; fixes a corpus exactly.
struct CorpusSpec {
  std::uint64_t seed_begin = 0;
  std::uint64_t seed_end = 0;
  CaptionMode mode = CaptionMode::kRecapV2;
  double noise = 0.0;

  std::size_t size() const { return seed_end - seed_begin; }
};

struct CorpusRecord {
  Scene scene;
  CaptionPair captions;
};

CorpusRecord make_record(std::uint64_t seed, const CorpusSpec& spec);

// Scans the corpus in seed order (synthetic caption, then web caption) and
// assigns ids to words in first-seen order after the reserved tokens.
Vocab build_vocab(const CorpusSpec& spec);

// Every word the grammar can emit, in canonical order.
const std::vector<std::string>& grammar_words();
Vocab grammar_vocab();

// Longest caption (in words) the grammar can produce.
std::size_t max_caption_words();

// Whitespace split, BOS + ids + EOS, right-padded with PAD to max_len. Long
// inputs are truncated with EOS forced at max_len - 1. Requires max_len >= 3.
std::vector<int> tokenize(std::string_view text, const Vocab& vocab,
                          std::size_t max_len);
// Skips BOS and PAD, stops at EOS.
std::string detokenize(std::span<const int> ids, const Vocab& vocab);

// Drops trailing PAD.
std::vector<int> strip_padding(std::span<const int> ids);

}  // namespace capvit::synth
