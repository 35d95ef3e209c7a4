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

#include "capvit/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "capvit/error.hpp"
#include "capvit/rng.hpp"

namespace capvit::synth {

namespace {

constexpr std::array<std::string_view, kNumShapes> kShapeWords = {
    "circle", "square", "triangle", "cross"};
constexpr std::array<std::string_view, kNumColors> kColorWords = {
    "red", "green", "blue", "yellow", "purple"};
constexpr std::array<std::string_view, kGridCells> kPositionWords = {
    "top left", "top",    "top right",   "left",        "middle",
    "right",    "bottom left", "bottom", "bottom right"};

constexpr std::array<std::array<float, 3>, kNumColors> kRgb = {{
    {1.00f, 0.10f, 0.10f},
    {0.10f, 0.80f, 0.10f},
    {0.15f, 0.30f, 1.00f},
    {1.00f, 0.90f, 0.10f},
    {0.60f, 0.10f, 0.80f},
}};

constexpr int kSupersample = 4;
constexpr double kHalfExtent = 0.36;  // object half-size as a fraction of a cell

// (u, v) in object-local coordinates, [-1, 1] spans the object box, v down.
bool inside(ObjectShape shape, double u, double v) {
  switch (shape) {
    case ObjectShape::kCircle:
      return u * u + v * v <= 1.0;
    case ObjectShape::kSquare:
      return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case ObjectShape::kTriangle:
      return v >= -1.0 && v <= 1.0 && std::abs(u) <= (v + 1.0) * 0.5;
    case ObjectShape::kCross:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) ||
             (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
  }
  return false;
}

// Object phrase with optional attributes, used for degradation.
struct Phrase {
  ObjectShape shape;
  Color color;
  int cell;
  bool has_color = true;
  bool has_position = true;
};

std::string join_phrases(const std::vector<Phrase>& phrases) {
  std::string out;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    const Phrase& p = phrases[i];
    if (i) out += " and ";
    out += "a ";
    if (p.has_color) {
      out += color_word(p.color);
      out += ' ';
    }
    out += shape_word(p.shape);
    if (p.has_position) {
      out += " in the ";
      out += position_words(p.cell);
    }
  }
  return out;
}

std::vector<Phrase> phrases_of(const Scene& scene) {
  std::vector<Phrase> out;
  for (const auto& o : scene.objects) out.push_back({o.shape, o.color, o.cell});
  return out;
}

std::string noun(const SceneObject& o) {
  std::string s(color_word(o.color));
  s += ' ';
  s += shape_word(o.shape);
  return s;
}

struct Clause {
  std::string text;
  double weight;
};

// Relational clauses for recap_v2. Closer pairs get larger weights.
std::vector<Clause> candidate_clauses(const Scene& scene) {
  std::vector<Clause> out;
  const auto& objs = scene.objects;
  if (objs.size() == 1) {
    out.push_back({"where the " + noun(objs[0]) + " is alone", 1.0});
    return out;
  }
  for (std::size_t a = 0; a < objs.size(); ++a) {
    for (std::size_t b = 0; b < objs.size(); ++b) {
      if (a == b) continue;
      const int ra = objs[a].cell / 3, ca = objs[a].cell % 3;
      const int rb = objs[b].cell / 3, cb = objs[b].cell % 3;
      std::string_view rel;
      if (ca < cb) {
        rel = "left of";
      } else if (ca > cb) {
        rel = "right of";
      } else if (ra < rb) {
        rel = "above";
      } else {
        rel = "below";
      }
      std::string text = "where the " + noun(objs[a]) + " is ";
      text += rel;
      text += " the " + noun(objs[b]);
      const double dist = std::abs(ra - rb) + std::abs(ca - cb);
      out.push_back({std::move(text), 1.0 / dist});
    }
  }
  return out;
}

constexpr std::size_t kClauseTopK = 3;

}  // namespace

std::string_view shape_word(ObjectShape s) {
  return kShapeWords[static_cast<std::size_t>(s)];
}

std::string_view color_word(Color c) {
  return kColorWords[static_cast<std::size_t>(c)];
}

std::string_view position_words(int cell) {
  if (cell < 0 || cell >= static_cast<int>(kGridCells)) {
    throw IndexError("grid cell " + std::to_string(cell) + " out of range");
  }
  return kPositionWords[static_cast<std::size_t>(cell)];
}

Scene generate_scene(std::uint64_t seed) {
  SplitMix64 rng(seed);
  Scene scene;
  scene.seed = seed;
  const std::size_t count = 1 + rng.below(kMaxObjects);
  std::array<int, kGridCells> cells{};
  for (std::size_t i = 0; i < kGridCells; ++i) cells[i] = static_cast<int>(i);
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(cells[i], cells[i + rng.below(kGridCells - i)]);
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto shape = static_cast<ObjectShape>(rng.below(kNumShapes));
    const auto color = static_cast<Color>(rng.below(kNumColors));
    scene.objects.push_back({shape, color, cells[i]});
  }
  std::sort(scene.objects.begin(), scene.objects.end(),
            [](const SceneObject& a, const SceneObject& b) {
              return a.cell < b.cell;
            });
  return scene;
}

Image render(const Scene& scene, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) {
    throw DimensionError("render: image size must be positive");
  }
  Image img{height, width, std::vector<float>(height * width * 3, 0.0f)};
  const double cell_w = static_cast<double>(width) / 3.0;
  const double cell_h = static_cast<double>(height) / 3.0;
  const double half = kHalfExtent * std::min(cell_w, cell_h);
  constexpr double kSubArea = 1.0 / (kSupersample * kSupersample);
  for (const auto& obj : scene.objects) {
    const double cx = (obj.cell % 3 + 0.5) * cell_w;
    const double cy = (obj.cell / 3 + 0.5) * cell_h;
    const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - half)));
    const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - half)));
    const auto x1 = std::min(width, static_cast<std::size_t>(std::ceil(cx + half)) + 1);
    const auto y1 = std::min(height, static_cast<std::size_t>(std::ceil(cy + half)) + 1);
    const auto& rgb = kRgb[static_cast<std::size_t>(obj.color)];
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSupersample; ++sy) {
          for (int sx = 0; sx < kSupersample; ++sx) {
            const double px = x + (sx + 0.5) / kSupersample;
            const double py = y + (sy + 0.5) / kSupersample;
            if (inside(obj.shape, (px - cx) / half, (py - cy) / half)) ++hits;
          }
        }
        if (hits == 0) continue;
        const float cover = static_cast<float>(hits * kSubArea);
        float* p = &img.pixels[(y * width + x) * 3];
        for (int c = 0; c < 3; ++c) p[c] = (1.0f - cover) * p[c] + cover * rgb[c];
      }
    }
  }
  return img;
}

CaptionMode parse_caption_mode(std::string_view name) {
  if (name == "alt_text") return CaptionMode::kAltText;
  if (name == "recap") return CaptionMode::kRecap;
  if (name == "recap_v2") return CaptionMode::kRecapV2;
  throw ConfigError("unknown caption mode '" + std::string(name) +
                    "' (valid modes: alt_text, recap, recap_v2)");
}

std::string_view caption_mode_name(CaptionMode mode) {
  switch (mode) {
    case CaptionMode::kAltText:
      return "alt_text";
    case CaptionMode::kRecap:
      return "recap";
    case CaptionMode::kRecapV2:
      return "recap_v2";
  }
  return "unknown";
}

std::string describe(const Scene& scene) {
  return join_phrases(phrases_of(scene));
}

CaptionPair caption(const Scene& scene, CaptionMode mode, double noise,
                    std::uint64_t seed) {
  if (!(noise >= 0.0 && noise <= 1.0)) {
    throw ConfigError("caption noise must lie in [0, 1], got " +
                      std::to_string(noise));
  }
  SplitMix64 rng(seed);
  CaptionPair pair;
  pair.mode = mode;
  pair.synthetic = describe(scene);
  switch (mode) {
    case CaptionMode::kAltText: {
      auto phrases = phrases_of(scene);
      auto degrade = [&](Phrase& p) {
        switch (rng.below(3)) {
          case 0:
            p.has_color = false;
            break;
          case 1:
            p.color = static_cast<Color>(
                (static_cast<std::size_t>(p.color) + 1 + rng.below(kNumColors - 1)) %
                kNumColors);
            break;
          default:
            p.has_position = false;
            break;
        }
      };
      if (rng.uniform() < noise) {
        const std::size_t first = rng.below(phrases.size());
        degrade(phrases[first]);
        for (std::size_t i = 0; i < phrases.size(); ++i) {
          if (i != first && rng.uniform() < noise) degrade(phrases[i]);
        }
      }
      pair.web = join_phrases(phrases);
      break;
    }
    case CaptionMode::kRecap:
      pair.web = pair.synthetic;
      break;
    case CaptionMode::kRecapV2: {
      auto clauses = candidate_clauses(scene);
      std::stable_sort(clauses.begin(), clauses.end(),
                       [](const Clause& a, const Clause& b) {
                         return a.weight > b.weight;
                       });
      if (clauses.size() > kClauseTopK) clauses.resize(kClauseTopK);
      double total = 0.0;
      for (const auto& c : clauses) total += c.weight;
      double draw = rng.uniform() * total;
      std::size_t pick = clauses.size() - 1;
      for (std::size_t i = 0; i < clauses.size(); ++i) {
        if (draw < clauses[i].weight) {
          pick = i;
          break;
        }
        draw -= clauses[i].weight;
      }
      pair.synthetic += ' ';
      pair.synthetic += clauses[pick].text;
      pair.web = pair.synthetic;
      break;
    }
  }
  return pair;
}

std::uint64_t caption_seed(std::uint64_t scene_seed) {
  return stream_key(scene_seed, {role(RngRole::kCaption)});
}

Vocab::Vocab() {
  for (std::string_view t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  if (tokens.size() < kReserved) {
    throw ConfigError("vocabulary needs the 4 reserved tokens");
  }
  for (std::size_t i = 0; i < kReserved; ++i) {
    if (tokens[i] != v.tokens_[i]) {
      throw ConfigError("vocabulary id " + std::to_string(i) + " must be " +
                        v.tokens_[i] + ", got " + tokens[i]);
    }
  }
  for (std::size_t i = kReserved; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) {
      throw ConfigError("duplicate vocabulary token '" + tokens[i] + "'");
    }
    v.add(tokens[i]);
  }
  return v;
}

int Vocab::add(std::string_view word) {
  auto it = ids_.find(std::string(word));
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.emplace_back(word);
  ids_.emplace(tokens_.back(), id);
  return id;
}

int Vocab::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view word) const {
  return ids_.count(std::string(word)) != 0;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) +
                     " out of range for vocabulary of " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

CorpusRecord make_record(std::uint64_t seed, const CorpusSpec& spec) {
  CorpusRecord r;
  r.scene = generate_scene(seed);
  r.captions = caption(r.scene, spec.mode, spec.noise, caption_seed(seed));
  return r;
}

namespace {

void add_words(Vocab& v, std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) v.add(w);
}

}  // namespace

Vocab build_vocab(const CorpusSpec& spec) {
  Vocab v;
  for (std::uint64_t s = spec.seed_begin; s < spec.seed_end; ++s) {
    const CorpusRecord r = make_record(s, spec);
    add_words(v, r.captions.synthetic);
    add_words(v, r.captions.web);
  }
  return v;
}

const std::vector<std::string>& grammar_words() {
  static const std::vector<std::string> words = {
      "a",     "red",    "green", "blue",   "yellow", "purple", "circle",
      "square", "triangle", "cross", "in",  "the",    "top",    "bottom",
      "left",  "right",  "middle", "and",   "where",  "is",     "of",
      "above", "below",  "alone"};
  return words;
}

Vocab grammar_vocab() {
  Vocab v;
  for (const auto& w : grammar_words()) v.add(w);
  return v;
}

std::size_t max_caption_words() {
  // 3 phrases of "a <color> <shape> in the <two-word position>" (7 words),
  // 2 joining "and", and "where the <c> <s> is right of the <c> <s>" (10).
  return 3 * 7 + 2 + 10;
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab,
                          std::size_t max_len) {
  if (max_len < 3) {
    throw ConfigError("tokenize: max_len must be >= 3, got " +
                      std::to_string(max_len));
  }
  std::vector<int> ids;
  ids.reserve(max_len);
  ids.push_back(Vocab::kBos);
  std::istringstream is{std::string(text)};
  std::string w;
  while (ids.size() < max_len - 1 && is >> w) ids.push_back(vocab.id(w));
  ids.push_back(Vocab::kEos);
  ids.resize(max_len, Vocab::kPad);
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == Vocab::kEos) break;
    if (id == Vocab::kBos || id == Vocab::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

std::vector<int> strip_padding(std::span<const int> ids) {
  std::size_t n = ids.size();
  while (n > 0 && ids[n - 1] == Vocab::kPad) --n;
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace capvit::synth
