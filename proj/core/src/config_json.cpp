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

#include "capvit/config_json.hpp"

#include <functional>

#include "capvit/error.hpp"
#include "json.hpp"

namespace capvit {

namespace {

using json = nlohmann::json;
using Handler = std::function<bool(const std::string&, const json&)>;

void each_key(const json& j, const std::string& path, const Handler& f) {
  if (!j.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    bool known = false;
    try {
      known = f(key, value);
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + full + "': " + e.what());
    }
    if (!known) throw ConfigError("config: unknown key '" + full + "'");
  }
}

template <typename V>
bool take(const std::string& key, const json& value, const char* name, V& out) {
  if (key != name) return false;
  if constexpr (std::is_unsigned_v<V>) {
    if (!value.is_number_unsigned()) {
      throw ConfigError(std::string("config: '") + name +
                        "' must be a non-negative integer");
    }
  }
  out = value.get<V>();
  return true;
}

json block_json(std::size_t width, std::size_t depth, std::size_t heads,
                double mlp_ratio) {
  return {{"width", width}, {"depth", depth}, {"heads", heads},
          {"mlp_ratio", mlp_ratio}};
}

json model_json(const ModelConfig& c) {
  json enc = block_json(c.encoder.width, c.encoder.depth, c.encoder.heads,
                        c.encoder.mlp_ratio);
  enc["image_size"] = c.encoder.image_size;
  enc["patch_size"] = c.encoder.patch_size;
  json dec = block_json(c.decoder.width, c.decoder.depth, c.decoder.heads,
                        c.decoder.mlp_ratio);
  dec["vocab"] = c.decoder.vocab;
  dec["max_len"] = c.decoder.max_len;
  dec["keep_ratio"] = c.decoder.keep_ratio;
  dec["max_seq"] = c.decoder.max_seq;
  json txt = block_json(c.text.width, c.text.depth, c.text.heads,
                        c.text.mlp_ratio);
  txt["vocab"] = c.text.vocab;
  txt["max_len"] = c.text.max_len;
  txt["embed_dim"] = c.text.embed_dim;
  return {{"pipeline", std::string(pipeline_name(c.pipeline))},
          {"encoder", enc},
          {"decoder", dec},
          {"text", txt},
          {"lambda_gen", c.lambda_gen}};
}

json train_json(const TrainConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) {
    stages.push_back({{"resolution", s.resolution},
                      {"steps", s.steps},
                      {"batch_size", s.batch_size},
                      {"peak_lr", s.peak_lr},
                      {"warmup", s.warmup}});
  }
  return {{"stages", stages},
          {"optim",
           {{"beta1", c.optim.beta1},
            {"beta2", c.optim.beta2},
            {"weight_decay", c.optim.weight_decay},
            {"eps", c.optim.eps}}},
          {"clip_norm", c.clip_norm},
          {"seed", c.seed},
          {"corpus",
           {{"seed_begin", c.corpus.seed_begin},
            {"seed_end", c.corpus.seed_end},
            {"mode", std::string(synth::caption_mode_name(c.corpus.mode))},
            {"noise", c.corpus.noise}}}};
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
}

}  // namespace

std::string to_json(const ModelConfig& cfg) { return model_json(cfg).dump(2); }
std::string to_json(const TrainConfig& cfg) { return train_json(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& text,
                                   const ModelConfig& base) {
  ModelConfig c = base;
  each_key(parse(text), "", [&](const std::string& k, const json& v) {
    if (k == "pipeline") {
      c.pipeline = parse_pipeline(v.get<std::string>());
      return true;
    }
    if (take(k, v, "lambda_gen", c.lambda_gen)) return true;
    if (k == "encoder") {
      auto& e = c.encoder;
      each_key(v, "encoder", [&](const std::string& k2, const json& v2) {
        return take(k2, v2, "image_size", e.image_size) ||
               take(k2, v2, "patch_size", e.patch_size) ||
               take(k2, v2, "width", e.width) || take(k2, v2, "depth", e.depth) ||
               take(k2, v2, "heads", e.heads) ||
               take(k2, v2, "mlp_ratio", e.mlp_ratio);
      });
      return true;
    }
    if (k == "decoder") {
      auto& d = c.decoder;
      each_key(v, "decoder", [&](const std::string& k2, const json& v2) {
        return take(k2, v2, "width", d.width) || take(k2, v2, "depth", d.depth) ||
               take(k2, v2, "heads", d.heads) ||
               take(k2, v2, "mlp_ratio", d.mlp_ratio) ||
               take(k2, v2, "vocab", d.vocab) ||
               take(k2, v2, "max_len", d.max_len) ||
               take(k2, v2, "keep_ratio", d.keep_ratio) ||
               take(k2, v2, "max_seq", d.max_seq);
      });
      return true;
    }
    if (k == "text") {
      auto& t = c.text;
      each_key(v, "text", [&](const std::string& k2, const json& v2) {
        return take(k2, v2, "width", t.width) || take(k2, v2, "depth", t.depth) ||
               take(k2, v2, "heads", t.heads) ||
               take(k2, v2, "mlp_ratio", t.mlp_ratio) ||
               take(k2, v2, "vocab", t.vocab) ||
               take(k2, v2, "max_len", t.max_len) ||
               take(k2, v2, "embed_dim", t.embed_dim);
      });
      return true;
    }
    return false;
  });
  return c;
}

TrainConfig train_config_from_json(const std::string& text,
                                   const TrainConfig& base) {
  TrainConfig c = base;
  each_key(parse(text), "", [&](const std::string& k, const json& v) {
    if (take(k, v, "clip_norm", c.clip_norm) || take(k, v, "seed", c.seed)) {
      return true;
    }
    if (k == "stages") {
      if (!v.is_array()) throw ConfigError("config: 'stages' must be an array");
      c.stages.clear();
      for (const auto& item : v) {
        StageConfig s;
        each_key(item, "stages[]", [&](const std::string& k2, const json& v2) {
          return take(k2, v2, "resolution", s.resolution) ||
                 take(k2, v2, "steps", s.steps) ||
                 take(k2, v2, "batch_size", s.batch_size) ||
                 take(k2, v2, "peak_lr", s.peak_lr) ||
                 take(k2, v2, "warmup", s.warmup);
        });
        c.stages.push_back(s);
      }
      return true;
    }
    if (k == "optim") {
      auto& o = c.optim;
      each_key(v, "optim", [&](const std::string& k2, const json& v2) {
        return take(k2, v2, "beta1", o.beta1) || take(k2, v2, "beta2", o.beta2) ||
               take(k2, v2, "weight_decay", o.weight_decay) ||
               take(k2, v2, "eps", o.eps);
      });
      return true;
    }
    if (k == "corpus") {
      auto& s = c.corpus;
      each_key(v, "corpus", [&](const std::string& k2, const json& v2) {
        if (k2 == "mode") {
          s.mode = synth::parse_caption_mode(v2.get<std::string>());
          return true;
        }
        return take(k2, v2, "seed_begin", s.seed_begin) ||
               take(k2, v2, "seed_end", s.seed_end) ||
               take(k2, v2, "noise", s.noise);
      });
      return true;
    }
    return false;
  });
  return c;
}

}  // namespace capvit
