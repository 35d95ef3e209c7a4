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

#include "capvit/cost_model.hpp"

#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <sstream>

#include "capvit/corpus_io.hpp"
#include "capvit/error.hpp"
#include "json.hpp"

#ifndef CAPVIT_PRESETS_PATH
#define CAPVIT_PRESETS_PATH "config/presets.json"
#endif

namespace capvit::cost {

namespace {

using json = nlohmann::json;

constexpr double kActivationBytes = 2.0;  // bf16
constexpr double kStateBytes = 16.0;      // fp32 weight, grad, m, v

double d(std::size_t x) { return static_cast<double>(x); }

double tower_flops(std::size_t n, const Tower& t) {
  return transformer_flops(n, t.width, t.depth, t.heads, t.mlp_ratio);
}

std::size_t kept(const PipelineSpec& s) {
  if (s.pipeline == Pipeline::kV1Contrastive) return s.tokens();
  return keep_count(s.tokens(), s.keep_ratio);
}

Tower tower_from(const json& j) {
  Tower t;
  t.width = j.at("width").get<std::size_t>();
  t.depth = j.at("depth").get<std::size_t>();
  t.heads = j.at("heads").get<std::size_t>();
  t.mlp_ratio = j.at("mlp_ratio").get<double>();
  return t;
}

std::string fmt(double v, int precision) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string fixed(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

const CostReport& reference_for(const std::vector<CostReport>& reports,
                                const CostReport& row) {
  const CostReport* first = nullptr;
  for (const auto& r : reports) {
    if (r.name != row.name) continue;
    if (!first) first = &r;
    if (r.pipeline == Pipeline::kV2Generative) return r;
  }
  return *first;
}

}  // namespace

std::size_t PipelineSpec::tokens() const {
  const std::size_t g = resolution / patch_size;
  return g * g;
}

void PipelineSpec::validate() const {
  if (patch_size == 0 || resolution < patch_size) {
    throw ConfigError("cost spec '" + name + "': resolution below patch size");
  }
  if (encoder.width == 0 || decoder.width == 0 || syn_len == 0 || devices == 0) {
    throw ConfigError("cost spec '" + name +
                      "': widths, syn_len and devices must be positive");
  }
  if (pipeline == Pipeline::kV1Contrastive && text.width == 0) {
    throw ConfigError("cost spec '" + name + "': v1 needs a text tower width");
  }
  keep_count(1, keep_ratio);
}

double transformer_flops(std::size_t n, std::size_t dm, std::size_t layers,
                         std::size_t /*heads*/, double mlp_ratio) {
  const double nn = d(n), dd = d(dm);
  return d(layers) *
         (8.0 * nn * dd * dd + 4.0 * nn * nn * dd + 4.0 * mlp_ratio * nn * dd * dd);
}

double transformer_activations(std::size_t n, const Tower& t) {
  const double nn = d(n), dd = d(t.width);
  return d(t.depth) *
         ((8.0 + 2.0 * t.mlp_ratio) * nn * dd + d(t.heads) * nn * nn);
}

double transformer_params(const Tower& t) {
  const double dd = d(t.width);
  return d(t.depth) * (4.0 * dd * dd + 2.0 * t.mlp_ratio * dd * dd);
}

CostReport pipeline_flops(const PipelineSpec& s) {
  s.validate();
  CostReport r;
  r.name = s.name;
  r.pipeline = s.pipeline;
  r.batch = s.batch;
  const std::size_t n = s.tokens(), m = kept(s);
  const double de = d(s.encoder.width), dd = d(s.decoder.width);
  r.patch_embed = 2.0 * d(n) * d(s.patch_size * s.patch_size * 3) * de;
  r.encoder = tower_flops(n, s.encoder);
  r.connector = 2.0 * d(m) * de * dd;
  r.lm_head = 2.0 * d(s.syn_len) * dd * d(s.vocab);
  if (s.pipeline == Pipeline::kV2Generative) {
    r.decoder = tower_flops(m + s.syn_len, s.decoder);
  } else {
    r.text_encoder =
        tower_flops(s.web_len, s.text) + tower_flops(s.syn_len, s.text);
    r.decoder = tower_flops(n + s.web_len + s.syn_len, s.decoder);
    const double e = d(s.embed_dim);
    r.contrastive_heads = 2.0 * de * e + 2.0 * 2.0 * d(s.text.width) * e;
  }
  r.forward = r.patch_embed + r.encoder + r.connector + r.text_encoder +
              r.decoder + r.lm_head + r.contrastive_heads;
  r.training = 3.0 * r.forward;
  return r;
}

double activation_memory(const PipelineSpec& s, std::size_t batch) {
  s.validate();
  const std::size_t n = s.tokens(), m = kept(s);
  double act = transformer_activations(n, s.encoder) +
               d(s.syn_len) * d(s.vocab);  // logits
  double params = transformer_params(s.encoder) +
                  d(s.patch_size * s.patch_size * 3) * d(s.encoder.width) +
                  d(n) * d(s.encoder.width) +                 // positions
                  d(s.encoder.width) * d(s.decoder.width) +  // connector
                  transformer_params(s.decoder) +
                  2.0 * d(s.vocab) * d(s.decoder.width);  // embedding + head
  if (s.pipeline == Pipeline::kV2Generative) {
    act += transformer_activations(m + s.syn_len, s.decoder);
  } else {
    act += transformer_activations(n + s.web_len + s.syn_len, s.decoder) +
           transformer_activations(s.web_len, s.text) +
           transformer_activations(s.syn_len, s.text);
    params += transformer_params(s.text) + d(s.vocab) * d(s.text.width) +
              d(s.text.width) * d(s.embed_dim) +
              d(s.encoder.width) * d(s.embed_dim);
  }
  const double per_device_batch = d(batch) / d(s.devices);
  return kActivationBytes * per_device_batch * act +
         kStateBytes * params / d(s.devices);
}

CostReport evaluate(const PipelineSpec& s) {
  CostReport r = pipeline_flops(s);
  r.state_bytes = activation_memory(s, 0);
  r.memory_bytes = activation_memory(s, s.batch);
  r.activation_bytes = r.memory_bytes - r.state_bytes;
  return r;
}

std::filesystem::path default_presets_path() {
  if (const char* env = std::getenv("CAPVIT_PRESETS")) return env;
  return CAPVIT_PRESETS_PATH;
}

std::vector<Preset> load_presets(const std::filesystem::path& path) {
  std::vector<Preset> out;
  try {
    const auto raw = corpus::read_file(path);
    const json j = json::parse(raw.begin(), raw.end());
    if (j.at("schema_version").get<int>() != 1) {
      throw ConfigError("presets: unsupported schema_version");
    }
    for (const auto& [name, p] : j.at("presets").items()) {
      Preset pr;
      pr.name = name;
      auto& s = pr.spec;
      s.name = name;
      s.encoder = tower_from(p.at("encoder"));
      s.decoder = tower_from(p.at("decoder"));
      s.text = tower_from(p.at("text"));
      s.patch_size = p.at("patch_size").get<std::size_t>();
      s.resolution = p.at("resolution").get<std::size_t>();
      s.web_len = p.at("web_len").get<std::size_t>();
      s.syn_len = p.at("syn_len").get<std::size_t>();
      s.keep_ratio = p.at("keep_ratio").get<double>();
      s.vocab = p.at("vocab").get<std::size_t>();
      s.embed_dim = p.at("embed_dim").get<std::size_t>();
      s.batch = p.at("batch").get<std::size_t>();
      s.devices = p.at("devices").get<std::size_t>();
      s.validate();
      out.push_back(std::move(pr));
    }
  } catch (const json::exception& e) {
    throw ConfigError("presets file " + path.string() + " is invalid: " +
                      e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return out;
}

const Preset& find_preset(const std::vector<Preset>& presets,
                          const std::string& name) {
  for (const auto& p : presets) {
    if (p.name == name) return p;
  }
  std::string names;
  for (const auto& p : presets) names += (names.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset '" + name + "' (available: " + names + ")");
}

std::string report_csv(const std::vector<CostReport>& reports) {
  std::ostringstream os;
  os << "name,pipeline,batch,patch_embed_gflops,encoder_gflops,"
        "connector_gflops,text_encoder_gflops,decoder_gflops,lm_head_gflops,"
        "contrastive_gflops,forward_gflops,training_gflops,activation_gb,"
        "state_gb,memory_gb,flops_ratio,memory_ratio\n";
  for (const auto& r : reports) {
    const CostReport& ref = reference_for(reports, r);
    const double g = 1e-9;
    os << r.name << ',' << pipeline_name(r.pipeline) << ',' << r.batch;
    for (double v : {r.patch_embed, r.encoder, r.connector, r.text_encoder,
                     r.decoder, r.lm_head, r.contrastive_heads, r.forward,
                     r.training, r.activation_bytes, r.state_bytes,
                     r.memory_bytes}) {
      os << ',' << fmt(v * g, 17);
    }
    os << ',' << fmt(r.training / ref.training, 17) << ','
       << fmt(r.memory_bytes / ref.memory_bytes, 17) << '\n';
  }
  return os.str();
}

std::string report_text(const std::vector<CostReport>& reports) {
  const std::vector<std::string> header = {
      "name", "pipeline", "batch", "fwd GFLOPs/img", "train GFLOPs/img",
      "mem GB/device", "FLOPs ratio", "mem ratio"};
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& r : reports) {
    const CostReport& ref = reference_for(reports, r);
    rows.push_back({r.name, std::string(pipeline_name(r.pipeline)),
                    std::to_string(r.batch), fixed(r.forward * 1e-9, 2),
                    fixed(r.training * 1e-9, 2),
                    fixed(r.memory_bytes * 1e-9, 2),
                    fixed(r.training / ref.training, 3),
                    fixed(r.memory_bytes / ref.memory_bytes, 3)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      width[c] = std::max(width[c], row[c].size());
    }
  }
  std::ostringstream os;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) os << "  ";
      if (c < 2) {
        os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        os << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace capvit::cost
