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

#include "capvit/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "capvit/config_json.hpp"
#include "capvit/corpus_io.hpp"
#include "capvit/error.hpp"
#include "json.hpp"

namespace capvit {

namespace {

using json = nlohmann::json;

struct Array {
  std::string name;
  Shape shape;
  std::span<const float> data;
};

void append_f32(std::vector<std::uint8_t>& out, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

float read_f32(const std::uint8_t* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace

void LoadedCheckpoint::restore_optimizer(AdamW<float>& opt) const {
  if (!has_optimizer) throw CheckpointError("checkpoint holds no optimizer state");
  auto& m = opt.first_moments();
  auto& v = opt.second_moments();
  if (m.size() != first_moments.size()) {
    throw CheckpointError("optimizer layout differs from checkpoint");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != first_moments[i].size()) {
      throw CheckpointError("optimizer moment " + std::to_string(i) +
                            " has a different size");
    }
  }
  m = first_moments;
  v = second_moments;
  opt.set_steps(optimizer_steps);
}

void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model,
                     const AdamW<float>* optimizer, std::uint64_t step,
                     const std::string& train_config_json) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const ParamList<float> params = model.params();
  std::vector<Array> arrays;
  for (const auto& p : params) {
    arrays.push_back({p.name, p.tensor.shape(), p.tensor.data()});
  }
  if (optimizer) {
    const auto& m = optimizer->first_moments();
    const auto& v = optimizer->second_moments();
    for (std::size_t i = 0; i < params.size(); ++i) {
      arrays.push_back({"optim.m." + params[i].name, params[i].tensor.shape(), m[i]});
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      arrays.push_back({"optim.v." + params[i].name, params[i].tensor.shape(), v[i]});
    }
  }

  std::vector<std::uint8_t> bin;
  json index = json::array();
  for (const auto& a : arrays) {
    bin.resize((bin.size() + kCheckpointAlign - 1) / kCheckpointAlign *
                   kCheckpointAlign,
               0);
    index.push_back({{"name", a.name},
                     {"shape", a.shape},
                     {"dtype", "float32"},
                     {"file", "weights.bin"},
                     {"byte_offset", bin.size()}});
    for (float x : a.data) append_f32(bin, x);
  }
  json manifest = {
      {"format_version", kCheckpointFormat},
      {"configs",
       {{"model", json::parse(to_json(model.cfg))},
        {"train", json::parse(train_config_json)}}},
      {"step", step},
      {"optimizer_steps", optimizer ? optimizer->steps() : 0},
      {"has_optimizer", optimizer != nullptr},
      {"arrays", index}};
  const std::string text = manifest.dump(2) + "\n";
  corpus::write_file(dir / "manifest.json",
                     std::vector<std::uint8_t>(text.begin(), text.end()));
  corpus::write_file(dir / "weights.bin", bin);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw CheckpointError("checkpoint directory " + dir.string() +
                          " does not exist");
  }
  json manifest;
  std::vector<std::uint8_t> bin;
  try {
    const auto raw = corpus::read_file(dir / "manifest.json");
    manifest = json::parse(raw.begin(), raw.end());
    bin = corpus::read_file(dir / "weights.bin");
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt manifest.json: ") + e.what());
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }

  LoadedCheckpoint out;
  std::map<std::string, json> entries;
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointFormat) {
      throw CheckpointError("unsupported checkpoint format_version");
    }
    const ModelConfig cfg =
        model_config_from_json(manifest.at("configs").at("model").dump());
    out.model = Model<float>::init(cfg, 0);
    out.train_config_json = manifest.at("configs").at("train").dump();
    out.step = manifest.at("step").get<std::uint64_t>();
    out.has_optimizer = manifest.at("has_optimizer").get<bool>();
    out.optimizer_steps = manifest.at("optimizer_steps").get<std::uint64_t>();
    for (const auto& e : manifest.at("arrays")) {
      entries[e.at("name").get<std::string>()] = e;
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt manifest.json: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("manifest config invalid: ") + e.what());
  }

  auto read_array = [&](const std::string& name, std::span<float> dst,
                        const Shape& shape) {
    auto it = entries.find(name);
    if (it == entries.end()) {
      throw CheckpointError("checkpoint is missing array '" + name + "'");
    }
    const json& e = it->second;
    Shape stored;
    std::size_t offset = 0;
    try {
      stored = e.at("shape").get<Shape>();
      offset = e.at("byte_offset").get<std::size_t>();
      if (e.at("dtype").get<std::string>() != "float32" ||
          e.at("file").get<std::string>() != "weights.bin") {
        throw CheckpointError("array '" + name + "' has unsupported dtype/file");
      }
    } catch (const json::exception&) {
      throw CheckpointError("array '" + name + "' has a corrupt index entry");
    }
    if (stored != shape) {
      throw CheckpointError("array '" + name + "' has shape " +
                            shape_str(stored) + ", config expects " +
                            shape_str(shape));
    }
    if (offset > bin.size() || bin.size() - offset < dst.size() * 4) {
      throw CheckpointError("array '" + name + "' is truncated in weights.bin");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = read_f32(bin.data() + offset + 4 * i);
    }
    entries.erase(it);
  };

  ParamList<float> params = out.model.params();
  for (auto& p : params) read_array(p.name, p.tensor.data(), p.tensor.shape());
  if (out.has_optimizer) {
    for (const char* kind : {"optim.m.", "optim.v."}) {
      auto& dst = std::strcmp(kind, "optim.m.") == 0 ? out.first_moments
                                                     : out.second_moments;
      for (auto& p : params) {
        std::vector<float> buf(p.tensor.numel());
        read_array(kind + p.name, buf, p.tensor.shape());
        dst.push_back(std::move(buf));
      }
    }
  }
  if (!entries.empty()) {
    throw CheckpointError("checkpoint has unexpected array '" +
                          entries.begin()->first + "'");
  }
  return out;
}

}  // namespace capvit
