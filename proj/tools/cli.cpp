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

#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "capvit/checkpoint.hpp"
#include "capvit/config_json.hpp"
#include "capvit/corpus_io.hpp"
#include "capvit/cost_model.hpp"
#include "capvit/error.hpp"
#include "capvit/probe_eval.hpp"
#include "capvit/trainer.hpp"
#include "json.hpp"

namespace capvit::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

fs::path output_root() {
  const char* env = std::getenv("CAPVIT_OUT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string());
  }
}

std::pair<std::uint64_t, std::uint64_t> parse_seeds(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    const auto a = std::stoull(text.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument(text);
    const std::string rest = text.substr(colon + 1);
    const auto b = std::stoull(rest, &used);
    if (used != rest.size()) throw std::invalid_argument(text);
    if (b <= a) throw std::invalid_argument(text);
    return {a, b};
  } catch (const std::logic_error&) {
    throw ConfigError("--seeds expects BEGIN:END with BEGIN < END, got '" +
                      text + "'");
  }
}

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("bad keep ratio '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty keep-ratio list");
  return out;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& s : items) {
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
  }
  return out;
}

// Model and training configuration shared by train and sweep.
struct RunFlags {
  std::string config;
  std::optional<std::string> pipeline;
  std::optional<double> keep_ratio;
  std::optional<std::string> stages;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> corpus_seeds;
  std::optional<std::string> mode;
  std::optional<double> noise;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::optional<std::size_t> warmup;
  std::optional<std::size_t> patch;
  std::optional<double> lambda;
  std::string out;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON run config (flags override it)");
    app->add_option("--pipeline", pipeline, "v1 or v2");
    app->add_option("--keep-ratio", keep_ratio, "fraction of visual tokens kept");
    app->add_option("--stages", stages, "stages as RESxSTEPS[,RESxSTEPS...]");
    app->add_option("--seed", seed, "seed for init, masks and batches");
    app->add_option("--corpus-seeds", corpus_seeds, "scene seeds BEGIN:END");
    app->add_option("--mode", mode, "alt_text, recap or recap_v2");
    app->add_option("--noise", noise, "alt_text corruption rate");
    app->add_option("--batch", batch, "batch size for every stage");
    app->add_option("--lr", lr, "peak learning rate for every stage");
    app->add_option("--warmup", warmup, "warmup steps for every stage");
    app->add_option("--patch", patch, "encoder patch size");
    app->add_option("--lambda", lambda, "v1 caption loss weight");
    app->add_option("--out", out, "output directory");
  }
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig default_run_config() {
  RunConfig rc;
  rc.model.decoder.vocab = synth::grammar_vocab().size();
  rc.model.text.vocab = rc.model.decoder.vocab;
  return rc;
}

RunConfig parse_run_config(const std::string& text, RunConfig rc) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  if (!j.contains("schema_version")) {
    throw ConfigError("config: missing 'schema_version'");
  }
  if (j["schema_version"] != kRunConfigSchema) {
    throw ConfigError("config: unsupported schema_version " +
                      j["schema_version"].dump() + " (expected " +
                      std::to_string(kRunConfigSchema) + ")");
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "schema_version") continue;
    if (key == "model") {
      rc.model = model_config_from_json(value.dump(), rc.model);
    } else if (key == "train") {
      rc.train = train_config_from_json(value.dump(), rc.train);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  return rc;
}

std::string run_config_json(const RunConfig& rc) {
  json j;
  j["schema_version"] = kRunConfigSchema;
  j["model"] = json::parse(to_json(rc.model));
  j["train"] = json::parse(to_json(rc.train));
  return j.dump(2) + "\n";
}

RunConfig resolve(const RunFlags& f) {
  RunConfig rc = default_run_config();
  if (!f.config.empty()) rc = parse_run_config(read_text(f.config), rc);
  if (f.pipeline) rc.model.pipeline = parse_pipeline(*f.pipeline);
  if (f.keep_ratio) rc.model.decoder.keep_ratio = *f.keep_ratio;
  if (f.patch) rc.model.encoder.patch_size = *f.patch;
  if (f.lambda) rc.model.lambda_gen = *f.lambda;
  if (f.stages) rc.train.stages = parse_stages(*f.stages, rc.train.stages.front());
  for (auto& s : rc.train.stages) {
    if (f.batch) s.batch_size = *f.batch;
    if (f.lr) s.peak_lr = *f.lr;
    if (f.warmup) s.warmup = *f.warmup;
  }
  if (f.seed) rc.train.seed = *f.seed;
  if (f.corpus_seeds) {
    std::tie(rc.train.corpus.seed_begin, rc.train.corpus.seed_end) =
        parse_seeds(*f.corpus_seeds);
  }
  if (f.mode) rc.train.corpus.mode = synth::parse_caption_mode(*f.mode);
  if (f.noise) rc.train.corpus.noise = *f.noise;
  rc.train.validate();
  rc.model.encoder.image_size = rc.train.stages.front().resolution;
  rc.model.validate();
  return rc;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(10) << v;
  return ss.str();
}

struct TrainOutcome {
  double final_loss = 0.0;
  std::size_t steps = 0;
};

// Trains per `rc` into `dir`: checkpoint/, metrics.csv and config.json.
// A numeric abort still saves the last good parameters before rethrowing.
TrainOutcome train_into(const RunConfig& rc, const fs::path& dir,
                        Model<float>& model, std::ostream& err) {
  make_dir(dir);
  const std::string cfg_json = run_config_json(rc);
  write_text(dir / "config.json", cfg_json);
  const Dataset data(rc.train.corpus, synth::grammar_vocab(),
                     rc.model.decoder.max_len);
  model = Model<float>::init(rc.model, rc.train.seed);
  Trainer trainer(rc.train, model, data);
  auto finish = [&] {
    write_metrics_csv(dir / "metrics.csv", trainer.metrics());
    save_checkpoint(dir / "checkpoint", model, trainer.optimizer(),
                    trainer.global_step(), to_json(rc.train));
  };
  try {
    trainer.run();
  } catch (const NumericError&) {
    finish();
    err << "training aborted after step " << trainer.global_step()
        << "; last good parameters saved to " << (dir / "checkpoint").string()
        << "\n";
    throw;
  }
  finish();
  TrainOutcome o;
  o.steps = trainer.global_step();
  if (!trainer.metrics().empty()) o.final_loss = trainer.metrics().back().loss;
  return o;
}

int cmd_gen_corpus(const std::string& seeds, const std::string& mode,
                   double noise, std::size_t res, std::size_t shard_size,
                   const std::string& out_dir, std::ostream& out) {
  synth::CorpusSpec spec;
  std::tie(spec.seed_begin, spec.seed_end) = parse_seeds(seeds);
  spec.mode = synth::parse_caption_mode(mode);
  spec.noise = noise;
  if (noise < 0.0 || noise > 1.0) throw ConfigError("--noise must lie in [0, 1]");
  if (res == 0) throw ConfigError("--res must be positive");
  if (shard_size == 0) throw ConfigError("--shard-size must be positive");
  const fs::path dir = out_dir.empty() ? output_root() / "corpus" : fs::path(out_dir);
  make_dir(dir);

  const synth::Vocab vocab = synth::grammar_vocab();
  const std::size_t max_len = synth::max_caption_words() + 2;
  json cfg = {{"schema_version", kRunConfigSchema},
              {"corpus",
               {{"seed_begin", spec.seed_begin},
                {"seed_end", spec.seed_end},
                {"mode", std::string(synth::caption_mode_name(spec.mode))},
                {"noise", spec.noise}}},
              {"resolution", res},
              {"max_len", max_len},
              {"shard_size", shard_size}};
  write_text(dir / "config.json", cfg.dump(2) + "\n");
  corpus::write_vocab(dir / "vocab.tsv", vocab);

  corpus::CorpusStream stream(spec, vocab, res, max_len);
  std::size_t shard = 0;
  for (bool more = true; more; ++shard) {
    std::vector<corpus::ShardRecord> records;
    while (records.size() < shard_size) {
      auto r = stream.next();
      if (!r) {
        more = false;
        break;
      }
      records.push_back(std::move(*r));
    }
    if (records.empty()) break;
    char name[32];
    std::snprintf(name, sizeof(name), "shard-%05zu.bin", shard);
    const std::uint64_t sum = corpus::write_shard(dir / name, records);
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(sum));
    out << name << '\t' << records.size() << '\t' << hex << '\n';
  }
  return kExitOk;
}

int cmd_train(const RunFlags& flags, std::ostream& out, std::ostream& err) {
  const RunConfig rc = resolve(flags);
  const fs::path dir = flags.out.empty() ? output_root() / "train" : fs::path(flags.out);
  Model<float> model;
  const TrainOutcome o = train_into(rc, dir, model, err);
  out << "pipeline " << pipeline_name(rc.model.pipeline) << ", " << o.steps
      << " steps, final loss " << fmt(o.final_loss) << "\n"
      << "checkpoint " << (dir / "checkpoint").string() << "\n"
      << "metrics " << (dir / "metrics.csv").string() << "\n";
  return kExitOk;
}

int cmd_sweep(const RunFlags& flags, const std::string& ratios_text,
              std::size_t probe_count, std::ostream& out, std::ostream& err) {
  const std::vector<double> ratios = parse_ratios(ratios_text);
  const RunConfig base = resolve(flags);
  for (double r : ratios) {
    RunConfig rc = base;
    rc.model.decoder.keep_ratio = r;
    rc.model.validate();
  }
  const fs::path dir = flags.out.empty() ? output_root() / "sweep" : fs::path(flags.out);
  make_dir(dir);
  write_text(dir / "config.json", run_config_json(base));

  std::ostringstream csv;
  csv << "keep_ratio,final_loss,exact_match,probe_accuracy,steps\n";
  eval::ProbeTask task;
  task.train_count = task.test_count = probe_count;
  for (double r : ratios) {
    RunConfig rc = base;
    rc.model.decoder.keep_ratio = r;
    std::ostringstream name;
    name << "keep_" << r;
    Model<float> model;
    const TrainOutcome o = train_into(rc, dir / name.str(), model, err);
    const Dataset data(rc.train.corpus, synth::grammar_vocab(),
                       rc.model.decoder.max_len);
    const double em = eval::exact_match(model, data);
    const double probe = eval::probe_accuracy(model, task);
    csv << fmt(r) << ',' << fmt(o.final_loss) << ',' << fmt(em) << ','
        << fmt(probe) << ',' << o.steps << '\n';
  }
  write_text(dir / "sweep.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

int cmd_cost(const std::vector<std::string>& preset_args,
             const std::string& pipelines_text, std::optional<std::size_t> batch,
             std::optional<std::size_t> devices, std::optional<double> keep,
             const std::string& presets_file, const std::string& format,
             const std::string& out_file, std::ostream& out) {
  if (format != "text" && format != "csv") {
    throw ConfigError("--format must be text or csv");
  }
  const auto presets = cost::load_presets(
      presets_file.empty() ? cost::default_presets_path() : fs::path(presets_file));
  std::vector<std::string> names = split_list(preset_args);
  if (names.empty()) {
    for (const auto& p : presets) names.push_back(p.name);
  }
  std::vector<Pipeline> pipelines;
  for (const auto& p : split_list({pipelines_text})) {
    pipelines.push_back(parse_pipeline(p));
  }
  if (pipelines.empty()) throw ConfigError("--pipelines is empty");

  std::vector<cost::CostReport> reports;
  for (const auto& name : names) {
    cost::PipelineSpec spec = cost::find_preset(presets, name).spec;
    if (batch) spec.batch = *batch;
    if (devices) spec.devices = *devices;
    if (keep) spec.keep_ratio = *keep;
    for (Pipeline p : pipelines) {
      spec.pipeline = p;
      spec.validate();
      reports.push_back(cost::evaluate(spec));
    }
  }
  const std::string csv = cost::report_csv(reports);
  if (!out_file.empty()) write_text(out_file, csv);
  out << (format == "csv" ? csv : cost::report_text(reports));
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_dir, const std::vector<std::string>& metric_args,
             const std::optional<std::string>& corpus_seeds,
             const std::string& probe_name, std::size_t probe_count,
             const std::string& out_file, std::ostream& out) {
  std::vector<std::string> metrics = split_list(metric_args);
  if (metrics.empty()) metrics = {"exact_match", "perplexity", "probe_accuracy"};
  for (const auto& m : metrics) {
    if (m != "exact_match" && m != "perplexity" && m != "probe_accuracy") {
      throw ConfigError("unknown metric '" + m +
                        "' (valid: exact_match, perplexity, probe_accuracy)");
    }
  }
  const eval::ProbeLabel label = eval::parse_probe_label(probe_name);
  if (!fs::is_directory(ckpt_dir)) {
    throw CheckpointError("checkpoint directory not found: " + ckpt_dir);
  }
  const LoadedCheckpoint ckpt = load_checkpoint(ckpt_dir);
  const TrainConfig tc =
      train_config_from_json(ckpt.train_config_json, default_run_config().train);
  synth::CorpusSpec corpus = tc.corpus;
  if (corpus_seeds) {
    std::tie(corpus.seed_begin, corpus.seed_end) = parse_seeds(*corpus_seeds);
  }
  const Dataset data(corpus, synth::grammar_vocab(), ckpt.model.cfg.decoder.max_len);

  std::ostringstream csv;
  csv << "task,metric,value,checkpoint,step\n";
  for (const auto& m : metrics) {
    double value = 0.0;
    std::string task = "caption";
    if (m == "exact_match") {
      value = eval::exact_match(ckpt.model, data);
    } else if (m == "perplexity") {
      value = eval::perplexity(ckpt.model, data);
    } else {
      eval::ProbeTask pt;
      pt.label = label;
      pt.train_count = pt.test_count = probe_count;
      value = eval::probe_accuracy(ckpt.model, pt);
      task = "probe_" + std::string(eval::probe_label_name(label));
    }
    csv << task << ',' << m << ',' << fmt(value) << ',' << ckpt_dir << ','
        << ckpt.step << '\n';
  }
  if (!out_file.empty()) {
    write_text(out_file, csv.str());
    json cfg = {{"schema_version", kRunConfigSchema},
                {"checkpoint", ckpt_dir},
                {"metrics", metrics},
                {"corpus",
                 {{"seed_begin", corpus.seed_begin},
                  {"seed_end", corpus.seed_end},
                  {"mode", std::string(synth::caption_mode_name(corpus.mode))},
                  {"noise", corpus.noise}}},
                {"probe_task", probe_name},
                {"probe_count", probe_count}};
    fs::path cfg_path = fs::path(out_file);
    cfg_path.replace_extension(".config.json");
    write_text(cfg_path, cfg.dump(2) + "\n");
  }
  out << csv.str();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"capvit: captioning-pretrained vision encoder toolkit", "capvit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-corpus", "render and write corpus shards");
  std::string seeds, mode = "recap_v2", gen_out;
  double noise = 0.0;
  std::size_t res = 32, shard_size = 1000;
  gen->add_option("--seeds", seeds, "scene seeds BEGIN:END")->required();
  gen->add_option("--mode", mode, "alt_text, recap or recap_v2");
  gen->add_option("--noise", noise, "alt_text corruption rate");
  gen->add_option("--res", res, "image resolution");
  gen->add_option("--shard-size", shard_size, "records per shard");
  gen->add_option("--out", gen_out, "output directory");

  auto* train = app.add_subcommand("train", "train a model");
  RunFlags train_flags;
  train_flags.attach(train);

  auto* sweep = app.add_subcommand("sweep-keep-ratio",
                                   "train one model per keep ratio");
  RunFlags sweep_flags;
  sweep_flags.attach(sweep);
  std::string ratios = "1.0,0.9,0.75,0.5,0.35,0.25,0.1";
  std::size_t sweep_probe = 200;
  sweep->add_option("--ratios", ratios, "comma-separated keep ratios");
  sweep->add_option("--probe-count", sweep_probe,
                    "probe train and test examples per split");

  auto* cost_cmd = app.add_subcommand("cost", "FLOPs and memory report");
  std::vector<std::string> presets;
  std::string pipelines = "v1,v2", presets_file, format = "text", cost_out;
  std::optional<std::size_t> cost_batch, cost_devices;
  std::optional<double> cost_keep;
  cost_cmd->add_option("--preset", presets, "preset name(s)");
  cost_cmd->add_option("--pipelines", pipelines, "comma-separated pipelines");
  cost_cmd->add_option("--batch", cost_batch, "global batch size");
  cost_cmd->add_option("--devices", cost_devices, "device count");
  cost_cmd->add_option("--keep-ratio", cost_keep, "v2 keep ratio");
  cost_cmd->add_option("--presets-file", presets_file, "preset registry JSON");
  cost_cmd->add_option("--format", format, "text or csv");
  cost_cmd->add_option("--out", cost_out, "also write CSV here");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt, probe_name = "shape", eval_out;
  std::vector<std::string> metrics;
  std::optional<std::string> eval_seeds;
  std::size_t eval_probe = 200;
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--metric", metrics,
                       "exact_match, perplexity or probe_accuracy");
  eval_cmd->add_option("--corpus-seeds", eval_seeds,
                       "caption corpus seeds BEGIN:END (default: training corpus)");
  eval_cmd->add_option("--probe-task", probe_name, "shape or color");
  eval_cmd->add_option("--probe-count", eval_probe,
                       "probe train and test examples per split");
  eval_cmd->add_option("--out", eval_out, "also write CSV here");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_corpus(seeds, mode, noise, res, shard_size, gen_out, out);
    }
    if (train->parsed()) return cmd_train(train_flags, out, err);
    if (sweep->parsed()) {
      return cmd_sweep(sweep_flags, ratios, sweep_probe, out, err);
    }
    if (cost_cmd->parsed()) {
      return cmd_cost(presets, pipelines, cost_batch, cost_devices, cost_keep,
                      presets_file, format, cost_out, out);
    }
    return cmd_eval(ckpt, metrics, eval_seeds, probe_name, eval_probe, eval_out,
                    out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace capvit::cli
