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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "helpers.hpp"

namespace fs = std::filesystem;
using capvit::cli::run_cli;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> v;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small, fast training flags shared by the train/sweep/eval cases.
std::vector<std::string> quick(std::vector<std::string> args) {
  for (const char* f : {"--patch", "16", "--batch", "4", "--corpus-seeds", "0:8",
                        "--warmup", "1"}) {
    args.emplace_back(f);
  }
  return args;
}

}  // namespace

TEST_CASE("gen-corpus writes one shard with stable checksums") {
  const fs::path root = capvit::testing::scratch_dir("cli_gen");
  const Result a = run({"gen-corpus", "--seeds", "0:1000", "--mode", "recap_v2",
                        "--res", "32", "--out", (root / "a").string()});
  const Result b = run({"gen-corpus", "--seeds", "0:1000", "--mode", "recap_v2",
                        "--res", "32", "--out", (root / "b").string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  const auto rows = lines(a.out);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].rfind("shard-00000.bin\t1000\t", 0) == 0);
  CHECK(a.out == b.out);
  CHECK(fs::exists(root / "a" / "config.json"));
  CHECK(fs::exists(root / "a" / "vocab.tsv"));

  const Result bad = run({"gen-corpus", "--seeds", "0:10", "--mode", "bogus",
                          "--out", (root / "c").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("recap_v2") != std::string::npos);
  CHECK(run({"gen-corpus", "--seeds", "5:1", "--out", (root / "d").string()}).code == 2);
  CHECK(run({"gen-corpus"}).code == 2);
}

TEST_CASE("train writes checkpoint, metrics and resolved config") {
  const fs::path root = capvit::testing::scratch_dir("cli_train");
  const Result r = run(quick({"train", "--pipeline", "v2", "--keep-ratio", "0.35",
                              "--stages", "32x5,64x3", "--out", (root / "v2").string()}));
  REQUIRE(r.code == 0);
  CHECK(lines(slurp(root / "v2" / "metrics.csv")).size() == 1 + 8);
  CHECK(fs::is_directory(root / "v2" / "checkpoint"));
  const std::string cfg = slurp(root / "v2" / "config.json");
  CHECK(cfg.find("\"schema_version\"") != std::string::npos);
  CHECK(cfg.find("0.35") != std::string::npos);

  // The resolved config reproduces the run.
  const Result again = run({"train", "--config", (root / "v2" / "config.json").string(),
                            "--out", (root / "again").string()});
  REQUIRE(again.code == 0);
  CHECK(slurp(root / "again" / "metrics.csv") == slurp(root / "v2" / "metrics.csv"));

  const Result v1 = run(quick({"train", "--pipeline", "v1", "--stages", "32x3",
                               "--out", (root / "v1").string()}));
  CHECK(v1.code == 0);
  CHECK(v1.out.find("v1") != std::string::npos);
  CHECK(lines(slurp(root / "v1" / "metrics.csv")).size() == 1 + 3);

  CHECK(run(quick({"train", "--keep-ratio", "0", "--out", (root / "k0").string()})).code == 2);
  CHECK(run(quick({"train", "--stages", "64x2,32x2", "--out", (root / "ord").string()})).code == 2);
  CHECK(run(quick({"train", "--pipeline", "v3", "--out", (root / "v3").string()})).code == 2);

  fs::create_directories(root / "cfg");
  std::ofstream(root / "cfg" / "bad.json") << R"({"schema_version":1,"train":{"stpes":3}})";
  const Result unknown = run({"train", "--config", (root / "cfg" / "bad.json").string(),
                              "--out", (root / "bad").string()});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("stpes") != std::string::npos);
}

TEST_CASE("train aborts with exit 3 on a numeric blowup") {
  const fs::path root = capvit::testing::scratch_dir("cli_nan");
  const Result r = run(quick({"train", "--stages", "32x20", "--lr", "1e30",
                              "--out", (root / "nan").string()}));
  CHECK(r.code == 3);
  CHECK(fs::is_directory(root / "nan" / "checkpoint"));
}

TEST_CASE("CAPVIT_OUT sets the default output root") {
  const fs::path root = capvit::testing::scratch_dir("cli_env");
  ::setenv("CAPVIT_OUT", root.c_str(), 1);
  const Result r = run({"gen-corpus", "--seeds", "0:3"});
  ::unsetenv("CAPVIT_OUT");
  CHECK(r.code == 0);
  CHECK(fs::exists(root / "corpus" / "shard-00000.bin"));
}

TEST_CASE("sweep emits one row per ratio with equal budgets") {
  const fs::path root = capvit::testing::scratch_dir("cli_sweep");
  const Result one = run(quick({"sweep-keep-ratio", "--ratios", "0.5", "--stages", "32x2",
                                "--probe-count", "20", "--out", (root / "one").string()}));
  REQUIRE(one.code == 0);
  const auto rows = lines(one.out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == "keep_ratio,final_loss,exact_match,probe_accuracy,steps");
  CHECK(slurp(root / "one" / "sweep.csv") == one.out);

  const Result two = run(quick({"sweep-keep-ratio", "--ratios", "1.0,0.1", "--stages",
                                "32x2", "--probe-count", "20", "--out",
                                (root / "two").string()}));
  REQUIRE(two.code == 0);
  const auto r2 = lines(two.out);
  REQUIRE(r2.size() == 3);
  CHECK(r2[1].substr(r2[1].rfind(',')) == ",2");
  CHECK(r2[2].substr(r2[2].rfind(',')) == ",2");
  CHECK(run(quick({"sweep-keep-ratio", "--ratios", "0.5,1.5", "--stages", "32x2",
                   "--out", (root / "bad").string()})).code == 2);
}

TEST_CASE("cost reports presets") {
  const Result r = run({"cost", "--preset", "L14-224", "--pipelines", "v1,v2",
                        "--batch", "2048", "--format", "csv"});
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].find("memory_gb") != std::string::npos);
  CHECK(rows[0].find("flops_ratio") != std::string::npos);
  const Result text = run({"cost", "--preset", "SoViT400M-384"});
  CHECK(text.code == 0);
  CHECK(text.out.find("SoViT400M-384") != std::string::npos);
  const Result bad = run({"cost", "--preset", "nope"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("L14-224") != std::string::npos);
  CHECK(run({"cost", "--format", "xml"}).code == 2);
}

TEST_CASE("eval reports metrics for a checkpoint") {
  const fs::path root = capvit::testing::scratch_dir("cli_eval");
  REQUIRE(run(quick({"train", "--stages", "32x2", "--out", (root / "run").string()})).code == 0);
  const std::string ckpt = (root / "run" / "checkpoint").string();

  const Result all = run({"eval", "--checkpoint", ckpt, "--probe-count", "20",
                          "--out", (root / "eval.csv").string()});
  REQUIRE(all.code == 0);
  const auto rows = lines(all.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "task,metric,value,checkpoint,step");
  CHECK(rows[1].rfind("caption,exact_match,", 0) == 0);
  CHECK(rows[2].rfind("caption,perplexity,", 0) == 0);
  CHECK(rows[3].rfind("probe_shape,probe_accuracy,", 0) == 0);
  CHECK(slurp(root / "eval.csv") == all.out);
  CHECK(fs::exists(root / "eval.config.json"));
  CHECK(run({"eval", "--checkpoint", ckpt, "--probe-count", "20"}).out == all.out);

  const Result one = run({"eval", "--checkpoint", ckpt, "--metric", "exact_match"});
  CHECK(one.code == 0);
  CHECK(lines(one.out).size() == 2);

  CHECK(run({"eval", "--checkpoint", (root / "missing").string()}).code == 2);
  CHECK(run({"eval", "--checkpoint", ckpt, "--metric", "bleu"}).code == 2);

  const fs::path bad = root / "bad";
  fs::copy(ckpt, bad);
  fs::path victim;
  for (const auto& e : fs::directory_iterator(bad)) {
    if (e.path().extension() == ".bin") victim = e.path();
  }
  REQUIRE(!victim.empty());
  fs::resize_file(victim, fs::file_size(victim) - 1);
  const Result corrupt = run({"eval", "--checkpoint", bad.string()});
  CHECK(corrupt.code == 2);
  CHECK(corrupt.err.find("truncated") != std::string::npos);
  CHECK(corrupt.err.find("array '") != std::string::npos);
}

TEST_CASE("usage errors") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}
