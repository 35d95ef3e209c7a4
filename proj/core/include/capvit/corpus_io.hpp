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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "capvit/data_synth.hpp"

// Corpus shard and vocabulary files.
//
// Shard: the ASCII line "CAPVIT-CORPUS v1\n" followed by records, each
// little-endian:
//   u32 H, u32 W, H*W*3 f32 pixels,
//   u16 n, n x u16 synthetic-caption ids (BOS .. EOS, no padding),
//   u16 m, m x u16 web-caption ids.
// Vocabulary: UTF-8 text, one "token<TAB>id" line per entry, ids ascending.
namespace capvit::corpus {

inline constexpr std::string_view kShardMagic = "CAPVIT-CORPUS v1\n";

struct ShardRecord {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> pixels;
  std::vector<std::uint16_t> synthetic_ids;
  std::vector<std::uint16_t> web_ids;

  bool operator==(const ShardRecord&) const = default;
};

// Renders and tokenizes one corpus record.
ShardRecord make_shard_record(const synth::CorpusRecord& record,
                              const synth::Vocab& vocab,
                              std::size_t resolution, std::size_t max_len);

// In-memory streaming over a corpus spec, one record per seed.
class CorpusStream {
 public:
  CorpusStream(synth::CorpusSpec spec, synth::Vocab vocab,
               std::size_t resolution, std::size_t max_len);

  std::optional<ShardRecord> next();
  std::uint64_t position() const { return next_seed_; }

 private:
  synth::CorpusSpec spec_;
  synth::Vocab vocab_;
  std::size_t resolution_;
  std::size_t max_len_;
  std::uint64_t next_seed_;
};

std::vector<std::uint8_t> encode_shard(const std::vector<ShardRecord>& records);
std::vector<ShardRecord> decode_shard(const std::vector<std::uint8_t>& bytes);

// Write/read shard files; write returns the FNV-1a checksum of the bytes.
std::uint64_t write_shard(const std::filesystem::path& path,
                          const std::vector<ShardRecord>& records);
std::vector<ShardRecord> read_shard(const std::filesystem::path& path);

void write_vocab(const std::filesystem::path& path, const synth::Vocab& vocab);
synth::Vocab read_vocab(const std::filesystem::path& path);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);
std::uint64_t file_checksum(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes);

}  // namespace capvit::corpus
