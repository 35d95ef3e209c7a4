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

#include "capvit/corpus_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "capvit/error.hpp"

namespace capvit::corpus {

namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <typename U>
  U get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(U)) {
      throw IoError(std::string("corpus shard truncated while reading ") + what);
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(U);
    return v;
  }

  void expect(std::string_view magic) {
    if (bytes_.size() < magic.size() ||
        std::memcmp(bytes_.data(), magic.data(), magic.size()) != 0) {
      throw IoError("not a corpus shard (missing 'CAPVIT-CORPUS v1' header)");
    }
    pos_ = magic.size();
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint16_t> to_u16(const std::vector<int>& ids) {
  std::vector<std::uint16_t> out;
  for (int id : ids) out.push_back(static_cast<std::uint16_t>(id));
  return out;
}

}  // namespace

ShardRecord make_shard_record(const synth::CorpusRecord& record,
                              const synth::Vocab& vocab,
                              std::size_t resolution, std::size_t max_len) {
  synth::Image img = synth::render(record.scene, resolution, resolution);
  ShardRecord r;
  r.height = static_cast<std::uint32_t>(img.height);
  r.width = static_cast<std::uint32_t>(img.width);
  r.pixels = std::move(img.pixels);
  r.synthetic_ids = to_u16(synth::strip_padding(
      synth::tokenize(record.captions.synthetic, vocab, max_len)));
  r.web_ids = to_u16(synth::strip_padding(
      synth::tokenize(record.captions.web, vocab, max_len)));
  return r;
}

CorpusStream::CorpusStream(synth::CorpusSpec spec, synth::Vocab vocab,
                           std::size_t resolution, std::size_t max_len)
    : spec_(spec),
      vocab_(std::move(vocab)),
      resolution_(resolution),
      max_len_(max_len),
      next_seed_(spec.seed_begin) {}

std::optional<ShardRecord> CorpusStream::next() {
  if (next_seed_ >= spec_.seed_end) return std::nullopt;
  const auto rec = synth::make_record(next_seed_++, spec_);
  return make_shard_record(rec, vocab_, resolution_, max_len_);
}

std::vector<std::uint8_t> encode_shard(const std::vector<ShardRecord>& records) {
  std::vector<std::uint8_t> out(kShardMagic.begin(), kShardMagic.end());
  for (const auto& r : records) {
    if (r.pixels.size() != static_cast<std::size_t>(r.height) * r.width * 3) {
      throw DimensionError("shard record pixel count does not match H x W x 3");
    }
    put(out, r.height);
    put(out, r.width);
    for (float p : r.pixels) put_f32(out, p);
    put(out, static_cast<std::uint16_t>(r.synthetic_ids.size()));
    for (auto id : r.synthetic_ids) put(out, id);
    put(out, static_cast<std::uint16_t>(r.web_ids.size()));
    for (auto id : r.web_ids) put(out, id);
  }
  return out;
}

std::vector<ShardRecord> decode_shard(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  in.expect(kShardMagic);
  std::vector<ShardRecord> records;
  while (!in.done()) {
    ShardRecord r;
    r.height = in.get<std::uint32_t>("height");
    r.width = in.get<std::uint32_t>("width");
    const std::size_t n = static_cast<std::size_t>(r.height) * r.width * 3;
    r.pixels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      r.pixels[i] = std::bit_cast<float>(in.get<std::uint32_t>("pixels"));
    }
    const auto ns = in.get<std::uint16_t>("synthetic count");
    for (std::uint16_t i = 0; i < ns; ++i) {
      r.synthetic_ids.push_back(in.get<std::uint16_t>("synthetic ids"));
    }
    const auto nw = in.get<std::uint16_t>("web count");
    for (std::uint16_t i = 0; i < nw; ++i) {
      r.web_ids.push_back(in.get<std::uint16_t>("web ids"));
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return fnv1a64(bytes.data(), bytes.size());
}

std::uint64_t write_shard(const std::filesystem::path& path,
                          const std::vector<ShardRecord>& records) {
  const auto bytes = encode_shard(records);
  write_file(path, bytes);
  return fnv1a64(bytes.data(), bytes.size());
}

std::vector<ShardRecord> read_shard(const std::filesystem::path& path) {
  return decode_shard(read_file(path));
}

void write_vocab(const std::filesystem::path& path, const synth::Vocab& vocab) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    out << vocab.tokens()[i] << '\t' << i << '\n';
  }
}

synth::Vocab read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IoError("vocab line without a tab: '" + line + "'");
    }
    const std::size_t id = std::stoul(line.substr(tab + 1));
    if (id != tokens.size()) {
      throw IoError("vocab ids must be dense and ascending near '" + line + "'");
    }
    tokens.push_back(line.substr(0, tab));
  }
  return synth::Vocab::from_tokens(std::move(tokens));
}

}  // namespace capvit::corpus
