#include "splatmark/codec.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

#include "splatmark/error.hpp"
#include "splatmark/hash.hpp"
#include "splatmark/rng.hpp"
#include "splatmark/tensor_file.hpp"

namespace splatmark {

void CodecConfig::validate() const {
  if (message_bits <= 0) throw ConfigError("codec: message_bits must be positive");
  if (chunk_bits != 1 && chunk_bits != 2 && chunk_bits != 4 && chunk_bits != 8) {
    throw ConfigError("codec: chunk_bits must be one of 1, 2, 4, 8 (got " + std::to_string(chunk_bits) + ")");
  }
  if (chunk_count() + 2 > kContextLength) {
    throw ConfigError("codec: token budget exceeded: C + 2 = " + std::to_string(chunk_count() + 2) +
                      " > " + std::to_string(kContextLength));
  }
  const int ids[3] = {pad_id, start_id, end_id};
  for (int id : ids) {
    if (id < 0 || id >= vocab_size) throw ConfigError("codec: reserved id outside the vocabulary");
  }
  if (pad_id == start_id || pad_id == end_id || start_id == end_id) {
    throw ConfigError("codec: reserved ids must be distinct");
  }
  const long long required = static_cast<long long>(chunk_count()) * states();
  if (required > valid_vocab()) {
    throw CapacityError("codec: lookup table needs " + std::to_string(required) + " slots but the valid vocabulary has " +
                        std::to_string(valid_vocab()));
  }
}

// ---- BitMessage --------------------------------------------------------------

BitMessage::BitMessage(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw InputError("BitMessage: bits must be 0 or 1");
  }
}

BitMessage BitMessage::from_string(std::string_view text) {
  std::vector<std::uint8_t> bits;
  bits.reserve(text.size());
  for (char c : text) {
    if (c != '0' && c != '1') throw InputError("message must be a 0/1 string, found '" + std::string(1, c) + "'");
    bits.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return BitMessage(std::move(bits));
}

BitMessage BitMessage::from_hex(std::string_view hex, int bits) {
  if (hex.starts_with("0x") || hex.starts_with("0X")) hex.remove_prefix(2);
  std::vector<std::uint8_t> all;
  for (char c : hex) {
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else throw InputError("invalid hexadecimal digit '" + std::string(1, c) + "'");
    for (int s = 3; s >= 0; --s) all.push_back(static_cast<std::uint8_t>((v >> s) & 1));
  }
  if (static_cast<int>(all.size()) < bits) {
    throw InputError("hex message has " + std::to_string(all.size()) + " bits, expected " + std::to_string(bits));
  }
  const std::size_t extra = all.size() - static_cast<std::size_t>(bits);
  // Leading nibble padding is allowed only when it is zero.
  if (extra >= 4 || std::any_of(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(extra), [](auto b) { return b != 0; })) {
    throw InputError("hex message length does not match " + std::to_string(bits) + " bits");
  }
  return BitMessage(std::vector<std::uint8_t>(all.begin() + static_cast<std::ptrdiff_t>(extra), all.end()));
}

BitMessage BitMessage::from_integer(std::uint64_t value, int bits) {
  if (bits <= 0 || bits > 64) throw InputError("from_integer: bits must be in [1, 64]");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(bits));
  for (int i = 0; i < bits; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((value >> (bits - 1 - i)) & 1);
  return BitMessage(std::move(out));
}

std::string BitMessage::to_string() const {
  std::string s(bits_.size(), '0');
  for (std::size_t i = 0; i < bits_.size(); ++i) s[i] = static_cast<char>('0' + bits_[i]);
  return s;
}

std::uint64_t BitMessage::to_integer() const {
  if (bits_.size() > 64) throw InputError("to_integer: message longer than 64 bits");
  std::uint64_t v = 0;
  for (auto b : bits_) v = (v << 1) | b;
  return v;
}

MessageKey key_of(const BitMessage& m) { return MessageKey{m.to_string()}; }
BitMessage message_of(const MessageKey& k) { return BitMessage::from_string(k.bits); }

// ---- codebook and chunking -----------------------------------------------

BinaryCodebook make_codebook(int chunk_bits) {
  if (chunk_bits != 1 && chunk_bits != 2 && chunk_bits != 4 && chunk_bits != 8) {
    throw ConfigError("codebook: chunk_bits must be one of 1, 2, 4, 8");
  }
  BinaryCodebook cb;
  cb.chunk_bits = chunk_bits;
  cb.rows.resize(std::size_t{1} << chunk_bits);
  for (std::size_t j = 0; j < cb.rows.size(); ++j) {
    auto& row = cb.rows[j];
    row.resize(static_cast<std::size_t>(chunk_bits));
    for (int r = 0; r < chunk_bits; ++r) row[static_cast<std::size_t>(r)] = static_cast<std::uint8_t>((j >> (chunk_bits - 1 - r)) & 1);
  }
  return cb;
}

std::vector<int> chunk_indices(const BitMessage& m, const CodecConfig& cfg) {
  if (m.size() != cfg.message_bits) {
    throw InputError("message has " + std::to_string(m.size()) + " bits, codec expects " +
                     std::to_string(cfg.message_bits));
  }
  const int n = cfg.chunk_bits;
  std::vector<int> out(static_cast<std::size_t>(cfg.chunk_count()), 0);
  for (int i = 0; i < cfg.chunk_count(); ++i) {
    int t = 0;
    for (int j = 0; j < n; ++j) {
      const int pos = i * n + j;
      const int bit = pos < m.size() ? m[pos] : 0;
      t = (t << 1) | bit;
    }
    out[static_cast<std::size_t>(i)] = t;
  }
  return out;
}

// ---- lookup table -------------------------------------------------------------

int LookupTable::value_of(int chunk, int token) const {
  if (chunk < 0 || chunk >= chunks_) return -1;
  const auto& row = reverse_[static_cast<std::size_t>(chunk)];
  auto it = std::lower_bound(row.begin(), row.end(), std::make_pair(token, -1));
  if (it == row.end() || it->first != token) return -1;
  return it->second;
}

LookupTable LookupTable::from_ids(int chunks, int states, std::uint64_t seed, std::vector<int> ids) {
  if (static_cast<long long>(ids.size()) != static_cast<long long>(chunks) * states) {
    throw FormatError("lookup table: id count does not match chunks x states");
  }
  LookupTable t;
  t.chunks_ = chunks;
  t.states_ = states;
  t.seed_ = seed;
  t.ids_ = std::move(ids);
  t.reverse_.resize(static_cast<std::size_t>(chunks));
  for (int i = 0; i < chunks; ++i) {
    auto& row = t.reverse_[static_cast<std::size_t>(i)];
    for (int j = 0; j < states; ++j) row.emplace_back(t.at(i, j), j);
    std::sort(row.begin(), row.end());
  }
  Sha256 h;
  h.update("splatmark.lookup_table/v1:" + std::to_string(chunks) + "x" + std::to_string(states) + ":");
  std::vector<std::int64_t> wide(t.ids_.begin(), t.ids_.end());
  h.update_values(std::span<const std::int64_t>(wide));
  t.hash_ = h.hex_digest();
  return t;
}

namespace {

std::vector<int> valid_vocabulary(const CodecConfig& cfg) {
  std::vector<int> v;
  v.reserve(static_cast<std::size_t>(cfg.valid_vocab()));
  for (int id = 0; id < cfg.vocab_size; ++id) {
    if (id != cfg.pad_id && id != cfg.start_id && id != cfg.end_id) v.push_back(id);
  }
  return v;
}

LookupTable table_from_permutation(const CodecConfig& cfg, const std::vector<int>& p) {
  const int states = cfg.states();
  std::vector<int> ids(static_cast<std::size_t>(cfg.chunk_count() * states));
  // Row i takes the i-th consecutive block of 2^n entries of the permutation.
  std::copy_n(p.begin(), ids.size(), ids.begin());
  return LookupTable::from_ids(cfg.chunk_count(), states, cfg.seed, std::move(ids));
}

}  // namespace

LookupTable build_lookup_table(const CodecConfig& cfg) {
  cfg.validate();
  std::vector<int> p = valid_vocabulary(cfg);
  Rng rng(cfg.seed);
  rng.shuffle(p);
  return table_from_permutation(cfg, p);
}

LookupTable build_identity_lookup_table(const CodecConfig& cfg) {
  cfg.validate();
  return table_from_permutation(cfg, valid_vocabulary(cfg));
}

// ---- tokenization ----------------------------------------------------------

TokenSequence tokenize(const BitMessage& m, const LookupTable& table, const CodecConfig& cfg) {
  if (table.chunks() != cfg.chunk_count() || table.states() != cfg.states()) {
    throw InputError("tokenize: table was built for a different (C, n)");
  }
  const std::vector<int> t = chunk_indices(m, cfg);
  TokenSequence seq;
  seq.ids.assign(kContextLength, cfg.pad_id);
  seq.ids[0] = cfg.start_id;
  for (int i = 0; i < cfg.chunk_count(); ++i) seq.ids[static_cast<std::size_t>(i + 1)] = table.at(i, t[static_cast<std::size_t>(i)]);
  seq.ids[static_cast<std::size_t>(cfg.chunk_count() + 1)] = cfg.end_id;
  return seq;
}

BitMessage detokenize(const TokenSequence& t, const LookupTable& table, const CodecConfig& cfg) {
  if (static_cast<int>(t.ids.size()) != kContextLength) {
    throw CorruptionError("detokenize: sequence has " + std::to_string(t.ids.size()) + " ids, expected 77");
  }
  const int c = cfg.chunk_count();
  if (t.ids[0] != cfg.start_id) throw CorruptionError("detokenize: position 0 is not the start token");
  if (t.ids[static_cast<std::size_t>(c + 1)] != cfg.end_id) {
    throw CorruptionError("detokenize: position " + std::to_string(c + 1) + " is not the end token");
  }
  const BinaryCodebook cb = make_codebook(cfg.chunk_bits);
  std::vector<std::uint8_t> bits;
  bits.reserve(static_cast<std::size_t>(c * cfg.chunk_bits));
  for (int i = 0; i < c; ++i) {
    const int token = t.ids[static_cast<std::size_t>(i + 1)];
    const int value = table.value_of(i, token);
    if (value < 0) {
      throw CorruptionError("detokenize: token " + std::to_string(token) + " at position " + std::to_string(i + 1) +
                            " is not in lookup row " + std::to_string(i));
    }
    const auto& row = cb.rows[static_cast<std::size_t>(value)];
    bits.insert(bits.end(), row.begin(), row.end());
  }
  for (std::size_t i = static_cast<std::size_t>(c + 2); i < t.ids.size(); ++i) {
    if (t.ids[i] != cfg.pad_id) throw CorruptionError("detokenize: position " + std::to_string(i) + " is not padding");
  }
  bits.resize(static_cast<std::size_t>(cfg.message_bits));
  return BitMessage(std::move(bits));
}

// ---- files --------------------------------------------------------------------

void save_lookup_table(const std::string& path, const LookupTable& table, const CodecConfig& cfg) {
  TensorFile f;
  f.set_metadata("format", "splatmark.lookup_table");
  f.set_metadata("version", "1");
  f.set_metadata("seed", std::to_string(table.seed()));
  f.set_metadata("chunk_bits", std::to_string(cfg.chunk_bits));
  f.set_metadata("chunks", std::to_string(table.chunks()));
  f.set_metadata("message_bits", std::to_string(cfg.message_bits));
  f.set_metadata("vocab_size", std::to_string(cfg.vocab_size));
  f.set_metadata("reserved_ids", std::to_string(cfg.pad_id) + "," + std::to_string(cfg.start_id) + "," +
                                     std::to_string(cfg.end_id));
  f.set_metadata("shuffle", Rng::kShuffleAlgorithm);
  f.set_metadata("content_hash", table.content_hash());
  std::vector<std::int64_t> ids(table.ids().begin(), table.ids().end());
  f.put_i64("table", ids, {table.chunks(), table.states()});
  f.save(path);
}

LookupTable load_lookup_table(const std::string& path, CodecConfig* cfg_out) {
  const TensorFile f = TensorFile::load(path);
  f.expect_format("splatmark.lookup_table", 1);
  const auto& e = f.entry("table");
  if (e.shape.size() != 2) throw FormatError("lookup table: 'table' must be 2-D");
  const auto raw = f.i64("table");
  std::vector<int> ids;
  ids.reserve(raw.size());
  for (const std::int64_t v : raw) {
    if (v < 0 || v > std::numeric_limits<int>::max()) throw CorruptionError("lookup table: token id out of range in '" + path + "'");
    ids.push_back(static_cast<int>(v));
  }
  const std::uint64_t seed = std::stoull(f.metadata("seed"));
  LookupTable t = LookupTable::from_ids(static_cast<int>(e.shape[0]), static_cast<int>(e.shape[1]), seed, std::move(ids));
  if (t.content_hash() != f.metadata("content_hash")) {
    throw CorruptionError("lookup table: content hash mismatch in '" + path + "'");
  }
  if (cfg_out != nullptr) {
    cfg_out->chunk_bits = std::stoi(f.metadata("chunk_bits"));
    cfg_out->message_bits = std::stoi(f.metadata("message_bits"));
    cfg_out->vocab_size = std::stoi(f.metadata("vocab_size"));
    cfg_out->seed = seed;
    const std::string r = f.metadata("reserved_ids");
    std::sscanf(r.c_str(), "%d,%d,%d", &cfg_out->pad_id, &cfg_out->start_id, &cfg_out->end_id);
  }
  return t;
}

std::vector<BitMessage> read_message_file(const std::string& path, int bits) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open message file '" + path + "'");
  std::vector<BitMessage> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    if (static_cast<int>(line.size()) != bits) {
      throw InputError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(bits) + " bits, got " +
                       std::to_string(line.size()));
    }
    out.push_back(BitMessage::from_string(line));
  }
  return out;
}

void write_message_file(const std::string& path, const std::vector<BitMessage>& messages) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& m : messages) out << m.to_string() << '\n';
}

}  // namespace splatmark
