#pragma once

// Bit-compressed tokenization: an L-bit message is cut into C = ceil(L/n)
// chunks of n bits, each chunk value selects one token from its own row of a
// seeded, position-aware lookup table, and the row tokens are framed by the
// start/end ids and padded to the fixed 77-slot context.

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace splatmark {

inline constexpr int kContextLength = 77;

struct CodecConfig {
  int message_bits = 16;      // L
  int chunk_bits = 1;         // n, one of 1, 2, 4, 8
  int vocab_size = 8192;
  int pad_id = 0;
  int start_id = 1;
  int end_id = 2;
  std::uint64_t seed = 0;

  int chunk_count() const { return (message_bits + chunk_bits - 1) / chunk_bits; }
  int pad_bits() const { return chunk_count() * chunk_bits - message_bits; }
  int states() const { return 1 << chunk_bits; }
  int valid_vocab() const { return vocab_size - 3; }

  /// Throws ConfigError for range/budget violations and CapacityError when
  /// the table cannot fit the valid vocabulary.
  void validate() const;
};

/// An L-bit payload. Bits are stored one per byte, values 0 or 1.
class BitMessage {
 public:
  BitMessage() = default;
  explicit BitMessage(std::vector<std::uint8_t> bits);
  /// Parses a 0/1 string; throws InputError on any other character.
  static BitMessage from_string(std::string_view text);
  /// Parses hexadecimal (big-endian) into exactly `bits` bits.
  static BitMessage from_hex(std::string_view hex, int bits);
  /// Big-endian bits of `value`, most significant first; bits <= 64.
  static BitMessage from_integer(std::uint64_t value, int bits);

  int size() const { return static_cast<int>(bits_.size()); }
  std::uint8_t operator[](int i) const { return bits_[static_cast<std::size_t>(i)]; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::string to_string() const;
  /// Big-endian integer value; requires size() <= 64.
  std::uint64_t to_integer() const;

  friend bool operator==(const BitMessage&, const BitMessage&) = default;
  friend auto operator<=>(const BitMessage&, const BitMessage&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Identity of a message for bookkeeping. The key is the bit string itself,
/// so ordering by key equals ordering by big-endian integer value at any L.
struct MessageKey {
  std::string bits;
  friend bool operator==(const MessageKey&, const MessageKey&) = default;
  friend auto operator<=>(const MessageKey&, const MessageKey&) = default;
};

MessageKey key_of(const BitMessage& m);
BitMessage message_of(const MessageKey& k);

struct MessageKeyHash {
  std::size_t operator()(const MessageKey& k) const noexcept { return std::hash<std::string>{}(k.bits); }
};

/// 2^n x n table of bits; row j is the big-endian expansion of j.
struct BinaryCodebook {
  int chunk_bits = 0;
  std::vector<std::vector<std::uint8_t>> rows;
};

BinaryCodebook make_codebook(int chunk_bits);

/// Chunk values t_i = sum_j b_ij 2^(n-j); the last chunk is zero-padded on the right.
std::vector<int> chunk_indices(const BitMessage& m, const CodecConfig& cfg);

class LookupTable {
 public:
  /// Row i, column j (both 0-based) holds the token for chunk i taking value j.
  int at(int chunk, int value) const { return ids_[static_cast<std::size_t>(chunk * states_ + value)]; }
  int chunks() const { return chunks_; }
  int states() const { return states_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<int>& ids() const { return ids_; }
  const std::string& content_hash() const { return hash_; }
  /// Chunk value of `token` at `chunk`, or -1 when the token is not in that row.
  int value_of(int chunk, int token) const;

  static LookupTable from_ids(int chunks, int states, std::uint64_t seed, std::vector<int> ids);

 private:
  int chunks_ = 0;
  int states_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<int> ids_;
  std::vector<std::vector<std::pair<int, int>>> reverse_;  // per chunk: sorted (token, value)
  std::string hash_;
};

/// Seeded table; permutation uses Rng::kShuffleAlgorithm.
LookupTable build_lookup_table(const CodecConfig& cfg);
/// Table over the unshuffled valid vocabulary, for tests.
LookupTable build_identity_lookup_table(const CodecConfig& cfg);

struct TokenSequence {
  std::vector<int> ids;  // always kContextLength entries
};

TokenSequence tokenize(const BitMessage& m, const LookupTable& table, const CodecConfig& cfg);
/// Inverse of tokenize; throws CorruptionError naming the first bad position.
BitMessage detokenize(const TokenSequence& t, const LookupTable& table, const CodecConfig& cfg);

/// Writes/reads the versioned table container.
void save_lookup_table(const std::string& path, const LookupTable& table, const CodecConfig& cfg);
LookupTable load_lookup_table(const std::string& path, CodecConfig* cfg_out = nullptr);

/// One 0/1 string per line; each must have exactly `bits` characters.
std::vector<BitMessage> read_message_file(const std::string& path, int bits);
void write_message_file(const std::string& path, const std::vector<BitMessage>& messages);

}  // namespace splatmark
