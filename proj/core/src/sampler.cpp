#include "splatmark/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "splatmark/decoder.hpp"
#include "splatmark/error.hpp"

namespace splatmark {

namespace {

// Small spaces are enumerated instead of rejection-sampled once the
// unseen remainder gets thin.
constexpr int kEnumerateBits = 24;

std::int64_t space_size(int bits) { return bits >= 62 ? -1 : (std::int64_t{1} << bits); }

}  // namespace

std::int64_t SamplerConfig::capacity() const {
  const std::int64_t space = space_size(message_bits);
  return space < 0 ? buffer_size : std::min<std::int64_t>(space, buffer_size);
}

void SamplerConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("sampler: " + what); };
  if (message_bits <= 0) fail("message_bits must be positive");
  if (buffer_size < 1) fail("buffer_size K must be at least 1");
  if (!(hard_sigma > 0.0 && hard_sigma <= 1.0)) fail("hard_sigma must lie in (0, 1]");
  if (!(tau0 > 0.0 && tau0 <= 1.0)) fail("tau0 must lie in (0, 1]");
  if (!(alpha >= 0.0)) fail("alpha must be nonnegative");
  if (epochs < 0 || freeze_epoch < 0 || freeze_epoch > epochs) fail("freeze_epoch must lie in [0, epochs]");
  if (!(smoothing >= 0.0 && smoothing <= 1.0)) fail("smoothing must lie in [0, 1]");
}

void AccuracyMemory::record(const MessageKey& key, double accuracy, double smoothing) {
  auto it = records_.find(key);
  if (it == records_.end()) {
    records_.emplace(key, accuracy);
  } else {
    it->second = smoothing * it->second + (1.0 - smoothing) * accuracy;
  }
}

double AccuracyMemory::at(const MessageKey& key) const {
  auto it = records_.find(key);
  if (it == records_.end()) throw InputError("accuracy memory: no record for " + key.bits);
  return it->second;
}

void update_stats(AccuracyMemory& memory, std::span<const BitMessage> truth, const ad::Matrix& bit_logits,
                  const SamplerConfig& cfg) {
  if (bit_logits.rows() != static_cast<ad::Index>(truth.size())) {
    throw InputError("update_stats: logits and messages differ in batch size");
  }
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const BitMessage pred = predict_bits(bit_logits.row(static_cast<ad::Index>(k)));
    const double acc = bit_accuracy(pred, truth[k]);
    const MessageKey key = key_of(truth[k]);
    if (acc < 1.0 || (cfg.update_all_recorded && memory.contains(key))) memory.record(key, acc, cfg.smoothing);
  }
}

double hard_ratio(int epoch, const SamplerConfig& cfg) {
  return std::min(1.0, cfg.tau0 + cfg.alpha * static_cast<double>(epoch));
}

std::vector<BitMessage> sample_hard(const AccuracyMemory& memory, double sigma, std::size_t k) {
  std::vector<std::pair<double, const MessageKey*>> hard;
  for (const auto& [key, acc] : memory.records()) {
    if (acc < sigma) hard.emplace_back(acc, &key);
  }
  // Records iterate in key order, so a stable sort keeps ties by key.
  std::stable_sort(hard.begin(), hard.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<BitMessage> out;
  for (std::size_t i = 0; i < hard.size() && i < k; ++i) out.push_back(message_of(*hard[i].second));
  return out;
}

BitMessage random_message(int message_bits, Rng& rng) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(message_bits));
  std::uint64_t word = 0;
  for (int i = 0; i < message_bits; ++i) {
    if (i % 64 == 0) word = rng.next_u64();
    bits[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((word >> (63 - i % 64)) & 1);
  }
  return BitMessage(std::move(bits));
}

std::vector<BitMessage> sample_unseen(std::size_t k, KeySet& seen, int message_bits, Rng& rng, const KeySet* exclude) {
  std::vector<BitMessage> out;
  if (k == 0) return out;
  out.reserve(k);
  const std::int64_t space = space_size(message_bits);
  const std::int64_t unseen = space < 0 ? -1 : space - static_cast<std::int64_t>(seen.size());

  if (space >= 0 && message_bits <= kEnumerateBits && unseen < static_cast<std::int64_t>(8 * k)) {
    std::vector<BitMessage> pool;
    for (std::int64_t v = 0; v < space; ++v) {
      BitMessage m = BitMessage::from_integer(static_cast<std::uint64_t>(v), message_bits);
      if (!seen.count(key_of(m))) pool.push_back(std::move(m));
    }
    rng.shuffle(pool);
    if (pool.size() > k) pool.resize(k);
    for (auto& m : pool) {
      seen.insert(key_of(m));
      out.push_back(std::move(m));
    }
    if (out.size() < k) {
      KeySet taken;
      for (const auto& m : out) taken.insert(key_of(m));
      std::vector<MessageKey> fallback;
      for (const auto& key : seen) {
        if (!taken.count(key) && (exclude == nullptr || !exclude->count(key))) fallback.push_back(key);
      }
      std::sort(fallback.begin(), fallback.end());
      rng.shuffle(fallback);
      for (std::size_t i = 0; i < fallback.size() && out.size() < k; ++i) out.push_back(message_of(fallback[i]));
    }
    return out;
  }

  while (out.size() < k) {
    BitMessage m = random_message(message_bits, rng);
    if (seen.insert(key_of(m)).second) out.push_back(std::move(m));
  }
  return out;
}

BufferBuild initial_buffer(KeySet& seen, const SamplerConfig& cfg, Rng& rng) {
  BufferBuild b;
  b.messages = sample_unseen(static_cast<std::size_t>(cfg.capacity()), seen, cfg.message_bits, rng);
  return b;
}

BufferBuild rebuild_buffer(int epoch, const AccuracyMemory& memory, KeySet& seen,
                           std::span<const BitMessage> current, const SamplerConfig& cfg, Rng& rng) {
  const auto cap = static_cast<std::size_t>(cfg.capacity());
  BufferBuild b;
  if (epoch < cfg.freeze_epoch) {
    const auto k_hard = static_cast<std::size_t>(std::floor(hard_ratio(epoch, cfg) * static_cast<double>(cap)));
    b.messages = sample_hard(memory, cfg.hard_sigma, k_hard);
    b.hard_count = b.messages.size();
    KeySet hard;
    for (const auto& m : b.messages) hard.insert(key_of(m));
    for (auto& m : sample_unseen(cap - b.messages.size(), seen, cfg.message_bits, rng, &hard)) {
      b.messages.push_back(std::move(m));
    }
  } else {
    b.frozen = true;
    b.messages = sample_hard(memory, 2.0, cap);
    b.hard_count = b.messages.size();
    KeySet taken;
    for (const auto& m : b.messages) taken.insert(key_of(m));
    for (const auto& m : current) {
      if (b.messages.size() >= cap) break;
      if (taken.insert(key_of(m)).second) b.messages.push_back(m);
    }
  }
  rng.shuffle(b.messages);
  return b;
}

void check_buffer(std::span<const BitMessage> buffer, const SamplerConfig& cfg) {
  if (static_cast<std::int64_t>(buffer.size()) != cfg.capacity()) {
    throw InputError("buffer holds " + std::to_string(buffer.size()) + " messages, expected " +
                     std::to_string(cfg.capacity()));
  }
  KeySet keys;
  for (const auto& m : buffer) {
    if (m.size() != cfg.message_bits) throw InputError("buffer message has the wrong length");
    if (!keys.insert(key_of(m)).second) throw InputError("buffer contains a duplicate: " + m.to_string());
  }
}

}  // namespace splatmark
