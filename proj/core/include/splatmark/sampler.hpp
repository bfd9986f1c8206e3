#pragma once

// Hard-message sampling: an accuracy memory of historically imperfect
// decodes and the epoch buffer rebuilt from the hardest recorded messages
// plus never-seen ones, frozen to the bottom-K pool after the freeze epoch.

#include <map>
#include <span>
#include <unordered_set>
#include <vector>

#include "splatmark/autodiff.hpp"
#include "splatmark/codec.hpp"
#include "splatmark/rng.hpp"

namespace splatmark {

struct SamplerConfig {
  int message_bits = 16;
  int buffer_size = 4096;     // K
  double hard_sigma = 0.999;  // sigma
  double tau0 = 0.30;
  double alpha = 0.0045;
  int freeze_epoch = 100;
  int epochs = 150;
  double smoothing = 0.5;
  /// Off by default: only imperfect decodes touch the memory.
  bool update_all_recorded = false;

  /// min(2^L, K).
  std::int64_t capacity() const;
  void validate() const;
};

using KeySet = std::unordered_set<MessageKey, MessageKeyHash>;

/// Smoothed per-message accuracy, ordered by key.
class AccuracyMemory {
 public:
  void record(const MessageKey& key, double accuracy, double smoothing);
  bool contains(const MessageKey& key) const { return records_.count(key) != 0; }
  double at(const MessageKey& key) const;
  std::size_t size() const { return records_.size(); }
  const std::map<MessageKey, double>& records() const { return records_; }
  void set(const MessageKey& key, double accuracy) { records_[key] = accuracy; }
  void clear() { records_.clear(); }

 private:
  std::map<MessageKey, double> records_;
};

/// Records every sample whose hard decision has at least one wrong bit.
void update_stats(AccuracyMemory& memory, std::span<const BitMessage> truth, const ad::Matrix& bit_logits,
                  const SamplerConfig& cfg);

/// min(1, tau0 + alpha * e).
double hard_ratio(int epoch, const SamplerConfig& cfg);

/// Records with accuracy < sigma, ascending by accuracy then key, first k.
std::vector<BitMessage> sample_hard(const AccuracyMemory& memory, double sigma, std::size_t k);

/// k messages never placed in a buffer, uniform over the unseen space, added
/// to `seen`. When fewer than k remain unseen, all of them are returned and
/// the rest is re-drawn from seen messages outside `exclude`.
std::vector<BitMessage> sample_unseen(std::size_t k, KeySet& seen, int message_bits, Rng& rng,
                                      const KeySet* exclude = nullptr);

struct BufferBuild {
  std::vector<BitMessage> messages;
  std::size_t hard_count = 0;
  bool frozen = false;
};

/// Epoch-boundary rebuild. Before the freeze epoch: floor(r*K) hard plus
/// unseen fill. From the freeze epoch on: the K lowest-accuracy records,
/// padded from `current` when the memory holds fewer than K.
BufferBuild rebuild_buffer(int epoch, const AccuracyMemory& memory, KeySet& seen,
                           std::span<const BitMessage> current, const SamplerConfig& cfg, Rng& rng);

/// Cold start: K fresh random messages.
BufferBuild initial_buffer(KeySet& seen, const SamplerConfig& cfg, Rng& rng);

/// Throws InputError unless the buffer has capacity() distinct L-bit messages.
void check_buffer(std::span<const BitMessage> buffer, const SamplerConfig& cfg);

/// Uniformly random L-bit message.
BitMessage random_message(int message_bits, Rng& rng);

}  // namespace splatmark
