#pragma once

// Stage I: the decoder learns to read messages from frozen text embeddings
// while the hard-message sampler rebuilds its training buffer every epoch.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "splatmark/decoder.hpp"
#include "splatmark/encoders.hpp"
#include "splatmark/optim.hpp"
#include "splatmark/sampler.hpp"

namespace splatmark {

struct PretrainConfig {
  DecoderConfig decoder;
  SamplerConfig sampler;
  AdamConfig adam;
  LossWeights weights;
  int batch_size = 64;
  /// false trains on one fixed random buffer (the ablation baseline).
  bool hard_sampling = true;
  std::uint64_t seed = 4;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  std::int64_t steps = 0;  // optimizer steps so far
  double loss = 0.0;       // batch means of the weighted total
  double chunk = 0.0;
  double projected = 0.0;
  double bit = 0.0;
  double in_accuracy = 0.0;  // direct-branch accuracy before each update
  double hard_fraction = 0.0;
  std::size_t memory = 0;
  std::size_t seen = 0;
  bool frozen = false;
};

struct PretrainState {
  explicit PretrainState(const PretrainConfig& cfg);

  Decoder decoder;
  Adam adam;
  AccuracyMemory memory;
  KeySet seen;
  std::vector<BitMessage> buffer;
  std::size_t hard_count = 0;
  bool frozen = false;
  Rng rng;
  int epochs_done = 0;
  std::vector<EpochRecord> log;
};

class Pretrainer {
 public:
  /// `embeddings` must outlive the trainer.
  Pretrainer(PretrainConfig cfg, EmbeddingProvider& embeddings);

  const PretrainConfig& config() const { return cfg_; }

  /// Initialized decoder and the cold-start buffer.
  PretrainState initial_state() const;
  /// Trains epoch epochs_done + 1 on the current buffer, then rebuilds the
  /// buffer unless that was the last epoch. Throws DivergenceError on a
  /// non-finite loss.
  const EpochRecord& run_epoch(PretrainState& state) const;
  void run(PretrainState& state, const std::function<void(const EpochRecord&)>& on_epoch = {}) const;
  bool finished(const PretrainState& state) const { return state.epochs_done >= cfg_.sampler.epochs; }

 private:
  PretrainConfig cfg_;
  EmbeddingProvider* embeddings_;
};

PretrainState pretrain(const PretrainConfig& cfg, EmbeddingProvider& embeddings,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Decoder accuracy on `messages` in the text domain, both branches.
struct TextAccuracy {
  double bit = 0.0;        // direct branch
  double projected = 0.0;  // chunk branch after marginalization
};
TextAccuracy text_accuracy(const Decoder& decoder, EmbeddingProvider& embeddings,
                           std::span<const BitMessage> messages, int batch_size = 256);

/// One JSON object per line.
std::string training_log_jsonl(std::span<const EpochRecord> log);
void write_training_log(const std::string& path, std::span<const EpochRecord> log);

}  // namespace splatmark
