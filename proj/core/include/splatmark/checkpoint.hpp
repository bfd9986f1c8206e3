#pragma once

// Stage I checkpoint: the run config echo, the full trainer state (decoder,
// optimizer moments, sampler memory, buffers, rng) and the hashes of the
// frozen components it was trained against.

#include <map>
#include <memory>
#include <string>

#include "splatmark/config.hpp"
#include "splatmark/pretrain.hpp"

namespace splatmark {

/// Lookup table and both encoders rebuilt from a run config.
struct FrozenModels {
  LookupTable table;
  std::shared_ptr<const TextEncoder> text;
  std::shared_ptr<const ImageEncoder> image;

  std::map<std::string, std::string> hashes() const;
};

FrozenModels build_frozen(const RunConfig& cfg);

struct Checkpoint {
  explicit Checkpoint(const RunConfig& cfg) : config(cfg), state(cfg.pretrain) {}

  RunConfig config;
  PretrainState state;
  /// "table", "text_encoder", "image_encoder", "decoder".
  std::map<std::string, std::string> hashes;
};

void save_checkpoint(const std::string& path, const RunConfig& cfg, const PretrainState& state,
                     const FrozenModels& frozen);
/// Throws FormatError for a malformed container and CorruptionError when the
/// stored decoder weights do not match their recorded hash.
Checkpoint load_checkpoint(const std::string& path);

/// Throws CorruptionError naming the first component whose hash differs.
void verify_binding(const Checkpoint& ckpt, const FrozenModels& frozen);

}  // namespace splatmark
