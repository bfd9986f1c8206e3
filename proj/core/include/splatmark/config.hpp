#pragma once

// Full run configuration. All randomness derives from three named seeds;
// per-component seeds are mixed from them on resolve().

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "splatmark/codec.hpp"
#include "splatmark/decoder.hpp"
#include "splatmark/distortion.hpp"
#include "splatmark/embedder.hpp"
#include "splatmark/encoders.hpp"
#include "splatmark/eval.hpp"
#include "splatmark/pretrain.hpp"
#include "splatmark/sampler.hpp"
#include "splatmark/splat.hpp"

namespace splatmark {

struct Seeds {
  std::uint64_t codec = 0;
  std::uint64_t encoder = 1;
  std::uint64_t training = 2;
};

/// Compression rate n and group count G for a payload length.
std::pair<int, int> default_chunking(int message_bits);

struct RunConfig {
  Seeds seeds;
  CodecConfig codec;
  TextEncoderConfig text_encoder;
  ImageEncoderConfig image_encoder;
  PretrainConfig pretrain;
  EmbedConfig embed;
  EvalConfig eval;
  SceneConfig scene;

  /// Schedule defaults for L: (n, G), Stage I epochs/freeze/tau0/alpha and
  /// Stage II epochs.
  static RunConfig for_bits(int message_bits);

  /// Pushes L, vocabulary, canvas and derived seeds into every sub-config.
  void resolve();
  /// Cross-field rules: L mod G, C + 2 <= 77, table capacity, ranges.
  void validate() const;

  /// Canonical JSON; the echo stored in every artifact.
  std::string to_json() const;
  /// Overlays `json_text` on for_bits(L), where L is taken from
  /// codec.message_bits when present. `overrides` are dotted keys with JSON
  /// values, e.g. {"sampler.tau0", "0.25"}, applied before the overlay.
  /// Resolves and validates. Unknown keys are a ConfigError.
  static RunConfig from_json(const std::string& json_text,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {});
};

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace splatmark
