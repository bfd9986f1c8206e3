#pragma once

// Measurement protocols. [In] draws messages from the final training
// buffer, [Out] from its complement, [Random] half from each. Reports carry
// no timings so that replays are byte-identical.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "splatmark/codec.hpp"
#include "splatmark/decoder.hpp"
#include "splatmark/distortion.hpp"
#include "splatmark/embedder.hpp"
#include "splatmark/encoders.hpp"
#include "splatmark/sampler.hpp"
#include "splatmark/splat.hpp"

namespace splatmark {

enum class ProtocolMode { kIn, kOut, kRandom };

const char* protocol_name(ProtocolMode mode);
/// "in", "out" or "random"; throws ConfigError otherwise.
ProtocolMode parse_protocol(const std::string& name);

/// 3D attacks on the carrier.
enum class AttackKind { kNone, kPrune, kClone, kNoise };
const char* attack_name(AttackKind kind);
AttackKind parse_attack(const std::string& name);
std::vector<AttackKind> all_attacks();

struct EvalConfig {
  ProtocolMode mode = ProtocolMode::kRandom;
  int sample_count = 16;
  std::vector<AttackKind> attacks = all_attacks();
  /// 2D distortion columns applied to the clean watermarked render.
  std::vector<DistortionKind> distortions = {DistortionKind::kNoise, DistortionKind::kRotation,
                                             DistortionKind::kScaling, DistortionKind::kBlur,
                                             DistortionKind::kCrop, DistortionKind::kBrightness,
                                             DistortionKind::kJpeg, DistortionKind::kCombined};
  double prune_ratio = 0.2;
  double clone_ratio = 0.2;
  double noise_sigma = 0.1;
  /// Text-domain accuracy is measured on this many messages per side.
  int text_samples = 2048;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Applies one 3D attack. kNone returns a copy.
Carrier apply_attack(const Carrier& in, AttackKind kind, const EvalConfig& cfg, Rng& rng);

/// Messages for one protocol. In: distinct buffer members; Out: distinct
/// messages outside the buffer; Random: first half In, second half Out.
/// Throws InputError when the buffer is empty or a side cannot be filled.
std::vector<BitMessage> sample_protocol_messages(ProtocolMode mode, std::size_t count,
                                                 std::span<const BitMessage> buffer, int message_bits, Rng& rng);

struct TextReport {
  double in_bit = 0.0, in_projected = 0.0;
  double out_bit = 0.0, out_projected = 0.0;
  double random_bit = 0.0, random_projected = 0.0;
  std::size_t samples = 0;  // per side
};

/// Decoder accuracy on text embeddings for the three protocols.
TextReport evaluate_text(const Decoder& decoder, EmbeddingProvider& embeddings, std::span<const BitMessage> buffer,
                         const EvalConfig& cfg);

struct MessageResult {
  std::string digest;  // message digest, never the message
  std::string side;    // "in" or "out"
  double psnr = 0.0;
  double ssim = 0.0;
  std::map<std::string, double> accuracy;  // column -> bit accuracy
};

struct EvalReport {
  ProtocolMode mode = ProtocolMode::kRandom;
  std::vector<std::string> columns;
  std::vector<MessageResult> messages;
  /// side ("in", "out", protocol name) -> column -> mean accuracy.
  std::map<std::string, std::map<std::string, double>> accuracy;
  double psnr = 0.0;
  double ssim = 0.0;
  std::map<std::string, std::string> echo;  // config echo and seeds, copied verbatim

  std::string to_text() const;
  std::string to_json() const;
};

/// Column names: "none", the 3D attacks as "3d-<name>", the 2D
/// distortions as "2d-<name>".
std::vector<std::string> report_columns(const EvalConfig& cfg);

/// Embeds each sampled message into the scene, renders, attacks, extracts
/// and aggregates. The buffer is required for every mode. When `cache_dir`
/// is set, offsets are cached there under a hash of (message, scene,
/// decoder, encoder, embed config).
EvalReport run_protocol(const Decoder& decoder, const ImageEncoder& encoder, const SplatScene& scene,
                        std::span<const BitMessage> buffer, const EmbedConfig& embed_cfg, const EvalConfig& cfg,
                        const std::string& cache_dir = {});

}  // namespace splatmark
