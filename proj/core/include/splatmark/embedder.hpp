#pragma once

// Stage II: learn the carrier's color offsets so that distorted renders
// decode to the target message through the frozen image encoder and the
// frozen decoder's bit branch, while the clean render stays close to the
// base render.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "splatmark/codec.hpp"
#include "splatmark/decoder.hpp"
#include "splatmark/distortion.hpp"
#include "splatmark/encoders.hpp"
#include "splatmark/image.hpp"
#include "splatmark/losses.hpp"
#include "splatmark/optim.hpp"
#include "splatmark/splat.hpp"

namespace splatmark {

struct EmbedConfig {
  double lambda_bit = 0.05;
  double lambda_image = 1.0;
  double lambda_ssim = 0.2;
  double lambda_off = 10.0;
  AdamConfig adam;
  double lr_floor = 0.1;  // cosine decay from adam.lr to lr_floor * adam.lr
  int batch_size = 24;  // distorted copies of the render per step
  int epochs = 150;
  int steps_per_epoch = 4;
  DistortionConfig distortion;
  std::uint64_t seed = 6;

  void validate() const;
};

struct EmbedEpoch {
  int epoch = 0;
  double loss = 0.0;  // last step of the epoch
  double bit = 0.0;
  double rgb = 0.0;
  double off = 0.0;
  double accuracy = 0.0;  // clean-render extraction
  double psnr = 0.0;      // clean render vs base render
};

struct EmbedResult {
  ad::Matrix offsets;  // N x 3
  std::vector<EmbedEpoch> log;
};

class Embedder {
 public:
  /// Holds references; decoder and encoder must outlive the embedder.
  Embedder(const Decoder& decoder, const ImageEncoder& encoder, EmbedConfig cfg,
           const PerceptualLoss* perceptual = nullptr);

  const EmbedConfig& config() const { return cfg_; }

  /// Offsets start at zero. Throws DivergenceError on a non-finite loss.
  EmbedResult embed(const SplatScene& scene, const BitMessage& message,
                    const std::function<void(const EmbedEpoch&)>& on_epoch = {}) const;

 private:
  const Decoder* decoder_;
  const ImageEncoder* encoder_;
  EmbedConfig cfg_;
  const PerceptualLoss* perceptual_;
};

/// Hard decision of the bit branch on the encoded image.
BitMessage extract(const Image& image, const Decoder& decoder, const ImageEncoder& encoder);
/// Bit logits of the bit branch, one row.
Eigen::RowVectorXd extract_logits(const Image& image, const Decoder& decoder, const ImageEncoder& encoder);

/// Offsets plus a manifest: digest of the message (never the message),
/// decoder hash, seeds and the config echo.
struct EmbedArtifact {
  ad::Matrix offsets;
  std::map<std::string, std::string> manifest;
};

std::string message_digest(const BitMessage& message);
void save_embed_artifact(const std::string& path, const EmbedArtifact& artifact);
EmbedArtifact load_embed_artifact(const std::string& path);

}  // namespace splatmark
