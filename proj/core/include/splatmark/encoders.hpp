#pragma once

// Frozen semantic encoders. Both are seeded random networks that are never
// trained; they stand in for a pre-trained text/image encoder pair with the
// same contract: 77-token input for text, unit-norm 512-d output for both.

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "splatmark/autodiff.hpp"
#include "splatmark/codec.hpp"

namespace splatmark {

inline constexpr int kEmbeddingDim = 512;

struct Image;

struct TextEncoderConfig {
  int vocab_size = 8192;
  int width = 128;
  int layers = 2;
  int heads = 4;
  int ffn_width = 256;
  int end_id = 2;
  std::uint64_t seed = 1;
};

/// Token embedding + positions, causal pre-norm attention blocks, final
/// layer norm, mean pooling over the positions up to and including the end
/// token, projection to 512, l2 normalization.
///
/// Pad positions follow the end token, so under the causal mask they never
/// reach earlier positions and pooling excludes them. The forward pass
/// therefore stops at the end token.
class TextEncoder {
 public:
  static constexpr const char* kPooling = "causal-masked-mean";

  explicit TextEncoder(TextEncoderConfig cfg);

  /// One unit-norm row per sequence.
  ad::Matrix encode(std::span<const TokenSequence> sequences) const;
  ad::Matrix encode(const TokenSequence& sequence) const;

  const TextEncoderConfig& config() const { return cfg_; }
  std::string parameter_hash() const;

 private:
  ad::Matrix encode_same_length(std::span<const TokenSequence> sequences, int length) const;

  TextEncoderConfig cfg_;
  ad::Matrix token_embedding_;
  ad::Matrix position_embedding_;
  struct Block {
    ad::Parameter ln1_gain, ln1_bias, wq, wk, wv, wo, bq, bk, bv, bo;
    ad::Parameter ln2_gain, ln2_bias, ff1_w, ff1_b, ff2_w, ff2_b;
  };
  std::vector<Block> blocks_;
  ad::Parameter final_gain_, final_bias_, projection_;
};

struct ImageEncoderConfig {
  int height = 64;
  int width = 64;
  int patch = 8;
  int hidden = 64;
  double frequency = 16.0;
  std::uint64_t seed = 2;
};

/// Random Fourier features of non-overlapping patches, cos(w * (W p) + b),
/// then a dense projection of the flattened patch grid to 512 and l2
/// normalization. The frequency w sets how far small pixel changes move the
/// embedding. Differentiable in the pixels.
class ImageEncoder {
 public:
  explicit ImageEncoder(ImageEncoderConfig cfg);

  /// images: (batch*H*W) x 3 pixels in [0,1], row-major per image.
  /// Returns batch x 512 unit rows on the same tape.
  ad::Var forward(ad::Var images, int batch) const;
  /// Validates dimensions and pixel range; throws InputError otherwise.
  ad::Matrix encode(const Image& image) const;

  const ImageEncoderConfig& config() const { return cfg_; }
  std::string parameter_hash() const;

 private:
  ImageEncoderConfig cfg_;
  ad::Parameter patch_w_, patch_b_, projection_;
  std::shared_ptr<const std::vector<ad::Index>> patch_index_;
};

/// Source of text embeddings for training and evaluation.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  /// One unit-norm row per message.
  virtual ad::Matrix embed(std::span<const BitMessage> messages) = 0;
};

/// Tokenizes and encodes on demand, caching by message. The encoder is
/// frozen, so cached rows equal recomputed ones.
class LiveTextEmbeddings : public EmbeddingProvider {
 public:
  LiveTextEmbeddings(CodecConfig codec, LookupTable table, std::shared_ptr<const TextEncoder> encoder);
  ad::Matrix embed(std::span<const BitMessage> messages) override;

  const CodecConfig& codec() const { return codec_; }
  const LookupTable& table() const { return table_; }
  const TextEncoder& encoder() const { return *encoder_; }
  std::size_t cache_size() const { return cache_.size(); }

 private:
  CodecConfig codec_;
  LookupTable table_;
  std::shared_ptr<const TextEncoder> encoder_;
  std::unordered_map<MessageKey, Eigen::RowVectorXd, MessageKeyHash> cache_;
};

/// Embeddings loaded from a container; unknown messages are an InputError.
class ImportedEmbeddings : public EmbeddingProvider {
 public:
  explicit ImportedEmbeddings(std::unordered_map<MessageKey, Eigen::RowVectorXd, MessageKeyHash> table);
  ad::Matrix embed(std::span<const BitMessage> messages) override;
  std::size_t size() const { return table_.size(); }

 private:
  std::unordered_map<MessageKey, Eigen::RowVectorXd, MessageKeyHash> table_;
};

/// Writes the embedding container: "ids" (count x L bits, U8) and
/// "embeddings" (count x 512, F64) with dimension and provenance metadata.
void export_embeddings(const std::string& path, std::span<const BitMessage> messages,
                       const ad::Matrix& embeddings,
                       const std::map<std::string, std::string>& provenance = {});
/// Loads and renormalizes; throws FormatError when the width is not 512.
std::unordered_map<MessageKey, Eigen::RowVectorXd, MessageKeyHash> import_embeddings(const std::string& path);

}  // namespace splatmark
