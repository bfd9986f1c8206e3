#pragma once

// Dual-branch message decoder. The chunk branch classifies each n-bit chunk
// and marginalizes the chunk posteriors into bit probabilities; the bit
// branch predicts all L bits directly through G grouped heads refined by a
// gated self-attention over the group axis.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "splatmark/autodiff.hpp"
#include "splatmark/codec.hpp"

namespace splatmark {

struct DecoderConfig {
  int message_bits = 16;  // L
  int chunk_bits = 1;     // n
  int groups = 1;         // G
  int width = 32;         // d
  int heads = 4;
  int layers = 1;
  int ffn_mult = 4;
  int phi_hidden = 128;
  int bit_hidden = 512;
  double clamp_eps = 1e-6;
  std::uint64_t seed = 3;

  int chunk_count() const { return (message_bits + chunk_bits - 1) / chunk_bits; }
  int states() const { return 1 << chunk_bits; }
  int pad_bits() const { return chunk_count() * chunk_bits - message_bits; }
  int group_bits() const { return message_bits / groups; }

  /// Throws ConfigError naming the violated rule (L mod G, heads | d, ranges).
  void validate() const;
};

/// Node handles for one batched forward pass.
struct DecoderOutputs {
  ad::Var chunk_logits;      // (B*C) x 2^n, row b*C+i is s_i of sample b
  ad::Var projected_probs;   // B x L, clamped to [eps, 1-eps]
  ad::Var projected_logits;  // B x L
  ad::Var bit_logits;        // B x L
};

struct LossWeights {
  double chunk = 1.0;
  double projected = 0.25;
  double bit = 1.0;
};

class Decoder {
 public:
  explicit Decoder(DecoderConfig cfg);

  const DecoderConfig& config() const { return cfg_; }

  /// Both branches; parameters are bound as trainable when `trainable`.
  DecoderOutputs forward(ad::Var features, bool trainable);
  /// Inference and Stage II: parameters are frozen constants on the tape.
  DecoderOutputs forward(ad::Var features) const;
  ad::Var chunk_branch(ad::Var features) const;
  ad::Var bit_branch(ad::Var features) const;

  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }
  ad::Parameter& parameter(const std::string& name);
  const ad::Parameter& parameter(const std::string& name) const;
  void zero_grad();
  std::string parameter_hash() const;

 private:
  struct Layer {
    int ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, ff1_w, ff1_b, ff2_w, ff2_b;
  };
  int add(const std::string& name, ad::Matrix value);
  ad::Var bind(ad::Tape& tape, int index, bool trainable);
  ad::Var run_chunk(ad::Var f, bool trainable);
  ad::Var run_bit(ad::Var f, bool trainable);

  DecoderConfig cfg_;
  std::vector<ad::Parameter> params_;
  int phi1_w_, phi1_b_, phi2_w_, phi2_b_, chunk_pos_;
  std::vector<Layer> layers_;
  int chunk_ln_gain_, chunk_ln_bias_, cls_w_, cls_b_;
  int bit_proj_w_, bit_proj_b_, heads_w_, heads_b_, bit_pos_, gate_, attn_wq_, attn_wk_, attn_wv_;
  int bit_ln_gain_, bit_ln_bias_;
};

/// Marginalizes chunk logits over the codebook into bit probabilities,
/// drops the trailing pad bits, clamps to [eps, 1-eps] and returns logits.
/// `probs_out`, when given, receives the clamped probabilities.
ad::Var chunks_to_bits(ad::Var chunk_logits, const BinaryCodebook& codebook, int message_bits, double eps,
                       ad::Var* probs_out = nullptr);

struct DecoderLoss {
  ad::Var chunk;      // (1/B) sum of per-chunk cross-entropies
  ad::Var projected;  // BCE mean of the projected logits
  ad::Var bit;        // BCE mean of the direct logits
  ad::Var total;
};

DecoderLoss decoder_loss_terms(const DecoderOutputs& out, std::span<const BitMessage> messages,
                               const DecoderConfig& cfg, const LossWeights& weights);

/// lambda_s * (1/B) sum CE(s, y) + lambda_p * BCE(M~, M) + lambda_b * BCE(M^, M).
/// Each BCE is a mean over all B*L bits.
ad::Var decoder_loss(const DecoderOutputs& out, std::span<const BitMessage> messages, const DecoderConfig& cfg,
                     const LossWeights& weights);

/// bit = 1 iff logit > 0; a logit of exactly 0 decodes to 0.
BitMessage predict_bits(const Eigen::Ref<const Eigen::RowVectorXd>& logits);
std::vector<BitMessage> predict_bits_rows(const ad::Matrix& logits);

/// Mean elementwise agreement. Throws InputError on a shape mismatch.
double bit_accuracy(const BitMessage& pred, const BitMessage& truth);
double bit_accuracy(std::span<const BitMessage> pred, std::span<const BitMessage> truth);

}  // namespace splatmark
