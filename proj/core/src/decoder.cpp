#include "splatmark/decoder.hpp"

#include <cmath>

#include "splatmark/error.hpp"
#include "splatmark/hash.hpp"
#include "splatmark/rng.hpp"

namespace splatmark {

namespace {

constexpr int kFeatureDim = 512;

ad::Matrix gaussian(Rng& rng, ad::Index rows, ad::Index cols, double stddev) {
  ad::Matrix m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

double fan_in(ad::Index n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

}  // namespace

void DecoderConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("decoder: " + what); };
  if (message_bits <= 0) fail("message_bits must be positive");
  if (chunk_bits != 1 && chunk_bits != 2 && chunk_bits != 4 && chunk_bits != 8) fail("chunk_bits must be 1, 2, 4 or 8");
  if (groups <= 0) fail("groups must be positive");
  if (message_bits % groups != 0) {
    fail("L mod G must be 0 (L=" + std::to_string(message_bits) + ", G=" + std::to_string(groups) + ")");
  }
  if (width <= 0 || heads <= 0 || width % heads != 0) fail("heads must divide the chunk width d");
  if (layers < 0 || ffn_mult <= 0 || phi_hidden <= 0 || bit_hidden <= 0) fail("layer sizes must be positive");
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) fail("clamp_eps must lie in (0, 0.5)");
}

Decoder::Decoder(DecoderConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(cfg_.seed, 0xdec0de));
  const int c = cfg_.chunk_count(), d = cfg_.width, s = cfg_.states(), l = cfg_.message_bits, g = cfg_.groups;
  const int ffn = cfg_.ffn_mult * d;

  phi1_w_ = add("phi1_w", gaussian(rng, kFeatureDim, cfg_.phi_hidden, fan_in(kFeatureDim)));
  phi1_b_ = add("phi1_b", ad::Matrix::Zero(1, cfg_.phi_hidden));
  phi2_w_ = add("phi2_w", gaussian(rng, cfg_.phi_hidden, c * d, fan_in(cfg_.phi_hidden)));
  phi2_b_ = add("phi2_b", ad::Matrix::Zero(1, c * d));
  chunk_pos_ = add("chunk_pos", gaussian(rng, c, d, 0.02));
  for (int i = 0; i < cfg_.layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    Layer ly{};
    ly.ln1_gain = add(p + "ln1_gain", ad::Matrix::Ones(1, d));
    ly.ln1_bias = add(p + "ln1_bias", ad::Matrix::Zero(1, d));
    ly.wq = add(p + "wq", gaussian(rng, d, d, fan_in(d)));
    ly.bq = add(p + "bq", ad::Matrix::Zero(1, d));
    ly.wk = add(p + "wk", gaussian(rng, d, d, fan_in(d)));
    ly.bk = add(p + "bk", ad::Matrix::Zero(1, d));
    ly.wv = add(p + "wv", gaussian(rng, d, d, fan_in(d)));
    ly.bv = add(p + "bv", ad::Matrix::Zero(1, d));
    ly.wo = add(p + "wo", gaussian(rng, d, d, fan_in(d)));
    ly.bo = add(p + "bo", ad::Matrix::Zero(1, d));
    ly.ln2_gain = add(p + "ln2_gain", ad::Matrix::Ones(1, d));
    ly.ln2_bias = add(p + "ln2_bias", ad::Matrix::Zero(1, d));
    ly.ff1_w = add(p + "ff1_w", gaussian(rng, d, ffn, fan_in(d)));
    ly.ff1_b = add(p + "ff1_b", ad::Matrix::Zero(1, ffn));
    ly.ff2_w = add(p + "ff2_w", gaussian(rng, ffn, d, fan_in(ffn)));
    ly.ff2_b = add(p + "ff2_b", ad::Matrix::Zero(1, d));
    layers_.push_back(ly);
  }
  chunk_ln_gain_ = add("chunk_ln_gain", ad::Matrix::Ones(1, d));
  chunk_ln_bias_ = add("chunk_ln_bias", ad::Matrix::Zero(1, d));
  cls_w_ = add("cls_w", gaussian(rng, d, s, fan_in(d)));
  cls_b_ = add("cls_b", ad::Matrix::Zero(1, s));

  bit_proj_w_ = add("bit_proj_w", gaussian(rng, kFeatureDim, cfg_.bit_hidden, fan_in(kFeatureDim)));
  bit_proj_b_ = add("bit_proj_b", ad::Matrix::Zero(1, cfg_.bit_hidden));
  heads_w_ = add("heads_w", gaussian(rng, cfg_.bit_hidden, l, fan_in(cfg_.bit_hidden)));
  heads_b_ = add("heads_b", ad::Matrix::Zero(1, l));
  bit_pos_ = add("bit_pos", gaussian(rng, 1, l, 0.02));
  gate_ = add("gate", ad::Matrix::Constant(1, g, 0.1));
  attn_wq_ = add("attn_wq", gaussian(rng, g, g, fan_in(g)));
  attn_wk_ = add("attn_wk", gaussian(rng, g, g, fan_in(g)));
  attn_wv_ = add("attn_wv", gaussian(rng, g, g, fan_in(g)));
  bit_ln_gain_ = add("bit_ln_gain", ad::Matrix::Ones(1, l));
  bit_ln_bias_ = add("bit_ln_bias", ad::Matrix::Zero(1, l));
}

int Decoder::add(const std::string& name, ad::Matrix value) {
  params_.emplace_back(name, std::move(value));
  return static_cast<int>(params_.size()) - 1;
}

ad::Var Decoder::bind(ad::Tape& tape, int index, bool trainable) {
  ad::Parameter& p = params_[static_cast<std::size_t>(index)];
  return trainable ? tape.parameter(p) : tape.frozen(p);
}

ad::Parameter& Decoder::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw InputError("decoder: no parameter named '" + name + "'");
}

const ad::Parameter& Decoder::parameter(const std::string& name) const {
  return const_cast<Decoder*>(this)->parameter(name);
}

void Decoder::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::string Decoder::parameter_hash() const {
  Sha256 h;
  h.update("decoder/v1");
  for (const auto& p : params_) {
    h.update(p.name);
    h.update_values(std::span<const double>(p.value.data(), static_cast<std::size_t>(p.value.size())));
  }
  return h.hex_digest();
}

ad::Var Decoder::run_chunk(ad::Var f, bool trainable) {
  ad::Tape& t = *f.tape();
  const ad::Index batch = f.rows();
  const int c = cfg_.chunk_count(), d = cfg_.width;
  auto P = [&](int i) { return bind(t, i, trainable); };

  ad::Var h = ad::gelu(ad::linear(f, P(phi1_w_), P(phi1_b_)));
  h = ad::linear(h, P(phi2_w_), P(phi2_b_));
  h = ad::add_broadcast(ad::reshape(h, batch * c, d), P(chunk_pos_));
  for (const Layer& ly : layers_) {
    ad::Var n1 = ad::layer_norm(h, P(ly.ln1_gain), P(ly.ln1_bias));
    ad::Var q = ad::linear(n1, P(ly.wq), P(ly.bq));
    ad::Var k = ad::linear(n1, P(ly.wk), P(ly.bk));
    ad::Var v = ad::linear(n1, P(ly.wv), P(ly.bv));
    h = ad::add(h, ad::linear(ad::attention(q, k, v, c, cfg_.heads), P(ly.wo), P(ly.bo)));
    ad::Var n2 = ad::layer_norm(h, P(ly.ln2_gain), P(ly.ln2_bias));
    ad::Var ff = ad::gelu(ad::linear(n2, P(ly.ff1_w), P(ly.ff1_b)));
    h = ad::add(h, ad::linear(ff, P(ly.ff2_w), P(ly.ff2_b)));
  }
  return ad::linear(ad::layer_norm(h, P(chunk_ln_gain_), P(chunk_ln_bias_)), P(cls_w_), P(cls_b_));
}

ad::Var Decoder::run_bit(ad::Var f, bool trainable) {
  ad::Tape& t = *f.tape();
  const ad::Index batch = f.rows();
  const int l = cfg_.message_bits, g = cfg_.groups, lg = cfg_.group_bits();
  auto P = [&](int i) { return bind(t, i, trainable); };

  ad::Var fp = ad::gelu(ad::linear(f, P(bit_proj_w_), P(bit_proj_b_)));
  ad::Var z = ad::add_broadcast(ad::linear(fp, P(heads_w_), P(heads_b_)), P(bit_pos_));

  // Z[l, g] = z[g*Lg + l] per sample; `ungroup` is the inverse permutation.
  auto group = std::make_shared<std::vector<ad::Index>>(static_cast<std::size_t>(batch * l));
  auto ungroup = std::make_shared<std::vector<ad::Index>>(static_cast<std::size_t>(batch * l));
  for (ad::Index b = 0; b < batch; ++b) {
    for (int gi = 0; gi < g; ++gi) {
      for (int li = 0; li < lg; ++li) {
        const ad::Index flat = b * l + gi * lg + li;
        const ad::Index grid = (b * lg + li) * g + gi;
        (*group)[static_cast<std::size_t>(grid)] = flat;
        (*ungroup)[static_cast<std::size_t>(flat)] = grid;
      }
    }
  }
  ad::Var zg = ad::gather(z, batch * lg, g, group);
  ad::Var q = ad::matmul(zg, P(attn_wq_));
  ad::Var k = ad::matmul(zg, P(attn_wk_));
  ad::Var v = ad::matmul(zg, P(attn_wv_));
  ad::Var zp = ad::mul_broadcast(ad::attention(q, k, v, lg, 1), P(gate_));
  ad::Var flat = ad::gather(zp, batch, l, ungroup);
  return ad::add(ad::layer_norm(flat, P(bit_ln_gain_), P(bit_ln_bias_)), z);
}

DecoderOutputs Decoder::forward(ad::Var features, bool trainable) {
  if (features.cols() != kFeatureDim) throw InputError("decoder: features must be 512 wide");
  DecoderOutputs out;
  out.chunk_logits = run_chunk(features, trainable);
  out.projected_logits = chunks_to_bits(out.chunk_logits, make_codebook(cfg_.chunk_bits), cfg_.message_bits,
                                        cfg_.clamp_eps, &out.projected_probs);
  out.bit_logits = run_bit(features, trainable);
  return out;
}

DecoderOutputs Decoder::forward(ad::Var features) const {
  return const_cast<Decoder*>(this)->forward(features, false);
}

ad::Var Decoder::chunk_branch(ad::Var features) const {
  if (features.cols() != kFeatureDim) throw InputError("decoder: features must be 512 wide");
  return const_cast<Decoder*>(this)->run_chunk(features, false);
}

ad::Var Decoder::bit_branch(ad::Var features) const {
  if (features.cols() != kFeatureDim) throw InputError("decoder: features must be 512 wide");
  return const_cast<Decoder*>(this)->run_bit(features, false);
}

ad::Var chunks_to_bits(ad::Var chunk_logits, const BinaryCodebook& codebook, int message_bits, double eps,
                       ad::Var* probs_out) {
  const int n = codebook.chunk_bits;
  const auto states = static_cast<ad::Index>(codebook.rows.size());
  if (chunk_logits.cols() != states) throw InputError("chunks_to_bits: logits must have 2^n columns");
  const int chunks = (message_bits + n - 1) / n;
  if (chunk_logits.rows() % chunks != 0) throw InputError("chunks_to_bits: rows must be a multiple of C");
  const ad::Index batch = chunk_logits.rows() / chunks;
  ad::Tape& t = *chunk_logits.tape();

  ad::Matrix b(states, n);
  for (ad::Index j = 0; j < states; ++j) {
    for (int r = 0; r < n; ++r) b(j, r) = codebook.rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)];
  }
  ad::Var p = ad::matmul(ad::softmax_rows(chunk_logits), t.constant(std::move(b)));
  p = ad::reshape(p, batch, static_cast<ad::Index>(chunks) * n);
  if (chunks * n != message_bits) {
    auto keep = std::make_shared<std::vector<ad::Index>>();
    keep->reserve(static_cast<std::size_t>(batch * message_bits));
    for (ad::Index row = 0; row < batch; ++row) {
      for (int col = 0; col < message_bits; ++col) keep->push_back(row * chunks * n + col);
    }
    p = ad::gather(p, batch, message_bits, keep);
  }
  p = ad::clamp(p, eps, 1.0 - eps);
  if (probs_out != nullptr) *probs_out = p;
  return ad::logit(p);
}

DecoderLoss decoder_loss_terms(const DecoderOutputs& out, std::span<const BitMessage> messages,
                               const DecoderConfig& cfg, const LossWeights& weights) {
  const auto batch = static_cast<ad::Index>(messages.size());
  const int l = cfg.message_bits, c = cfg.chunk_count();
  if (batch == 0) throw InputError("decoder_loss: empty batch");
  if (out.bit_logits.rows() != batch || out.bit_logits.cols() != l || out.projected_logits.rows() != batch ||
      out.projected_logits.cols() != l || out.chunk_logits.rows() != batch * c) {
    throw InputError("decoder_loss: output shapes do not match the batch");
  }
  CodecConfig codec;
  codec.message_bits = l;
  codec.chunk_bits = cfg.chunk_bits;
  ad::Matrix truth(batch, l);
  std::vector<int> targets;
  targets.reserve(static_cast<std::size_t>(batch * c));
  for (ad::Index b = 0; b < batch; ++b) {
    const BitMessage& m = messages[static_cast<std::size_t>(b)];
    if (m.size() != l) throw InputError("decoder_loss: message length does not match L");
    for (int i = 0; i < l; ++i) truth(b, i) = m[i];
    const std::vector<int> y = chunk_indices(m, codec);
    targets.insert(targets.end(), y.begin(), y.end());
  }
  DecoderLoss loss;
  loss.chunk = ad::cross_entropy_sum(out.chunk_logits, targets, 1.0 / static_cast<double>(batch));
  loss.projected = ad::bce_with_logits_mean(out.projected_logits, truth);
  loss.bit = ad::bce_with_logits_mean(out.bit_logits, truth);
  loss.total = ad::add(ad::add(ad::scale(loss.chunk, weights.chunk), ad::scale(loss.projected, weights.projected)),
                       ad::scale(loss.bit, weights.bit));
  return loss;
}

ad::Var decoder_loss(const DecoderOutputs& out, std::span<const BitMessage> messages, const DecoderConfig& cfg,
                     const LossWeights& weights) {
  return decoder_loss_terms(out, messages, cfg, weights).total;
}

BitMessage predict_bits(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(logits.size()));
  for (ad::Index i = 0; i < logits.size(); ++i) bits[static_cast<std::size_t>(i)] = logits(i) > 0.0 ? 1 : 0;
  return BitMessage(std::move(bits));
}

std::vector<BitMessage> predict_bits_rows(const ad::Matrix& logits) {
  std::vector<BitMessage> out;
  out.reserve(static_cast<std::size_t>(logits.rows()));
  for (ad::Index r = 0; r < logits.rows(); ++r) out.push_back(predict_bits(logits.row(r)));
  return out;
}

double bit_accuracy(const BitMessage& pred, const BitMessage& truth) {
  if (pred.size() != truth.size() || truth.size() == 0) throw InputError("bit_accuracy: length mismatch");
  int same = 0;
  for (int i = 0; i < truth.size(); ++i) same += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(same) / truth.size();
}

double bit_accuracy(std::span<const BitMessage> pred, std::span<const BitMessage> truth) {
  if (pred.size() != truth.size() || truth.empty()) throw InputError("bit_accuracy: batch size mismatch");
  std::int64_t same = 0, total = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (pred[k].size() != truth[k].size()) throw InputError("bit_accuracy: length mismatch");
    for (int i = 0; i < truth[k].size(); ++i) same += pred[k][i] == truth[k][i] ? 1 : 0;
    total += truth[k].size();
  }
  return static_cast<double>(same) / static_cast<double>(total);
}

}  // namespace splatmark
