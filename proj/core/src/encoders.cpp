#include "splatmark/encoders.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "splatmark/error.hpp"
#include "splatmark/hash.hpp"
#include "splatmark/image.hpp"
#include "splatmark/rng.hpp"
#include "splatmark/tensor_file.hpp"

namespace splatmark {

namespace {

ad::Matrix gaussian(Rng& rng, ad::Index rows, ad::Index cols, double stddev) {
  ad::Matrix m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

ad::Parameter param(const char* name, ad::Matrix m) { return ad::Parameter(name, std::move(m)); }

void hash_matrix(Sha256& h, const ad::Matrix& m) {
  h.update_values(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

}  // namespace

// ---- text encoder ---------------------------------------------------------

TextEncoder::TextEncoder(TextEncoderConfig cfg) : cfg_(cfg) {
  if (cfg_.width <= 0 || cfg_.heads <= 0 || cfg_.width % cfg_.heads != 0) {
    throw ConfigError("text encoder: width must be a positive multiple of heads");
  }
  if (cfg_.layers < 0 || cfg_.ffn_width <= 0 || cfg_.vocab_size <= 3) throw ConfigError("text encoder: bad sizes");
  Rng rng(mix_seed(cfg_.seed, 0x7e47));
  const int d = cfg_.width;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  token_embedding_ = gaussian(rng, cfg_.vocab_size, d, 1.0);
  position_embedding_ = gaussian(rng, kContextLength, d, 0.5);
  for (int l = 0; l < cfg_.layers; ++l) {
    Block b;
    b.ln1_gain = param("ln1_gain", ad::Matrix::Ones(1, d));
    b.ln1_bias = param("ln1_bias", ad::Matrix::Zero(1, d));
    b.wq = param("wq", gaussian(rng, d, d, sd));
    b.wk = param("wk", gaussian(rng, d, d, sd));
    b.wv = param("wv", gaussian(rng, d, d, sd));
    b.wo = param("wo", gaussian(rng, d, d, sd));
    b.bq = param("bq", ad::Matrix::Zero(1, d));
    b.bk = param("bk", ad::Matrix::Zero(1, d));
    b.bv = param("bv", ad::Matrix::Zero(1, d));
    b.bo = param("bo", ad::Matrix::Zero(1, d));
    b.ln2_gain = param("ln2_gain", ad::Matrix::Ones(1, d));
    b.ln2_bias = param("ln2_bias", ad::Matrix::Zero(1, d));
    b.ff1_w = param("ff1_w", gaussian(rng, d, cfg_.ffn_width, sd));
    b.ff1_b = param("ff1_b", gaussian(rng, 1, cfg_.ffn_width, 0.1));
    b.ff2_w = param("ff2_w", gaussian(rng, cfg_.ffn_width, d, 1.0 / std::sqrt(static_cast<double>(cfg_.ffn_width))));
    b.ff2_b = param("ff2_b", ad::Matrix::Zero(1, d));
    blocks_.push_back(std::move(b));
  }
  final_gain_ = param("final_gain", ad::Matrix::Ones(1, d));
  final_bias_ = param("final_bias", ad::Matrix::Zero(1, d));
  projection_ = param("projection", gaussian(rng, d, kEmbeddingDim, sd));
}

ad::Matrix TextEncoder::encode(const TokenSequence& sequence) const {
  return encode(std::span<const TokenSequence>(&sequence, 1));
}

ad::Matrix TextEncoder::encode(std::span<const TokenSequence> sequences) const {
  ad::Matrix out(static_cast<ad::Index>(sequences.size()), kEmbeddingDim);
  // Group consecutive sequences of equal length into one batched pass.
  std::size_t begin = 0;
  auto length_of = [this](const TokenSequence& s) {
    if (static_cast<int>(s.ids.size()) != kContextLength) {
      throw InputError("text encoder: sequences must have 77 ids");
    }
    for (int i = 0; i < kContextLength; ++i) {
      if (s.ids[static_cast<std::size_t>(i)] == cfg_.end_id) return i + 1;
    }
    return kContextLength;
  };
  while (begin < sequences.size()) {
    const int len = length_of(sequences[begin]);
    std::size_t end = begin + 1;
    while (end < sequences.size() && length_of(sequences[end]) == len) ++end;
    out.middleRows(static_cast<ad::Index>(begin), static_cast<ad::Index>(end - begin)) =
        encode_same_length(sequences.subspan(begin, end - begin), len);
    begin = end;
  }
  return out;
}

ad::Matrix TextEncoder::encode_same_length(std::span<const TokenSequence> sequences, int length) const {
  const auto batch = static_cast<ad::Index>(sequences.size());
  const int d = cfg_.width;
  ad::Matrix x(batch * length, d);
  for (ad::Index b = 0; b < batch; ++b) {
    for (int p = 0; p < length; ++p) {
      const int id = sequences[static_cast<std::size_t>(b)].ids[static_cast<std::size_t>(p)];
      if (id < 0 || id >= cfg_.vocab_size) throw InputError("text encoder: token id outside the vocabulary");
      x.row(b * length + p) = token_embedding_.row(id) + position_embedding_.row(p);
    }
  }
  ad::Tape tape;
  ad::Var h = tape.constant(std::move(x));
  for (const Block& blk : blocks_) {
    ad::Var n1 = ad::layer_norm(h, tape.frozen(blk.ln1_gain), tape.frozen(blk.ln1_bias));
    ad::Var q = ad::linear(n1, tape.frozen(blk.wq), tape.frozen(blk.bq));
    ad::Var k = ad::linear(n1, tape.frozen(blk.wk), tape.frozen(blk.bk));
    ad::Var v = ad::linear(n1, tape.frozen(blk.wv), tape.frozen(blk.bv));
    ad::Var a = ad::attention(q, k, v, length, cfg_.heads, ad::AttentionMask::kCausal);
    h = ad::add(h, ad::linear(a, tape.frozen(blk.wo), tape.frozen(blk.bo)));
    ad::Var n2 = ad::layer_norm(h, tape.frozen(blk.ln2_gain), tape.frozen(blk.ln2_bias));
    ad::Var f = ad::gelu(ad::linear(n2, tape.frozen(blk.ff1_w), tape.frozen(blk.ff1_b)));
    h = ad::add(h, ad::linear(f, tape.frozen(blk.ff2_w), tape.frozen(blk.ff2_b)));
  }
  h = ad::layer_norm(h, tape.frozen(final_gain_), tape.frozen(final_bias_));
  ad::Matrix pooled(batch, d);
  for (ad::Index b = 0; b < batch; ++b) pooled.row(b) = h.value().middleRows(b * length, length).colwise().mean();
  ad::Matrix e = pooled * projection_.value;
  for (ad::Index b = 0; b < batch; ++b) e.row(b).normalize();
  return e;
}

std::string TextEncoder::parameter_hash() const {
  Sha256 h;
  h.update("text-encoder/v1");
  hash_matrix(h, token_embedding_);
  hash_matrix(h, position_embedding_);
  for (const Block& b : blocks_) {
    for (const ad::Parameter* p : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.bq, &b.bk, &b.bv, &b.bo,
                                   &b.ln2_gain, &b.ln2_bias, &b.ff1_w, &b.ff1_b, &b.ff2_w, &b.ff2_b}) {
      hash_matrix(h, p->value);
    }
  }
  hash_matrix(h, final_gain_.value);
  hash_matrix(h, final_bias_.value);
  hash_matrix(h, projection_.value);
  return h.hex_digest();
}

// ---- image encoder --------------------------------------------------------

ImageEncoder::ImageEncoder(ImageEncoderConfig cfg) : cfg_(cfg) {
  if (cfg_.patch <= 0 || cfg_.height % cfg_.patch != 0 || cfg_.width % cfg_.patch != 0) {
    throw ConfigError("image encoder: canvas must be a multiple of the patch size");
  }
  Rng rng(mix_seed(cfg_.seed, 0x1a9e));
  const int patch_dim = cfg_.patch * cfg_.patch * 3;
  const int patches = (cfg_.height / cfg_.patch) * (cfg_.width / cfg_.patch);
  patch_w_ = param("patch_w", gaussian(rng, patch_dim, cfg_.hidden, 1.0 / std::sqrt(static_cast<double>(patch_dim))));
  ad::Matrix phase(1, cfg_.hidden);
  for (int i = 0; i < cfg_.hidden; ++i) phase(0, i) = rng.uniform(0.0, 2.0 * std::numbers::pi);
  patch_b_ = param("patch_b", std::move(phase));
  const int flat = patches * cfg_.hidden;
  projection_ = param("projection", gaussian(rng, flat, kEmbeddingDim, 1.0 / std::sqrt(static_cast<double>(flat))));

  // Index map from one image's pixel matrix to its (patches x patch_dim) layout.
  auto index = std::make_shared<std::vector<ad::Index>>();
  index->reserve(static_cast<std::size_t>(patches * patch_dim));
  const int grid_w = cfg_.width / cfg_.patch;
  for (int p = 0; p < patches; ++p) {
    const int py = p / grid_w, px = p % grid_w;
    for (int dy = 0; dy < cfg_.patch; ++dy) {
      for (int dx = 0; dx < cfg_.patch; ++dx) {
        const ad::Index pixel = static_cast<ad::Index>(py * cfg_.patch + dy) * cfg_.width + (px * cfg_.patch + dx);
        for (int c = 0; c < 3; ++c) index->push_back(pixel * 3 + c);
      }
    }
  }
  patch_index_ = std::move(index);
}

ad::Var ImageEncoder::forward(ad::Var images, int batch) const {
  const ad::Index pixels = static_cast<ad::Index>(cfg_.height) * cfg_.width;
  if (images.rows() != pixels * batch || images.cols() != 3) {
    throw InputError("image encoder: expected (batch*" + std::to_string(cfg_.height) + "*" +
                     std::to_string(cfg_.width) + ") x 3 pixels");
  }
  ad::Tape& tape = *images.tape();
  const int patch_dim = cfg_.patch * cfg_.patch * 3;
  const ad::Index patches = pixels / (cfg_.patch * cfg_.patch);

  std::shared_ptr<const std::vector<ad::Index>> index = patch_index_;
  if (batch > 1) {
    auto all = std::make_shared<std::vector<ad::Index>>();
    all->reserve(patch_index_->size() * static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      for (ad::Index i : *patch_index_) all->push_back(i + b * pixels * 3);
    }
    index = std::move(all);
  }
  ad::Var centered = ad::add_scalar(images, -0.5);
  ad::Var grid = ad::gather(centered, patches * batch, patch_dim, index);
  ad::Var h = ad::cos(ad::add_broadcast(ad::scale(ad::matmul(grid, tape.frozen(patch_w_)), cfg_.frequency),
                                        tape.frozen(patch_b_)));
  ad::Var flat = ad::reshape(h, batch, patches * cfg_.hidden);
  return ad::l2_normalize_rows(ad::matmul(flat, tape.frozen(projection_)));
}

ad::Matrix ImageEncoder::encode(const Image& image) const {
  if (image.height != cfg_.height || image.width != cfg_.width) {
    throw InputError("image encoder: expected a " + std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) +
                     " image, got " + std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  if (!image.in_unit_range()) throw InputError("image encoder: pixels must lie in [0, 1]");
  ad::Tape tape;
  return forward(tape.reference(image.pixels), 1).value();
}

std::string ImageEncoder::parameter_hash() const {
  Sha256 h;
  h.update("image-encoder/v2");
  const double frequency = cfg_.frequency;
  h.update_values(std::span<const double>(&frequency, 1));
  hash_matrix(h, patch_w_.value);
  hash_matrix(h, patch_b_.value);
  hash_matrix(h, projection_.value);
  return h.hex_digest();
}

// ---- embedding providers --------------------------------------------------

LiveTextEmbeddings::LiveTextEmbeddings(CodecConfig codec, LookupTable table, std::shared_ptr<const TextEncoder> encoder)
    : codec_(codec), table_(std::move(table)), encoder_(std::move(encoder)) {
  if (table_.chunks() != codec_.chunk_count() || table_.states() != codec_.states() || table_.seed() != codec_.seed) {
    throw ConfigError("embeddings: lookup table does not match the codec");
  }
}

ad::Matrix LiveTextEmbeddings::embed(std::span<const BitMessage> messages) {
  ad::Matrix out(static_cast<ad::Index>(messages.size()), kEmbeddingDim);
  std::vector<std::size_t> missing;
  std::vector<TokenSequence> sequences;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    auto it = cache_.find(key_of(messages[i]));
    if (it != cache_.end()) {
      out.row(static_cast<ad::Index>(i)) = it->second;
    } else {
      missing.push_back(i);
      sequences.push_back(tokenize(messages[i], table_, codec_));
    }
  }
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < sequences.size(); begin += kChunk) {
    const std::size_t n = std::min(kChunk, sequences.size() - begin);
    const ad::Matrix e = encoder_->encode(std::span<const TokenSequence>(sequences).subspan(begin, n));
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t i = missing[begin + j];
      out.row(static_cast<ad::Index>(i)) = e.row(static_cast<ad::Index>(j));
      cache_.emplace(key_of(messages[i]), e.row(static_cast<ad::Index>(j)));
    }
  }
  return out;
}

ImportedEmbeddings::ImportedEmbeddings(std::unordered_map<MessageKey, Eigen::RowVectorXd, MessageKeyHash> table)
    : table_(std::move(table)) {}

ad::Matrix ImportedEmbeddings::embed(std::span<const BitMessage> messages) {
  ad::Matrix out(static_cast<ad::Index>(messages.size()), kEmbeddingDim);
  for (std::size_t i = 0; i < messages.size(); ++i) {
    auto it = table_.find(key_of(messages[i]));
    if (it == table_.end()) {
      throw InputError("imported embeddings: no entry for message " + messages[i].to_string());
    }
    out.row(static_cast<ad::Index>(i)) = it->second;
  }
  return out;
}

void export_embeddings(const std::string& path, std::span<const BitMessage> messages, const ad::Matrix& embeddings,
                       const std::map<std::string, std::string>& provenance) {
  if (embeddings.rows() != static_cast<ad::Index>(messages.size()) || embeddings.cols() != kEmbeddingDim) {
    throw InputError("export_embeddings: need one 512-d row per message");
  }
  const int bits = messages.empty() ? 0 : messages.front().size();
  std::vector<std::uint8_t> ids;
  ids.reserve(messages.size() * static_cast<std::size_t>(bits));
  for (const auto& m : messages) {
    if (m.size() != bits) throw InputError("export_embeddings: messages differ in length");
    ids.insert(ids.end(), m.bits().begin(), m.bits().end());
  }
  TensorFile f;
  f.set_metadata("format", "splatmark.embeddings");
  f.set_metadata("version", "1");
  f.set_metadata("dim", std::to_string(kEmbeddingDim));
  f.set_metadata("message_bits", std::to_string(bits));
  for (const auto& [k, v] : provenance) f.set_metadata(k, v);
  f.put_u8("ids", ids, {static_cast<std::int64_t>(messages.size()), bits});
  f.put("embeddings", embeddings);
  f.save(path);
}

std::unordered_map<MessageKey, Eigen::RowVectorXd, MessageKeyHash> import_embeddings(const std::string& path) {
  const TensorFile f = TensorFile::load(path);
  f.expect_format("splatmark.embeddings", 1);
  const ad::Matrix e = f.matrix("embeddings");
  if (e.cols() != kEmbeddingDim || f.metadata("dim") != std::to_string(kEmbeddingDim)) {
    throw FormatError("'" + path + "': embedding dimension " + std::to_string(e.cols()) + " != 512");
  }
  const TensorEntry& ids = f.entry("ids");
  if (ids.dtype != DType::kU8 || ids.shape.size() != 2 || ids.shape[0] != e.rows()) {
    throw FormatError("'" + path + "': 'ids' must be a count x L U8 array matching the embeddings");
  }
  const auto bits = static_cast<std::size_t>(ids.shape[1]);
  std::unordered_map<MessageKey, Eigen::RowVectorXd, MessageKeyHash> out;
  for (ad::Index i = 0; i < e.rows(); ++i) {
    std::vector<std::uint8_t> m(ids.bytes.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * bits),
                                ids.bytes.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i + 1) * bits));
    Eigen::RowVectorXd row = e.row(i);
    const double n = row.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw FormatError("'" + path + "': embedding row " + std::to_string(i) + " is degenerate");
    out[key_of(BitMessage(std::move(m)))] = row / n;
  }
  return out;
}

}  // namespace splatmark
