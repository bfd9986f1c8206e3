#include "splatmark/embedder.hpp"

#include <cmath>
#include <numbers>

#include "splatmark/error.hpp"
#include "splatmark/hash.hpp"
#include "splatmark/metrics.hpp"
#include "splatmark/tensor_file.hpp"

namespace splatmark {

namespace {

constexpr const char* kArtifactFormat = "splatmark.offsets";
constexpr int kArtifactVersion = 1;

}  // namespace

void EmbedConfig::validate() const {
  if (lambda_bit < 0.0 || lambda_image < 0.0 || lambda_off < 0.0) throw ConfigError("embed: weights must be nonnegative");
  if (lambda_ssim < 0.0 || lambda_ssim > 1.0) throw ConfigError("embed: lambda_ssim must lie in [0, 1]");
  if (batch_size < 1 || epochs < 0 || steps_per_epoch < 1) throw ConfigError("embed: bad batch/epoch settings");
  if (!(adam.lr > 0.0)) throw ConfigError("embed: learning rate must be positive");
  if (!(lr_floor >= 0.0 && lr_floor <= 1.0)) throw ConfigError("embed: lr_floor must lie in [0, 1]");
  distortion.validate();
}

Embedder::Embedder(const Decoder& decoder, const ImageEncoder& encoder, EmbedConfig cfg,
                   const PerceptualLoss* perceptual)
    : decoder_(&decoder), encoder_(&encoder), cfg_(std::move(cfg)), perceptual_(perceptual) {
  cfg_.validate();
}

EmbedResult Embedder::embed(const SplatScene& scene, const BitMessage& message,
                            const std::function<void(const EmbedEpoch&)>& on_epoch) const {
  scene.validate();
  const int L = decoder_->config().message_bits;
  if (message.size() != L) {
    throw InputError("embed: message has " + std::to_string(message.size()) + " bits, decoder expects " +
                     std::to_string(L));
  }
  const auto& ecfg = encoder_->config();
  if (ecfg.height != scene.height || ecfg.width != scene.width) throw InputError("embed: canvas does not match the image encoder");

  const int h = scene.height, w = scene.width, copies = cfg_.batch_size;
  const Image base = render(scene);
  const DistortionLayer layer(h, w, cfg_.distortion);
  ad::Matrix targets(copies, L);
  for (int b = 0; b < copies; ++b) {
    for (int i = 0; i < L; ++i) targets(b, i) = message[i];
  }

  ad::Parameter offsets("offsets", ad::Matrix::Zero(static_cast<ad::Index>(scene.size()), 3));
  Adam adam(cfg_.adam);
  Rng rng(cfg_.seed);
  EmbedResult result;
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    EmbedEpoch rec;
    rec.epoch = epoch;
    const double progress = cfg_.epochs > 1 ? static_cast<double>(epoch - 1) / (cfg_.epochs - 1) : 0.0;
    adam.set_lr(cfg_.adam.lr * (cfg_.lr_floor + (1.0 - cfg_.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
    for (int step = 0; step < cfg_.steps_per_epoch; ++step) {
      ad::Tape tape;
      ad::Var off = tape.parameter(offsets);
      ad::Var img = render(scene, off);
      std::vector<ad::Var> views;
      views.reserve(static_cast<std::size_t>(copies));
      for (int b = 0; b < copies; ++b) views.push_back(layer.apply(img, layer.sample_kind(rng), rng));
      ad::Var logits = decoder_->bit_branch(encoder_->forward(ad::concat_rows(views), copies));
      ad::Var bit = ad::bce_with_logits_mean(logits, targets);
      ad::Var reference = tape.reference(base.pixels);
      ad::Var image_term = rgb_loss(img, reference, h, w, cfg_.lambda_ssim);
      const ad::Var rgb = image_term;
      if (perceptual_ != nullptr) {
        ad::Var p = (*perceptual_)(img, reference, h, w);
        if (p.valid()) image_term = ad::add(image_term, p);
      }
      ad::Var reg = off_loss(off);
      ad::Var total = ad::add(ad::add(ad::scale(bit, cfg_.lambda_bit), ad::scale(image_term, cfg_.lambda_image)),
                              ad::scale(reg, cfg_.lambda_off));
      if (!std::isfinite(total.scalar())) {
        throw DivergenceError("embed: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step + 1));
      }
      offsets.zero_grad();
      tape.backward(total);
      adam.step(std::vector<ad::Parameter*>{&offsets});
      rec.loss = total.scalar();
      rec.bit = bit.scalar();
      rec.rgb = rgb.scalar();
      rec.off = reg.scalar();
    }
    const Image current = render(scene, offsets.value);
    rec.accuracy = bit_accuracy(extract(current, *decoder_, *encoder_), message);
    rec.psnr = psnr(current, base);
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.offsets = offsets.value;
  return result;
}

Eigen::RowVectorXd extract_logits(const Image& image, const Decoder& decoder, const ImageEncoder& encoder) {
  ad::Tape tape;
  ad::Matrix features = encoder.encode(image);
  return decoder.bit_branch(tape.reference(features)).value().row(0);
}

BitMessage extract(const Image& image, const Decoder& decoder, const ImageEncoder& encoder) {
  return predict_bits(extract_logits(image, decoder, encoder));
}

std::string message_digest(const BitMessage& message) { return sha256_hex("message/v1:" + message.to_string()); }

void save_embed_artifact(const std::string& path, const EmbedArtifact& artifact) {
  TensorFile f;
  f.set_metadata("format", kArtifactFormat);
  f.set_metadata("version", std::to_string(kArtifactVersion));
  for (const auto& [k, v] : artifact.manifest) f.set_metadata("manifest." + k, v);
  f.put("offsets", artifact.offsets);
  f.save(path);
}

EmbedArtifact load_embed_artifact(const std::string& path) {
  TensorFile f = TensorFile::load(path);
  f.expect_format(kArtifactFormat, kArtifactVersion);
  EmbedArtifact a;
  a.offsets = f.matrix("offsets");
  if (a.offsets.cols() != 3) throw FormatError(path + ": offsets must have 3 columns");
  const std::string prefix = "manifest.";
  for (const auto& [k, v] : f.all_metadata()) {
    if (k.rfind(prefix, 0) == 0) a.manifest[k.substr(prefix.size())] = v;
  }
  return a;
}

}  // namespace splatmark
