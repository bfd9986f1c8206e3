#pragma once

// Differentiable 2D distortions applied to rendered views. Spatial kinds are
// fixed sparse linear maps over the (H*W) pixel rows; every kind ends with a
// clamp to [0, 1].

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "splatmark/autodiff.hpp"
#include "splatmark/image.hpp"
#include "splatmark/rng.hpp"

namespace splatmark {

enum class DistortionKind { kNone, kNoise, kRotation, kScaling, kBlur, kCrop, kBrightness, kJpeg, kCombined };

const char* distortion_name(DistortionKind kind);
/// Throws ConfigError for an unknown name.
DistortionKind parse_distortion(const std::string& name);
std::vector<DistortionKind> all_distortions();

struct DistortionConfig {
  std::vector<DistortionKind> enabled = all_distortions();
  double noise_sigma = 0.1;
  double rotation_max = 0.5235987755982988;  // pi / 6
  double scale_max = 0.25;                   // factor in [1 - s, 1 + s]
  double blur_sigma = 0.1;
  int blur_kernel = 5;
  double crop_area = 0.4;
  double brightness_min = 0.5;
  double brightness_max = 1.5;
  int jpeg_quality = 50;

  void validate() const;
};

/// Quantization table at an IJG quality level; quality 100 gives all ones.
std::vector<double> jpeg_table(int quality, bool chroma);

class DistortionLayer {
 public:
  DistortionLayer(int height, int width, DistortionConfig cfg);

  const DistortionConfig& config() const { return cfg_; }

  /// Uniform over the enabled kinds.
  DistortionKind sample_kind(Rng& rng) const;
  /// image: (H*W) x 3. Draws the kind's parameter (angle, factor, gain,
  /// noise) from rng.
  ad::Var apply(ad::Var image, DistortionKind kind, Rng& rng) const;
  Image apply(const Image& image, DistortionKind kind, Rng& rng) const;

  // Fixed-parameter forms, used by tests and the report.
  ad::Var rotate(ad::Var image, double radians) const;
  ad::Var scale(ad::Var image, double factor) const;
  ad::Var blur(ad::Var image) const;
  ad::Var crop(ad::Var image) const;
  ad::Var brightness(ad::Var image, double gain) const;
  ad::Var jpeg(ad::Var image) const;
  ad::Var jpeg(ad::Var image, int quality) const;

 private:
  std::shared_ptr<const ad::SparseMatrix> resample(double radians, double factor) const;
  ad::Var jpeg_core(ad::Var image, const ad::Matrix& inverse_q, const ad::Matrix& q) const;

  int height_, width_;
  DistortionConfig cfg_;
  std::shared_ptr<const ad::SparseMatrix> blur_;
  std::shared_ptr<const ad::SparseMatrix> crop_;
  std::shared_ptr<const ad::SparseMatrix> dct_;
  std::shared_ptr<const ad::SparseMatrix> idct_;
  ad::Matrix q_, inverse_q_;
};

}  // namespace splatmark
