#pragma once

#include "splatmark/autodiff.hpp"

namespace splatmark {

/// lambda_ssim * (1 - SSIM) + (1 - lambda_ssim) * L1, images (H*W) x 3.
ad::Var rgb_loss(ad::Var watermarked, ad::Var reference, int height, int width, double lambda_ssim);

/// Mean squared offset entry.
ad::Var off_loss(ad::Var offsets);

/// Perceptual term hook; the default contributes nothing.
class PerceptualLoss {
 public:
  virtual ~PerceptualLoss() = default;
  /// Returns an invalid Var when the term is disabled.
  virtual ad::Var operator()(ad::Var watermarked, ad::Var reference, int height, int width) const = 0;
};

class NoPerceptualLoss : public PerceptualLoss {
 public:
  ad::Var operator()(ad::Var, ad::Var, int, int) const override { return {}; }
};

}  // namespace splatmark
