#include "splatmark/losses.hpp"

#include "splatmark/error.hpp"
#include "splatmark/metrics.hpp"

namespace splatmark {

ad::Var rgb_loss(ad::Var watermarked, ad::Var reference, int height, int width, double lambda_ssim) {
  if (watermarked.rows() != reference.rows() || watermarked.cols() != reference.cols()) {
    throw InputError("rgb_loss: images differ in shape");
  }
  ad::Var l1 = ad::mean(ad::abs(ad::sub(watermarked, reference)));
  if (lambda_ssim == 0.0) return l1;
  ad::Var structural = ad::add_scalar(ad::scale(ssim(watermarked, reference, height, width), -1.0), 1.0);
  return ad::add(ad::scale(structural, lambda_ssim), ad::scale(l1, 1.0 - lambda_ssim));
}

ad::Var off_loss(ad::Var offsets) { return ad::mean(ad::square(offsets)); }

}  // namespace splatmark
