#pragma once

#include <memory>

#include "splatmark/autodiff.hpp"
#include "splatmark/image.hpp"

namespace splatmark {

/// Reported for identical images in place of +inf.
inline constexpr double kPsnrCap = 99.0;

double mse(const Image& a, const Image& b);
/// 10 log10(1 / MSE) for images in [0, 1], capped at kPsnrCap.
double psnr(const Image& a, const Image& b);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Gaussian 11x11 (sigma 1.5) window as an (H*W) x (H*W) operator. The
/// window is truncated at the borders and renormalized.
std::shared_ptr<const ad::SparseMatrix> ssim_window(int height, int width);

/// Mean SSIM over every pixel position and channel.
double ssim(const Image& a, const Image& b);
/// Differentiable form; a and b are (H*W) x 3 on the same tape.
ad::Var ssim(ad::Var a, ad::Var b, int height, int width);

}  // namespace splatmark
