#pragma once

// Brute-force reference metrics, written pixel by pixel.

#include <cmath>

#include "splatmark/image.hpp"
#include "splatmark/rng.hpp"

namespace splatmark::testing {

inline Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (ad::Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = rng.uniform();
  return img;
}

inline double psnr_oracle(const Image& a, const Image& b) {
  double sum = 0.0;
  int count = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double d = a.pixels(y * a.width + x, c) - b.pixels(y * b.width + x, c);
        sum += d * d;
        ++count;
      }
    }
  }
  return 10.0 * std::log10(1.0 / (sum / count));
}

// Gaussian window, sigma 1.5, 11 taps, cut at the borders and renormalized.
inline double ssim_oracle(const Image& a, const Image& b) {
  const int r = 5;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < a.width; ++x) {
        double wsum = 0.0, ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= a.height || xx < 0 || xx >= a.width) continue;
            const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            const double pa = a.pixels(yy * a.width + xx, c), pb = b.pixels(yy * b.width + xx, c);
            wsum += w;
            ma += w * pa;
            mb += w * pb;
            saa += w * pa * pa;
            sbb += w * pb * pb;
            sab += w * pa * pb;
          }
        }
        ma /= wsum;
        mb /= wsum;
        const double va = saa / wsum - ma * ma, vb = sbb / wsum - mb * mb, cov = sab / wsum - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    }
  }
  return total / (3.0 * a.height * a.width);
}

// Expected bit probabilities by enumerating every chunk state.
inline ad::Matrix marginal_oracle(const ad::Matrix& logits, int n, int chunks, int bits, double eps) {
  const ad::Index batch = logits.rows() / chunks;
  ad::Matrix out = ad::Matrix::Zero(batch, bits);
  for (ad::Index b = 0; b < batch; ++b) {
    for (int i = 0; i < chunks; ++i) {
      const auto row = logits.row(b * chunks + i);
      const double mx = row.maxCoeff();
      double z = 0.0;
      for (int j = 0; j < (1 << n); ++j) z += std::exp(row(j) - mx);
      for (int j = 0; j < (1 << n); ++j) {
        const double p = std::exp(row(j) - mx) / z;
        for (int r = 0; r < n; ++r) {
          const int pos = i * n + r;
          if (pos < bits && ((j >> (n - 1 - r)) & 1)) out(b, pos) += p;
        }
      }
    }
  }
  return out.cwiseMax(eps).cwiseMin(1.0 - eps);
}

}  // namespace splatmark::testing
