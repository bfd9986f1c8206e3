#include "splatmark/metrics.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <vector>

#include "splatmark/error.hpp"

namespace splatmark {

namespace {

void require_same(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) throw InputError("metrics: images differ in size");
}

std::vector<double> taps() {
  std::vector<double> w(kSsimWindow);
  const int r = kSsimWindow / 2;
  for (int i = 0; i < kSsimWindow; ++i) w[static_cast<std::size_t>(i)] = std::exp(-(i - r) * (i - r) / (2.0 * kSsimSigma * kSsimSigma));
  return w;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same(a, b);
  return (a.pixels - b.pixels).squaredNorm() / static_cast<double>(a.pixels.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

std::shared_ptr<const ad::SparseMatrix> ssim_window(int height, int width) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::shared_ptr<const ad::SparseMatrix>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{height, width}];
  if (slot) return slot;

  const std::vector<double> w = taps();
  const int r = kSsimWindow / 2;
  std::vector<Eigen::Triplet<double, ad::Index>> t;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double total = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (y + dy >= 0 && y + dy < height && x + dx >= 0 && x + dx < width) {
            total += w[static_cast<std::size_t>(dy + r)] * w[static_cast<std::size_t>(dx + r)];
          }
        }
      }
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (y + dy < 0 || y + dy >= height || x + dx < 0 || x + dx >= width) continue;
          t.emplace_back(static_cast<ad::Index>(y) * width + x, static_cast<ad::Index>(y + dy) * width + (x + dx),
                         w[static_cast<std::size_t>(dy + r)] * w[static_cast<std::size_t>(dx + r)] / total);
        }
      }
    }
  }
  const ad::Index n = static_cast<ad::Index>(height) * width;
  auto m = std::make_shared<ad::SparseMatrix>(n, n);
  m->setFromTriplets(t.begin(), t.end());
  m->makeCompressed();
  slot = m;
  return slot;
}

ad::Var ssim(ad::Var a, ad::Var b, int height, int width) {
  const auto win = ssim_window(height, width);
  ad::Var mu_a = ad::sparse_apply(win, a);
  ad::Var mu_b = ad::sparse_apply(win, b);
  ad::Var mu_aa = ad::square(mu_a), mu_bb = ad::square(mu_b), mu_ab = ad::mul(mu_a, mu_b);
  ad::Var var_a = ad::sub(ad::sparse_apply(win, ad::square(a)), mu_aa);
  ad::Var var_b = ad::sub(ad::sparse_apply(win, ad::square(b)), mu_bb);
  ad::Var cov = ad::sub(ad::sparse_apply(win, ad::mul(a, b)), mu_ab);
  ad::Var num = ad::mul(ad::add_scalar(ad::scale(mu_ab, 2.0), kSsimC1), ad::add_scalar(ad::scale(cov, 2.0), kSsimC2));
  ad::Var den = ad::mul(ad::add_scalar(ad::add(mu_aa, mu_bb), kSsimC1), ad::add_scalar(ad::add(var_a, var_b), kSsimC2));
  return ad::mean(ad::div(num, den));
}

double ssim(const Image& a, const Image& b) {
  require_same(a, b);
  ad::Tape t;
  return ssim(t.reference(a.pixels), t.reference(b.pixels), a.height, a.width).scalar();
}

}  // namespace splatmark
