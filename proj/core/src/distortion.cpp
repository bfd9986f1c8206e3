#include "splatmark/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "splatmark/error.hpp"

namespace splatmark {

namespace {

using Triplet = Eigen::Triplet<double, ad::Index>;

constexpr int kBlock = 8;

constexpr int kLumaBase[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                               14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                               18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                               49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr int kChromaBase[64] = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
                                 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
                                 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

std::shared_ptr<const ad::SparseMatrix> build(ad::Index n, const std::vector<Triplet>& t) {
  auto m = std::make_shared<ad::SparseMatrix>(n, n);
  m->setFromTriplets(t.begin(), t.end());
  m->makeCompressed();
  return m;
}

// Row-vector color transforms: [Y Cb Cr] = [R G B] * M.
ad::Matrix rgb_to_ycc() {
  ad::Matrix m(3, 3);
  m << 0.299, -0.168736, 0.5, 0.587, -0.331264, -0.418688, 0.114, 0.5, -0.081312;
  return m;
}

}  // namespace

const char* distortion_name(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::kNone: return "none";
    case DistortionKind::kNoise: return "noise";
    case DistortionKind::kRotation: return "rotation";
    case DistortionKind::kScaling: return "scaling";
    case DistortionKind::kBlur: return "blur";
    case DistortionKind::kCrop: return "crop";
    case DistortionKind::kBrightness: return "brightness";
    case DistortionKind::kJpeg: return "jpeg";
    case DistortionKind::kCombined: return "combined";
  }
  return "?";
}

std::vector<DistortionKind> all_distortions() {
  return {DistortionKind::kNone, DistortionKind::kNoise,      DistortionKind::kRotation,
          DistortionKind::kScaling, DistortionKind::kBlur,    DistortionKind::kCrop,
          DistortionKind::kBrightness, DistortionKind::kJpeg, DistortionKind::kCombined};
}

DistortionKind parse_distortion(const std::string& name) {
  for (DistortionKind k : all_distortions()) {
    if (name == distortion_name(k)) return k;
  }
  throw ConfigError("unknown distortion kind '" + name + "'");
}

void DistortionConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("distortion: " + what); };
  if (enabled.empty()) fail("at least one kind must be enabled");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be nonnegative");
  if (!(rotation_max >= 0.0)) fail("rotation_max must be nonnegative");
  if (!(scale_max >= 0.0 && scale_max < 1.0)) fail("scale_max must lie in [0, 1)");
  if (!(blur_sigma > 0.0) || blur_kernel < 1 || blur_kernel % 2 == 0) fail("blur needs sigma > 0 and an odd kernel");
  if (!(crop_area > 0.0 && crop_area <= 1.0)) fail("crop_area must lie in (0, 1]");
  if (!(brightness_min > 0.0 && brightness_max >= brightness_min)) fail("bad brightness range");
  if (jpeg_quality < 1 || jpeg_quality > 100) fail("jpeg_quality must lie in [1, 100]");
}

std::vector<double> jpeg_table(int quality, bool chroma) {
  if (quality < 1 || quality > 100) throw ConfigError("jpeg quality must lie in [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::vector<double> out(64);
  for (int i = 0; i < 64; ++i) {
    const int base = chroma ? kChromaBase[i] : kLumaBase[i];
    out[static_cast<std::size_t>(i)] = std::clamp((base * scale + 50) / 100, 1, 255);
  }
  return out;
}

DistortionLayer::DistortionLayer(int height, int width, DistortionConfig cfg)
    : height_(height), width_(width), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (height_ % kBlock != 0 || width_ % kBlock != 0) throw ConfigError("distortion: canvas must be a multiple of 8");
  const ad::Index n = static_cast<ad::Index>(height_) * width_;

  // Normalized Gaussian blur, truncated and renormalized at the borders.
  {
    const int r = cfg_.blur_kernel / 2;
    std::vector<Triplet> t;
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        double total = 0.0;
        std::vector<Triplet> row;
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const int sy = y + dy, sx = x + dx;
            if (sy < 0 || sy >= height_ || sx < 0 || sx >= width_) continue;
            const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * cfg_.blur_sigma * cfg_.blur_sigma));
            total += w;
            row.emplace_back(static_cast<ad::Index>(y) * width_ + x, static_cast<ad::Index>(sy) * width_ + sx, w);
          }
        }
        for (auto& e : row) t.emplace_back(e.row(), e.col(), e.value() / total);
      }
    }
    blur_ = build(n, t);
  }
  // Centered crop keeping crop_area of the canvas; the rest is zeroed.
  {
    const double side = std::sqrt(cfg_.crop_area);
    const int ch = static_cast<int>(std::lround(height_ * side)), cw = static_cast<int>(std::lround(width_ * side));
    const int y0 = (height_ - ch) / 2, x0 = (width_ - cw) / 2;
    std::vector<Triplet> t;
    for (int y = y0; y < y0 + ch; ++y) {
      for (int x = x0; x < x0 + cw; ++x) {
        const ad::Index p = static_cast<ad::Index>(y) * width_ + x;
        t.emplace_back(p, p, 1.0);
      }
    }
    crop_ = build(n, t);
  }
  // Orthonormal 8x8 block DCT-II; coefficient (u, v) of a block is stored at
  // the block's pixel (u, v).
  {
    double basis[kBlock][kBlock];
    for (int k = 0; k < kBlock; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / kBlock) : std::sqrt(2.0 / kBlock);
      for (int x = 0; x < kBlock; ++x) basis[k][x] = a * std::cos((2 * x + 1) * k * std::numbers::pi / (2.0 * kBlock));
    }
    std::vector<Triplet> t;
    for (int by = 0; by < height_; by += kBlock) {
      for (int bx = 0; bx < width_; bx += kBlock) {
        for (int u = 0; u < kBlock; ++u) {
          for (int v = 0; v < kBlock; ++v) {
            const ad::Index out = static_cast<ad::Index>(by + u) * width_ + (bx + v);
            for (int y = 0; y < kBlock; ++y) {
              for (int x = 0; x < kBlock; ++x) {
                t.emplace_back(out, static_cast<ad::Index>(by + y) * width_ + (bx + x), basis[u][y] * basis[v][x]);
              }
            }
          }
        }
      }
    }
    dct_ = build(n, t);
    idct_ = std::make_shared<ad::SparseMatrix>(dct_->transpose());
  }
  const std::vector<double> luma = jpeg_table(cfg_.jpeg_quality, false), chroma = jpeg_table(cfg_.jpeg_quality, true);
  q_.resize(n, 3);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const auto k = static_cast<std::size_t>((y % kBlock) * kBlock + x % kBlock);
      const ad::Index p = static_cast<ad::Index>(y) * width_ + x;
      q_(p, 0) = luma[k];
      q_(p, 1) = chroma[k];
      q_(p, 2) = chroma[k];
    }
  }
  inverse_q_ = q_.cwiseInverse();
}

DistortionKind DistortionLayer::sample_kind(Rng& rng) const {
  return cfg_.enabled[static_cast<std::size_t>(rng.uniform_int(cfg_.enabled.size()))];
}

std::shared_ptr<const ad::SparseMatrix> DistortionLayer::resample(double radians, double factor) const {
  // Output pixel p samples the source at R(-angle)(p - c) / factor + c, bilinear, zero outside.
  const double cx = width_ / 2.0, cy = height_ / 2.0;
  const double cs = std::cos(radians), sn = std::sin(radians);
  std::vector<Triplet> t;
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double sx = (cs * dx + sn * dy) / factor + cx - 0.5;
      const double sy = (-sn * dx + cs * dy) / factor + cy - 0.5;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const ad::Index out = static_cast<ad::Index>(y) * width_ + x;
      const int xs[2] = {x0, x0 + 1}, ys[2] = {y0, y0 + 1};
      const double wx[2] = {1.0 - fx, fx}, wy[2] = {1.0 - fy, fy};
      for (int j = 0; j < 2; ++j) {
        for (int i = 0; i < 2; ++i) {
          if (xs[i] < 0 || xs[i] >= width_ || ys[j] < 0 || ys[j] >= height_) continue;
          const double w = wx[i] * wy[j];
          if (w != 0.0) t.emplace_back(out, static_cast<ad::Index>(ys[j]) * width_ + xs[i], w);
        }
      }
    }
  }
  return build(static_cast<ad::Index>(height_) * width_, t);
}

ad::Var DistortionLayer::rotate(ad::Var image, double radians) const {
  return ad::clamp(ad::sparse_apply(resample(radians, 1.0), image), 0.0, 1.0);
}

ad::Var DistortionLayer::scale(ad::Var image, double factor) const {
  if (!(factor > 0.0)) throw InputError("scaling factor must be positive");
  return ad::clamp(ad::sparse_apply(resample(0.0, factor), image), 0.0, 1.0);
}

ad::Var DistortionLayer::blur(ad::Var image) const { return ad::clamp(ad::sparse_apply(blur_, image), 0.0, 1.0); }

ad::Var DistortionLayer::crop(ad::Var image) const { return ad::clamp(ad::sparse_apply(crop_, image), 0.0, 1.0); }

ad::Var DistortionLayer::brightness(ad::Var image, double gain) const {
  return ad::clamp(ad::scale(image, gain), 0.0, 1.0);
}

ad::Var DistortionLayer::jpeg_core(ad::Var image, const ad::Matrix& inverse_q, const ad::Matrix& q) const {
  ad::Tape& t = *image.tape();
  // Level-shifted YCbCr: the chroma +128 offset and the -128 shift cancel.
  const ad::Matrix shift = (ad::Matrix(1, 3) << -128.0, 0.0, 0.0).finished();
  ad::Var ycc = ad::add_broadcast(ad::matmul(ad::scale(image, 255.0), t.constant(rgb_to_ycc())), t.constant(shift));
  ad::Var quant = ad::smooth_round(ad::mul(ad::sparse_apply(dct_, ycc), t.constant(inverse_q)));
  ad::Var back = ad::sparse_apply(idct_, ad::mul(quant, t.constant(q)));
  back = ad::add_broadcast(back, t.constant(-shift));
  ad::Var rgb = ad::matmul(back, t.constant(rgb_to_ycc().inverse()));
  return ad::clamp(ad::scale(rgb, 1.0 / 255.0), 0.0, 1.0);
}

ad::Var DistortionLayer::jpeg(ad::Var image) const { return jpeg_core(image, inverse_q_, q_); }

ad::Var DistortionLayer::jpeg(ad::Var image, int quality) const {
  if (quality == cfg_.jpeg_quality) return jpeg(image);
  const std::vector<double> luma = jpeg_table(quality, false), chroma = jpeg_table(quality, true);
  ad::Matrix q(q_.rows(), 3);
  for (ad::Index p = 0; p < q.rows(); ++p) {
    const auto k = static_cast<std::size_t>(((p / width_) % kBlock) * kBlock + (p % width_) % kBlock);
    q(p, 0) = luma[k];
    q(p, 1) = chroma[k];
    q(p, 2) = chroma[k];
  }
  return jpeg_core(image, q.cwiseInverse(), q);
}

ad::Var DistortionLayer::apply(ad::Var image, DistortionKind kind, Rng& rng) const {
  if (image.rows() != static_cast<ad::Index>(height_) * width_ || image.cols() != 3) {
    throw InputError("distortion: image must be (H*W) x 3");
  }
  ad::Tape& t = *image.tape();
  switch (kind) {
    case DistortionKind::kNone: return image;
    case DistortionKind::kNoise: {
      ad::Matrix noise(image.rows(), 3);
      for (ad::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal(0.0, cfg_.noise_sigma);
      return ad::clamp(ad::add(image, t.constant(std::move(noise))), 0.0, 1.0);
    }
    case DistortionKind::kRotation: return rotate(image, rng.uniform(-cfg_.rotation_max, cfg_.rotation_max));
    case DistortionKind::kScaling: return scale(image, rng.uniform(1.0 - cfg_.scale_max, 1.0 + cfg_.scale_max));
    case DistortionKind::kBlur: return blur(image);
    case DistortionKind::kCrop: return crop(image);
    case DistortionKind::kBrightness:
      return brightness(image, rng.uniform(cfg_.brightness_min, cfg_.brightness_max));
    case DistortionKind::kJpeg: return jpeg(image);
    case DistortionKind::kCombined: return jpeg(blur(crop(image)));
  }
  throw ConfigError("unknown distortion kind");
}

Image DistortionLayer::apply(const Image& image, DistortionKind kind, Rng& rng) const {
  if (!image.in_unit_range()) throw InputError("distortion: pixels must lie in [0, 1]");
  ad::Tape t;
  return Image(image.height, image.width, apply(t.reference(image.pixels), kind, rng).value());
}

}  // namespace splatmark
