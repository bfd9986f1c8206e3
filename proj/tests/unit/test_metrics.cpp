#include <doctest.h>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "splatmark/error.hpp"
#include "splatmark/metrics.hpp"

using namespace splatmark;
using namespace splatmark::testing;

TEST_SUITE("metrics") {
  TEST_CASE("psnr closed forms") {
    Image a(8, 8);
    a.pixels.setConstant(0.4);
    Image b = a;
    b.pixels.array() += 0.1;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(psnr(a, a) == kPsnrCap);
    CHECK(mse(a, b) == doctest::Approx(0.01));
  }

  TEST_CASE("psnr matches the two-loop oracle") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Image a = random_image(8, 8, s), b = random_image(8, 8, s + 100);
      CHECK(std::abs(psnr(a, b) - psnr_oracle(a, b)) < 1e-6);
    }
  }

  TEST_CASE("ssim of an image with itself") {
    const Image a = random_image(16, 12, 3);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("ssim matches the brute-force oracle") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Image a = random_image(8, 8, s), b = random_image(8, 8, s + 50);
      CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6);
    }
    const Image a = random_image(24, 16, 7);
    Image b = a;
    b.pixels.array() = (b.pixels.array() * 0.8 + 0.05);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6);
  }

  TEST_CASE("ssim ranks an inverted image below a slightly noisy one") {
    const Image x = random_image(16, 16, 11);
    Image inv = x;
    inv.pixels.array() = 1.0 - inv.pixels.array();
    Image noisy = x;
    Rng rng(12);
    for (ad::Index i = 0; i < noisy.pixels.size(); ++i) noisy.pixels.data()[i] += 0.01 * rng.normal();
    CHECK(ssim(x, inv) < ssim(x, noisy));
  }

  TEST_CASE("constant images reduce to the luminance term") {
    Image a(8, 8), b(8, 8);
    a.pixels.setConstant(0.3);
    b.pixels.setConstant(0.5);
    const double c1 = kSsimC1;
    const double luminance = (2 * 0.3 * 0.5 + c1) / (0.3 * 0.3 + 0.5 * 0.5 + c1);
    CHECK(ssim(a, b) == doctest::Approx(luminance).epsilon(1e-10));
  }

  TEST_CASE("differentiable ssim agrees with the image form") {
    const Image a = random_image(8, 8, 21), b = random_image(8, 8, 22);
    ad::Tape t;
    CHECK(ssim(t.constant(a.pixels), t.constant(b.pixels), 8, 8).scalar() == doctest::Approx(ssim(a, b)).epsilon(1e-12));
    CHECK(check_input_gradient([&](ad::Tape& tape, ad::Var v) { return ssim(v, tape.constant(b.pixels), 8, 8); },
                               a.pixels) < kGradTolerance);
  }

  TEST_CASE("size mismatch") {
    CHECK_THROWS_AS(psnr(Image(8, 8), Image(8, 16)), InputError);
  }
}
