#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "splatmark/decoder.hpp"
#include "splatmark/encoders.hpp"
#include "splatmark/error.hpp"
#include "splatmark/rng.hpp"
#include "splatmark/sampler.hpp"

using namespace splatmark;
using splatmark::testing::kGradTolerance;
using splatmark::testing::marginal_oracle;
using splatmark::testing::relative_error;

namespace {

ad::Matrix randn(ad::Index r, ad::Index c, Rng& rng, double s = 1.0) {
  ad::Matrix m(r, c);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
  return m;
}

ad::Matrix unit_rows(ad::Index r, Rng& rng) {
  ad::Matrix m = randn(r, kEmbeddingDim, rng);
  m.rowwise().normalize();
  return m;
}

DecoderConfig tiny() {
  DecoderConfig c;
  c.message_bits = 4;
  c.chunk_bits = 2;
  c.groups = 2;
  c.width = 8;
  c.heads = 4;
  c.phi_hidden = 16;
  c.bit_hidden = 16;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("decoder") {
  TEST_CASE("marginalization matches brute-force enumeration") {
    Rng rng(1);
    double worst = 0.0;
    for (int n : {1, 2, 4, 8}) {
      const int bits = 3 * n + (n > 1 ? n / 2 : 0);
      const int chunks = (bits + n - 1) / n;
      const auto cb = make_codebook(n);
      for (int trial = 0; trial < 20; ++trial) {
        const ad::Matrix logits = randn(2 * chunks, 1 << n, rng, 3.0);
        ad::Tape t;
        ad::Var probs;
        const auto out = chunks_to_bits(t.constant(logits), cb, bits, 1e-6, &probs);
        const ad::Matrix ref = marginal_oracle(logits, n, chunks, bits, 1e-6);
        REQUIRE(probs.rows() == 2);
        REQUIRE(probs.cols() == bits);
        worst = std::max(worst, (probs.value() - ref).cwiseAbs().maxCoeff());
        const ad::Matrix back = out.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
        CHECK((back - probs.value()).cwiseAbs().maxCoeff() < 1e-9);
      }
    }
    CHECK(worst < 1e-12);
  }

  TEST_CASE("validation names the violated rule") {
    auto c = tiny();
    c.message_bits = 64;
    c.chunk_bits = 2;
    c.groups = 3;
    try {
      c.validate();
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("L mod G") != std::string::npos);
    }
    c = tiny();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("output shapes") {
    Rng rng(2);
    DecoderConfig c = tiny();
    c.message_bits = 5;
    c.groups = 1;
    Decoder dec(c);
    ad::Tape t;
    const auto out = dec.forward(t.constant(unit_rows(3, rng)));
    CHECK(out.chunk_logits.rows() == 3 * 3);
    CHECK(out.chunk_logits.cols() == 4);
    CHECK(out.bit_logits.rows() == 3);
    CHECK(out.bit_logits.cols() == 5);
    CHECK(out.projected_logits.cols() == 5);
  }

  TEST_CASE("frozen and trainable passes agree") {
    Rng rng(3);
    Decoder dec(tiny());
    const ad::Matrix f = unit_rows(4, rng);
    ad::Tape a, b;
    const auto x = dec.forward(a.constant(f), true);
    const auto y = static_cast<const Decoder&>(dec).forward(b.constant(f));
    CHECK((x.bit_logits.value() - y.bit_logits.value()).norm() == 0.0);
    CHECK((x.chunk_logits.value() - y.chunk_logits.value()).norm() == 0.0);
  }

  TEST_CASE("initialization is seeded") {
    CHECK(Decoder(tiny()).parameter_hash() == Decoder(tiny()).parameter_hash());
    auto other = tiny();
    other.seed = 6;
    CHECK(Decoder(tiny()).parameter_hash() != Decoder(other).parameter_hash());
  }

  TEST_CASE("loss equals its explicit composition") {
    Rng rng(4);
    const auto cfg = tiny();
    Decoder dec(cfg);
    std::vector<BitMessage> msgs;
    for (int i = 0; i < 3; ++i) msgs.push_back(random_message(4, rng));
    ad::Tape t;
    const auto out = dec.forward(t.constant(unit_rows(3, rng)));
    const LossWeights w{0.7, 0.25, 1.3};
    const double total = decoder_loss(out, msgs, cfg, w).scalar();

    const ad::Matrix s = out.chunk_logits.value();
    double ce = 0.0;
    for (int b = 0; b < 3; ++b) {
      const auto t_idx = chunk_indices(msgs[static_cast<std::size_t>(b)], CodecConfig{4, 2});
      for (int i = 0; i < 2; ++i) {
        const auto row = s.row(b * 2 + i);
        ce += std::log(row.array().exp().sum()) - row(t_idx[static_cast<std::size_t>(i)]);
      }
    }
    ce /= 3.0;
    auto bce = [&](const ad::Matrix& logits) {
      double acc = 0.0;
      for (int b = 0; b < 3; ++b) {
        for (int i = 0; i < 4; ++i) {
          const double p = 1.0 / (1.0 + std::exp(-logits(b, i)));
          const double y = msgs[static_cast<std::size_t>(b)][i];
          acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        }
      }
      return acc / 12.0;
    };
    const double ref = 0.7 * ce + 0.25 * bce(out.projected_logits.value()) + 1.3 * bce(out.bit_logits.value());
    CHECK(total == doctest::Approx(ref).epsilon(1e-10));
  }

  TEST_CASE("loss gradients match finite differences") {
    Rng rng(5);
    const auto cfg = tiny();
    Decoder dec(cfg);
    const ad::Matrix feats = unit_rows(3, rng);
    std::vector<BitMessage> msgs;
    for (int i = 0; i < 3; ++i) msgs.push_back(random_message(4, rng));
    const LossWeights w{1.0, 0.25, 1.0};
    auto loss_at = [&](const ad::Matrix& f) {
      ad::Tape t;
      return decoder_loss(dec.forward(t.constant(f)), msgs, cfg, w).scalar();
    };

    dec.zero_grad();
    ad::Tape t;
    auto leaf = t.variable(feats);
    t.backward(decoder_loss(dec.forward(leaf, true), msgs, cfg, w));
    CHECK(relative_error(leaf.grad(), testing::numeric_gradient(loss_at, feats)) < kGradTolerance);

    for (auto& p : dec.parameters()) {
      CAPTURE(p.name);
      const ad::Index step = std::max<ad::Index>(1, p.value.size() / 12);
      ad::Matrix analytic(1, (p.value.size() + step - 1) / step), numeric(analytic.rows(), analytic.cols());
      ad::Index k = 0;
      for (ad::Index i = 0; i < p.value.size(); i += step, ++k) {
        const double keep = p.value.data()[i];
        const double h = 1e-5;
        p.value.data()[i] = keep + h;
        const double up = loss_at(feats);
        p.value.data()[i] = keep - h;
        const double down = loss_at(feats);
        p.value.data()[i] = keep;
        analytic(0, k) = p.grad.data()[i];
        numeric(0, k) = (up - down) / (2 * h);
      }
      CHECK(relative_error(analytic, numeric) < kGradTolerance);
    }
  }

  TEST_CASE("hard decisions") {
    Eigen::RowVectorXd logits(4);
    logits << 0.3, -0.1, 0.0, 2.0;
    CHECK(predict_bits(logits).to_string() == "1001");
    CHECK(bit_accuracy(BitMessage::from_string("1001"), BitMessage::from_string("1011")) == doctest::Approx(0.75));
    CHECK_THROWS_AS(bit_accuracy(BitMessage::from_string("10"), BitMessage::from_string("101")), InputError);
  }
}
