#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "splatmark/rng.hpp"

using namespace splatmark;
using splatmark::testing::check_input_gradient;
using splatmark::testing::kGradTolerance;

namespace {

ad::Matrix randn(ad::Index r, ad::Index c, std::uint64_t seed, double s = 1.0) {
  Rng rng(seed);
  ad::Matrix m(r, c);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
  return m;
}

// Weighted sum so every output entry carries a distinct gradient.
ad::Var probe(ad::Var y) {
  ad::Tape& t = *y.tape();
  ad::Matrix w(y.rows(), y.cols());
  for (ad::Index i = 0; i < w.size(); ++i) w.data()[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
  return ad::sum(ad::mul(y, t.constant(w)));
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("forward values of elementwise ops") {
    ad::Tape t;
    ad::Matrix x(1, 3);
    x << -1.0, 0.0, 2.0;
    auto v = t.constant(x);
    CHECK(ad::square(v).value()(0, 2) == doctest::Approx(4.0));
    CHECK(ad::abs(v).value()(0, 0) == doctest::Approx(1.0));
    CHECK(ad::sigmoid(v).value()(0, 1) == doctest::Approx(0.5));
    CHECK(ad::clamp(v, 0.0, 1.0).value()(0, 2) == doctest::Approx(1.0));
    CHECK(ad::sum(v).scalar() == doctest::Approx(1.0));
    CHECK(ad::mean(v).scalar() == doctest::Approx(1.0 / 3.0));
    CHECK(ad::cos(v).value()(0, 2) == doctest::Approx(std::cos(2.0)));
  }

  TEST_CASE("gelu matches its tanh form") {
    ad::Tape t;
    ad::Matrix x(1, 4);
    x << -3.0, -0.5, 0.5, 2.0;
    const auto y = ad::gelu(t.constant(x)).value();
    for (int i = 0; i < 4; ++i) {
      const double v = x(0, i);
      const double ref = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
      CHECK(y(0, i) == doctest::Approx(ref).epsilon(1e-12));
    }
  }

  TEST_CASE("softmax rows sum to one") {
    ad::Tape t;
    const auto y = ad::softmax_rows(t.constant(randn(4, 5, 1, 3.0))).value();
    for (int r = 0; r < 4; ++r) CHECK(y.row(r).sum() == doctest::Approx(1.0));
  }

  TEST_CASE("soft clamp is the identity inside its margins") {
    for (double x : {0.02, 0.3, 0.5, 0.98}) CHECK(ad::soft_clamp01(x, 0.02) == doctest::Approx(x));
    CHECK(ad::soft_clamp01(1.01, 0.02) < 1.0);
    CHECK(ad::soft_clamp01(-0.01, 0.02) > 0.0);
  }

  TEST_CASE("elementwise gradients") {
    const ad::Matrix x = randn(3, 4, 2);
    using F = std::function<ad::Var(ad::Var)>;
    const std::vector<std::pair<const char*, F>> ops = {
        {"square", [](ad::Var a) { return ad::square(a); }},
        {"gelu", [](ad::Var a) { return ad::gelu(a); }},
        {"cos", [](ad::Var a) { return ad::cos(a); }},
        {"sigmoid", [](ad::Var a) { return ad::sigmoid(a); }},
        {"scale", [](ad::Var a) { return ad::scale(a, -2.5); }},
        {"add_scalar", [](ad::Var a) { return ad::add_scalar(a, 0.7); }},
        {"soft_clamp01", [](ad::Var a) { return ad::soft_clamp01(ad::scale(a, 0.4), 0.02); }},
        {"smooth_round", [](ad::Var a) { return ad::smooth_round(ad::scale(a, 3.0)); }},
        {"logit", [](ad::Var a) { return ad::logit(ad::sigmoid(a)); }},
        {"softmax_rows", [](ad::Var a) { return ad::softmax_rows(a); }},
        {"l2_normalize_rows", [](ad::Var a) { return ad::l2_normalize_rows(a); }},
        {"reshape", [](ad::Var a) { return ad::reshape(a, 2, 6); }},
        {"slice_rows", [](ad::Var a) { return ad::slice_rows(a, 1, 2); }},
    };
    for (const auto& [name, op] : ops) {
      CAPTURE(name);
      CHECK(check_input_gradient([&](ad::Tape&, ad::Var v) { return probe(op(v)); }, x) < kGradTolerance);
    }
  }

  TEST_CASE("binary and broadcast gradients") {
    const ad::Matrix x = randn(4, 3, 3);
    const ad::Matrix other = randn(4, 3, 4);
    const ad::Matrix row = randn(2, 3, 5);
    const ad::Matrix w = randn(3, 5, 6);
    CHECK(check_input_gradient([&](ad::Tape& t, ad::Var v) { return probe(ad::mul(v, t.constant(other))); }, x) <
          kGradTolerance);
    CHECK(check_input_gradient(
              [&](ad::Tape& t, ad::Var v) { return probe(ad::div(t.constant(other), ad::add_scalar(ad::square(v), 1.0))); },
              x) < kGradTolerance);
    CHECK(check_input_gradient([&](ad::Tape& t, ad::Var v) { return probe(ad::sub(t.constant(other), v)); }, x) <
          kGradTolerance);
    CHECK(check_input_gradient([&](ad::Tape& t, ad::Var v) { return probe(ad::add_broadcast(t.constant(x), v)); },
                               row) < kGradTolerance);
    CHECK(check_input_gradient([&](ad::Tape& t, ad::Var v) { return probe(ad::mul_broadcast(t.constant(x), v)); },
                               row) < kGradTolerance);
    CHECK(check_input_gradient([&](ad::Tape& t, ad::Var v) { return probe(ad::matmul(v, t.constant(w))); }, x) <
          kGradTolerance);
    CHECK(check_input_gradient([&](ad::Tape& t, ad::Var v) { return probe(ad::matmul(t.constant(x), v)); }, w) <
          kGradTolerance);
    CHECK(check_input_gradient(
              [&](ad::Tape& t, ad::Var v) { return probe(ad::linear(t.constant(x), v, t.constant(randn(1, 5, 7)))); },
              w) < kGradTolerance);
  }

  TEST_CASE("layout gradients") {
    const ad::Matrix x = randn(3, 2, 8);
    auto src = std::make_shared<const std::vector<ad::Index>>(std::vector<ad::Index>{5, 0, 0, 3, 2, 1, 4, 5});
    CHECK(check_input_gradient([&](ad::Tape&, ad::Var v) { return probe(ad::gather(v, 4, 2, src)); }, x) <
          kGradTolerance);
    CHECK(check_input_gradient(
              [&](ad::Tape& t, ad::Var v) {
                std::vector<ad::Var> parts = {v, t.constant(x), v};
                return probe(ad::concat_rows(parts));
              },
              x) < kGradTolerance);
    auto s = std::make_shared<ad::SparseMatrix>(2, 3);
    s->insert(0, 1) = 2.0;
    s->insert(1, 0) = -1.0;
    s->insert(1, 2) = 0.5;
    s->makeCompressed();
    std::shared_ptr<const ad::SparseMatrix> cs = s;
    CHECK(check_input_gradient([&](ad::Tape&, ad::Var v) { return probe(ad::sparse_apply(cs, v)); }, x) <
          kGradTolerance);
  }

  TEST_CASE("normalization and attention gradients") {
    const ad::Matrix x = randn(6, 8, 9);
    const ad::Matrix gain = randn(1, 8, 10);
    const ad::Matrix bias = randn(1, 8, 11);
    CHECK(check_input_gradient(
              [&](ad::Tape& t, ad::Var v) { return probe(ad::layer_norm(v, t.constant(gain), t.constant(bias))); },
              x) < kGradTolerance);
    CHECK(check_input_gradient(
              [&](ad::Tape& t, ad::Var v) { return probe(ad::layer_norm(t.constant(x), v, t.constant(bias))); },
              gain) < kGradTolerance);
    for (auto mask : {ad::AttentionMask::kNone, ad::AttentionMask::kCausal}) {
      const ad::Matrix k = randn(6, 8, 12), vv = randn(6, 8, 13);
      CHECK(check_input_gradient(
                [&](ad::Tape& t, ad::Var q) { return probe(ad::attention(q, t.constant(k), t.constant(vv), 3, 2, mask)); },
                x) < kGradTolerance);
      CHECK(check_input_gradient(
                [&](ad::Tape& t, ad::Var kk) { return probe(ad::attention(t.constant(x), kk, t.constant(vv), 3, 2, mask)); },
                k) < kGradTolerance);
      CHECK(check_input_gradient(
                [&](ad::Tape& t, ad::Var v) { return probe(ad::attention(t.constant(x), t.constant(k), v, 3, 2, mask)); },
                vv) < kGradTolerance);
    }
  }

  TEST_CASE("causal attention ignores later positions") {
    ad::Tape t;
    ad::Matrix x = randn(4, 4, 14);
    const auto a = ad::attention(t.constant(x), t.constant(x), t.constant(x), 4, 1, ad::AttentionMask::kCausal).value();
    x.row(3).setConstant(9.0);
    const auto b = ad::attention(t.constant(x), t.constant(x), t.constant(x), 4, 1, ad::AttentionMask::kCausal).value();
    CHECK((a.topRows(3) - b.topRows(3)).norm() < 1e-12);
  }

  TEST_CASE("loss gradients") {
    const ad::Matrix logits = randn(5, 4, 15);
    const std::vector<int> targets = {0, 3, 1, 1, 2};
    CHECK(check_input_gradient([&](ad::Tape&, ad::Var v) { return ad::cross_entropy_sum(v, targets, 0.2); }, logits) <
          kGradTolerance);
    ad::Matrix bits(5, 4);
    for (ad::Index i = 0; i < bits.size(); ++i) bits.data()[i] = static_cast<double>(i % 3 == 0);
    CHECK(check_input_gradient([&](ad::Tape&, ad::Var v) { return ad::bce_with_logits_mean(v, bits); }, logits) <
          kGradTolerance);
  }

  TEST_CASE("cross entropy equals an explicit log-softmax") {
    ad::Tape t;
    const ad::Matrix logits = randn(3, 4, 16);
    const std::vector<int> targets = {2, 0, 3};
    double ref = 0.0;
    for (int r = 0; r < 3; ++r) {
      const double lse = std::log(logits.row(r).array().exp().sum());
      ref += lse - logits(r, targets[static_cast<std::size_t>(r)]);
    }
    CHECK(ad::cross_entropy_sum(t.constant(logits), targets, 1.0).scalar() == doctest::Approx(ref).epsilon(1e-12));
  }

  TEST_CASE("parameters accumulate gradients") {
    ad::Parameter p("w", randn(2, 2, 17));
    ad::Tape t;
    auto y = ad::sum(ad::square(t.parameter(p)));
    t.backward(y);
    CHECK((p.grad - 2.0 * p.value).norm() < 1e-12);
    ad::Tape t2;
    auto z = ad::sum(t2.frozen(p));
    CHECK_FALSE(t2.needs_grad(z));
  }
}
