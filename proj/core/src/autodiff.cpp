#include "splatmark/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "splatmark/error.hpp"

namespace splatmark::ad {

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InputError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw InputError("autodiff: operation on an empty Var");
  return *a.tape();
}

}  // namespace

// ---- Var / Tape ----------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

const Matrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external != nullptr ? *n.external : n.own;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.own = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.own = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.needs_grad = true;
  n.param = &p;
  return push(std::move(n));
}

Var Tape::frozen(const Parameter& p) { return reference(p.value); }

Var Tape::reference(const Matrix& value) {
  Node n;
  n.external = &value;
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.own = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape() != this) throw InputError("autodiff: inputs belong to a different tape");
    n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw InputError("backward: root belongs to a different tape");
  if (root.rows() != 1 || root.cols() != 1) throw InputError("backward: root must be 1x1");
  Node& r = nodes_[root.id()];
  if (!r.needs_grad) return;
  r.grad = Matrix::Ones(1, 1);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      // The closure may touch other nodes only; copy-free access is safe
      // because no nodes are appended during backward.
      n.backward(*this, n.grad);
    }
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

// ---- linear algebra ------------------------------------------------------

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw InputError("matmul: inner dimensions differ");
  Tape& t = tape_of(a);
  Matrix out;
  out.noalias() = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var linear(Var x, Var w, Var bias) {
  if (x.cols() != w.rows()) throw InputError("linear: input width does not match weight rows");
  Tape& t = tape_of(x);
  Matrix out;
  out.noalias() = x.value() * w.value();
  if (bias.valid()) {
    if (bias.rows() != 1 || bias.cols() != w.cols()) throw InputError("linear: bias shape");
    out.rowwise() += bias.value().row(0);
    return t.record(std::move(out), {x, w, bias}, [x, w, bias](Tape& t, const Matrix& g) {
      if (t.needs_grad(x)) t.accumulate(x, g * w.value().transpose());
      if (t.needs_grad(w)) t.accumulate(w, x.value().transpose() * g);
      if (t.needs_grad(bias)) t.accumulate(bias, g.colwise().sum());
    });
  }
  return t.record(std::move(out), {x, w}, [x, w](Tape& t, const Matrix& g) {
    if (t.needs_grad(x)) t.accumulate(x, g * w.value().transpose());
    if (t.needs_grad(w)) t.accumulate(w, x.value().transpose() * g);
  });
}

Var sparse_apply(std::shared_ptr<const SparseMatrix> s, Var x) {
  if (s->cols() != x.rows()) throw InputError("sparse_apply: operator width does not match rows");
  Tape& t = tape_of(x);
  Matrix out = (*s) * x.value();
  return t.record(std::move(out), {x}, [s, x](Tape& t, const Matrix& g) {
    t.accumulate(x, s->transpose() * g);
  });
}

// ---- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tape& t = tape_of(a);
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tape& t = tape_of(a);
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tape& t = tape_of(a);
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var div(Var a, Var b) {
  require_same_shape(a, b, "div");
  Tape& t = tape_of(a);
  return t.record(a.value().cwiseQuotient(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix gb = g.cwiseQuotient(b.value());
    if (t.needs_grad(a)) t.accumulate(a, gb);
    if (t.needs_grad(b)) {
      t.accumulate(b, -gb.cwiseProduct(a.value()).cwiseQuotient(b.value()));
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  return t.record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  return t.record(a.value().array() + s, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var square(Var a) {
  Tape& t = tape_of(a);
  return t.record(a.value().cwiseAbs2(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

Var abs(Var a) {
  Tape& t = tape_of(a);
  return t.record(a.value().cwiseAbs(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double x) {
      return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    })));
  });
}

Var cos(Var a) {
  Tape& t = tape_of(a);
  return t.record(a.value().array().cos().matrix(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, -g.cwiseProduct(a.value().array().sin().matrix()));
  });
}

// Tanh form, 0.5 x (1 + tanh(u)) = x * sigmoid(2u), so everything runs on
// the vectorized exp.
Var gelu(Var a) {
  Tape& t = tape_of(a);
  constexpr double kC = 0.79788456080286535588;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  const auto x = a.value().array();
  Matrix s = (1.0 / (1.0 + (-2.0 * kC * (x + kA * x.cube())).exp())).matrix();
  Matrix out = a.value().cwiseProduct(s);
  return t.record(std::move(out), {a}, [a, s = std::move(s)](Tape& t, const Matrix& g) {
    const auto x = a.value().array();
    const auto sa = s.array();
    Matrix d = (sa + x * sa * (1.0 - sa) * (2.0 * kC) * (1.0 + 3.0 * kA * x.square())).matrix();
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  Matrix y = out;
  return t.record(std::move(out), {a}, [a, y = std::move(y)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var clamp(Var a, double lo, double hi) {
  Tape& t = tape_of(a);
  return t.record(a.value().cwiseMax(lo).cwiseMin(hi), {a}, [a, lo, hi](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([lo, hi](double x) {
      return (x > lo && x < hi) ? 1.0 : 0.0;
    })));
  });
}

Var logit(Var p) {
  Tape& t = tape_of(p);
  Matrix out = p.value().unaryExpr([](double x) { return std::log(x) - std::log1p(-x); });
  return t.record(std::move(out), {p}, [p](Tape& t, const Matrix& g) {
    t.accumulate(p, g.cwiseProduct(p.value().unaryExpr([](double x) { return 1.0 / (x * (1.0 - x)); })));
  });
}

double soft_clamp01(double x, double margin) {
  if (x < margin) return margin * std::exp((x - margin) / margin);
  if (x > 1.0 - margin) return 1.0 - margin * std::exp((1.0 - margin - x) / margin);
  return x;
}

double soft_clamp01_derivative(double x, double margin) {
  if (x < margin) return std::exp((x - margin) / margin);
  if (x > 1.0 - margin) return std::exp((1.0 - margin - x) / margin);
  return 1.0;
}

Var soft_clamp01(Var a, double margin) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr([margin](double x) { return soft_clamp01(x, margin); });
  return t.record(std::move(out), {a}, [a, margin](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr(
                        [margin](double x) { return soft_clamp01_derivative(x, margin); })));
  });
}

Var smooth_round(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr([](double x) {
    const double r = std::nearbyint(x);
    const double f = x - r;
    return r + f * f * f;
  });
  return t.record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double x) {
      const double f = x - std::nearbyint(x);
      return 3.0 * f * f;
    })));
  });
}

// ---- broadcasting and layout ----------------------------------------------

namespace {

void require_tiling(Var a, Var r, const char* op) {
  if (r.cols() != a.cols() || r.rows() == 0 || a.rows() % r.rows() != 0) {
    throw InputError(std::string(op) + ": operand rows must tile the input");
  }
}

}  // namespace

Var add_broadcast(Var a, Var r) {
  require_tiling(a, r, "add_broadcast");
  Tape& t = tape_of(a);
  Matrix out = a.value();
  const Index period = r.rows();
  for (Index i = 0; i < out.rows(); i += period) out.middleRows(i, period) += r.value();
  return t.record(std::move(out), {a, r}, [a, r](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs_grad(r)) {
      const Index period = r.rows();
      Matrix acc = Matrix::Zero(period, r.cols());
      for (Index i = 0; i < g.rows(); i += period) acc += g.middleRows(i, period);
      t.accumulate(r, acc);
    }
  });
}

Var mul_broadcast(Var a, Var r) {
  require_tiling(a, r, "mul_broadcast");
  Tape& t = tape_of(a);
  Matrix out = a.value();
  const Index period = r.rows();
  for (Index i = 0; i < out.rows(); i += period) {
    out.middleRows(i, period).array() *= r.value().array();
  }
  return t.record(std::move(out), {a, r}, [a, r](Tape& t, const Matrix& g) {
    const Index period = r.rows();
    if (t.needs_grad(a)) {
      Matrix ga = g;
      for (Index i = 0; i < ga.rows(); i += period) ga.middleRows(i, period).array() *= r.value().array();
      t.accumulate(a, ga);
    }
    if (t.needs_grad(r)) {
      Matrix acc = Matrix::Zero(period, r.cols());
      for (Index i = 0; i < g.rows(); i += period) {
        acc.array() += g.middleRows(i, period).array() * a.value().middleRows(i, period).array();
      }
      t.accumulate(r, acc);
    }
  });
}

Var reshape(Var a, Index rows, Index cols) {
  if (rows * cols != a.rows() * a.cols()) throw InputError("reshape: element count changes");
  Tape& t = tape_of(a);
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return t.record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Eigen::Map<const Matrix>(g.data(), a.rows(), a.cols()));
  });
}

Var gather(Var a, Index rows, Index cols, std::shared_ptr<const std::vector<Index>> source) {
  if (static_cast<Index>(source->size()) != rows * cols) throw InputError("gather: index count");
  Tape& t = tape_of(a);
  Matrix out(rows, cols);
  const double* in = a.value().data();
  double* o = out.data();
  const Index n = a.size();
  for (Index i = 0; i < rows * cols; ++i) {
    const Index s = (*source)[static_cast<std::size_t>(i)];
    if (s < 0 || s >= n) throw InputError("gather: index out of range");
    o[i] = in[s];
  }
  return t.record(std::move(out), {a}, [a, source](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    double* d = ga.data();
    const double* gd = g.data();
    for (std::size_t i = 0; i < source->size(); ++i) d[(*source)[i]] += gd[i];
    t.accumulate(a, ga);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InputError("concat_rows: no inputs");
  Tape& t = tape_of(parts.front());
  Index rows = 0;
  const Index cols = parts.front().cols();
  for (const Var& p : parts) {
    if (p.cols() != cols) throw InputError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [inputs](Tape& t, const Matrix& g) {
    Index at = 0;
    for (const Var& p : inputs) {
      t.accumulate(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

Var slice_rows(Var a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw InputError("slice_rows: range");
  Tape& t = tape_of(a);
  return t.record(a.value().middleRows(begin, count), {a}, [a, begin, count](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleRows(begin, count) = g;
    t.accumulate(a, ga);
  });
}

// ---- normalization and attention ------------------------------------------

namespace {

Matrix softmax_rows_value(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  Matrix y = softmax_rows_value(a.value());
  Matrix saved = y;
  return t.record(std::move(y), {a}, [a, y = std::move(saved)](Tape& t, const Matrix& g) {
    Matrix gy = g.cwiseProduct(y);
    Eigen::VectorXd dots = gy.rowwise().sum();
    gy -= y.cwiseProduct(dots.replicate(1, y.cols()));
    t.accumulate(a, gy);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols()) {
    throw InputError("layer_norm: gain/bias must be 1 x width");
  }
  Tape& t = tape_of(x);
  const Index n = x.rows();
  const Index d = x.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), inv_std](Tape& t, const Matrix& g) {
                    if (t.needs_grad(gain)) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                    if (t.needs_grad(bias)) t.accumulate(bias, g.colwise().sum());
                    if (t.needs_grad(x)) {
                      Matrix gx = g;
                      gx.array().rowwise() *= gain.value().row(0).array();
                      const Index d = gx.cols();
                      for (Index i = 0; i < gx.rows(); ++i) {
                        const double m1 = gx.row(i).mean();
                        const double m2 = gx.row(i).dot(xhat.row(i)) / static_cast<double>(d);
                        gx.row(i) = (gx.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                      }
                      t.accumulate(x, gx);
                    }
                  });
}

Var l2_normalize_rows(Var a) {
  Tape& t = tape_of(a);
  Eigen::VectorXd norms = a.value().rowwise().norm();
  if ((norms.array() <= 0.0).any()) throw InputError("l2_normalize_rows: zero row");
  Matrix y = a.value();
  for (Index i = 0; i < y.rows(); ++i) y.row(i) /= norms(i);
  Matrix saved = y;
  return t.record(std::move(y), {a}, [a, y = std::move(saved), norms](Tape& t, const Matrix& g) {
    Matrix ga(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      ga.row(i) = (g.row(i) - y.row(i) * y.row(i).dot(g.row(i))) / norms(i);
    }
    t.accumulate(a, ga);
  });
}

Var attention(Var q, Var k, Var v, Index seq_len, Index heads, AttentionMask mask) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  if (seq_len <= 0 || q.rows() % seq_len != 0) throw InputError("attention: rows not a multiple of seq_len");
  if (heads <= 0 || q.cols() % heads != 0) throw InputError("attention: width not divisible by heads");
  Tape& t = tape_of(q);
  const Index batch = q.rows() / seq_len;
  const Index hd = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // probs holds one seq x seq block per (sample, head), stacked by rows.
  auto probs = std::make_shared<Matrix>(batch * heads * seq_len, seq_len);
  Matrix out(q.rows(), q.cols());
  Matrix scores(seq_len, seq_len);
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      const auto qb = q.value().block(b * seq_len, h * hd, seq_len, hd);
      const auto kb = k.value().block(b * seq_len, h * hd, seq_len, hd);
      const auto vb = v.value().block(b * seq_len, h * hd, seq_len, hd);
      scores.noalias() = qb.lazyProduct(kb.transpose());
      scores *= scale;
      if (mask == AttentionMask::kCausal) {
        for (Index i = 0; i < seq_len; ++i) {
          for (Index j = i + 1; j < seq_len; ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
        }
      }
      auto p = probs->middleRows((b * heads + h) * seq_len, seq_len);
      for (Index i = 0; i < seq_len; ++i) {
        const double m = scores.row(i).maxCoeff();
        p.row(i) = (scores.row(i).array() - m).exp();
        p.row(i) /= p.row(i).sum();
      }
      out.block(b * seq_len, h * hd, seq_len, hd).noalias() = p.lazyProduct(vb);
    }
  }
  return t.record(std::move(out), {q, k, v}, [q, k, v, seq_len, heads, hd, scale, batch, probs](Tape& t, const Matrix& g) {
    Matrix gq = Matrix::Zero(q.rows(), q.cols());
    Matrix gk = Matrix::Zero(k.rows(), k.cols());
    Matrix gv = Matrix::Zero(v.rows(), v.cols());
    Matrix dp(seq_len, seq_len);
    for (Index b = 0; b < batch; ++b) {
      for (Index h = 0; h < heads; ++h) {
        const auto qb = q.value().block(b * seq_len, h * hd, seq_len, hd);
        const auto kb = k.value().block(b * seq_len, h * hd, seq_len, hd);
        const auto vb = v.value().block(b * seq_len, h * hd, seq_len, hd);
        const auto gb = g.block(b * seq_len, h * hd, seq_len, hd);
        const auto p = probs->middleRows((b * heads + h) * seq_len, seq_len);
        gv.block(b * seq_len, h * hd, seq_len, hd).noalias() += p.transpose().lazyProduct(gb);
        dp.noalias() = gb.lazyProduct(vb.transpose());
        // Softmax backward: ds = p * (dp - rowsum(dp * p)).
        for (Index i = 0; i < seq_len; ++i) {
          const double dot = dp.row(i).dot(p.row(i));
          dp.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
        }
        dp *= scale;
        gq.block(b * seq_len, h * hd, seq_len, hd).noalias() += dp.lazyProduct(kb);
        gk.block(b * seq_len, h * hd, seq_len, hd).noalias() += dp.transpose().lazyProduct(qb);
      }
    }
    t.accumulate(q, gq);
    t.accumulate(k, gk);
    t.accumulate(v, gv);
  });
}

// ---- reductions and losses -------------------------------------------------

Var sum(Var a) {
  Tape& t = tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  Tape& t = tape_of(a);
  const double n = static_cast<double>(a.size());
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return t.record(std::move(out), {a}, [a, n](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

Var cross_entropy_sum(Var logits, std::span<const int> targets, double scale) {
  if (static_cast<Index>(targets.size()) != logits.rows()) throw InputError("cross_entropy: target count");
  Tape& t = tape_of(logits);
  Matrix p = softmax_rows_value(logits.value());
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw InputError("cross_entropy: target out of range");
    const auto row = logits.value().row(i);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(y);
  }
  Matrix out(1, 1);
  out(0, 0) = scale * total;
  std::vector<int> ys(targets.begin(), targets.end());
  return t.record(std::move(out), {logits}, [logits, p = std::move(p), ys = std::move(ys), scale](Tape& t, const Matrix& g) {
    Matrix gl = p;
    for (Index i = 0; i < gl.rows(); ++i) gl(i, ys[static_cast<std::size_t>(i)]) -= 1.0;
    t.accumulate(logits, gl * (scale * g(0, 0)));
  });
}

Var bce_with_logits_mean(Var logits, const Matrix& targets) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw InputError("bce_with_logits: target shape mismatch");
  }
  Tape& t = tape_of(logits);
  const double n = static_cast<double>(logits.size());
  const auto& x = logits.value();
  const double total =
      (x.array().max(0.0) - x.array() * targets.array() + (-x.array().abs()).exp().log1p()).sum();
  Matrix out(1, 1);
  out(0, 0) = total / n;
  return t.record(std::move(out), {logits}, [logits, targets, n](Tape& t, const Matrix& g) {
    Matrix s = logits.value().unaryExpr([](double v) {
      return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    t.accumulate(logits, (s - targets) * (g(0, 0) / n));
  });
}

}  // namespace splatmark::ad
