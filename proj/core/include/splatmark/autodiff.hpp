#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values live in the
// tape's nodes; Var is a lightweight handle (tape pointer + node index).
// Calling Tape::backward(loss) walks the nodes in reverse, so gradients are
// available for every node that depends on a trainable input. Parameters
// keep their values outside the tape and receive gradients in
// Parameter::grad.
//
// Batches are laid out as rows. A sequence batch of B samples with S
// positions and width D is a (B*S) x D matrix; an image is (H*W) x 3.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace splatmark::ad {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient after Tape::backward. Empty when the node did not need one.
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  double scalar() const { return value()(0, 0); }
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf that collects a gradient readable via Var::grad().
  Var variable(Matrix value);
  /// Trainable parameter: the tape references p.value and adds into p.grad.
  Var parameter(Parameter& p);
  /// Parameter used as a constant; no gradient is produced for it.
  Var frozen(const Parameter& p);
  /// Constant that references an external matrix without copying it.
  Var reference(const Matrix& value);

  /// Records an operation. The closure is dropped when no input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to all leaves.
  void backward(Var root);

  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  const Matrix& value(std::size_t id) const;
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }

  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* external = nullptr;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  Var push(Node node);
  std::vector<Node> nodes_;
};

// ---- linear algebra ------------------------------------------------------

Var matmul(Var a, Var b);
/// x * w + bias, bias broadcast over rows. bias may be an invalid Var.
Var linear(Var x, Var w, Var bias = Var());
/// s * x for a fixed sparse operator s.
Var sparse_apply(std::shared_ptr<const SparseMatrix> s, Var x);

// ---- elementwise -----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var square(Var a);
Var abs(Var a);
Var gelu(Var a);
Var cos(Var a);
Var sigmoid(Var a);
/// Hard clamp; gradient passes only strictly inside (lo, hi).
Var clamp(Var a, double lo, double hi);
/// log(p) - log(1 - p).
Var logit(Var p);
/// Identity on [margin, 1 - margin], exponential saturation outside, range (0, 1).
Var soft_clamp01(Var a, double margin);
double soft_clamp01(double x, double margin);
double soft_clamp01_derivative(double x, double margin);
/// round(x) + (x - round(x))^3: rounding with a nonzero gradient.
Var smooth_round(Var a);

// ---- broadcasting and layout ----------------------------------------------

/// a + r where row i of a receives row (i mod r.rows()) of r.
Var add_broadcast(Var a, Var r);
/// a * r elementwise with the same row tiling as add_broadcast.
Var mul_broadcast(Var a, Var r);
/// Row-major reinterpretation with the same element order.
Var reshape(Var a, Index rows, Index cols);
/// out.flat[i] = a.flat[source[i]]; the gradient scatters back.
Var gather(Var a, Index rows, Index cols, std::shared_ptr<const std::vector<Index>> source);
Var concat_rows(std::span<const Var> parts);
/// Rows [begin, begin + count).
Var slice_rows(Var a, Index begin, Index count);

// ---- normalization and attention ------------------------------------------

Var softmax_rows(Var a);
/// Per-row layer normalization with affine gain/bias (1 x cols each).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var l2_normalize_rows(Var a);

enum class AttentionMask { kNone, kCausal };

/// Scaled dot-product attention for a batch of sequences.
/// q, k, v are (batch*seq) x (heads*head_dim); the result has the same shape.
/// Scores are scaled by 1/sqrt(head_dim) and softmax runs over the key axis.
Var attention(Var q, Var k, Var v, Index seq_len, Index heads,
              AttentionMask mask = AttentionMask::kNone);

// ---- reductions and losses -------------------------------------------------

Var sum(Var a);
Var mean(Var a);
/// scale * sum over rows of -log softmax(logits_row)[target_row].
Var cross_entropy_sum(Var logits, std::span<const int> targets, double scale);
/// Mean binary cross-entropy of logits against 0/1 targets (same shape).
Var bce_with_logits_mean(Var logits, const Matrix& targets);

}  // namespace splatmark::ad
