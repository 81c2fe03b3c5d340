#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ssam/numerics.hpp"

namespace ssam {

class Tape;

/// Handle to a matrix-valued node recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-accumulation tape over dense matrices.
///
/// Every primitive in `ssam::ad` records its value together with a closure that
/// propagates the upstream adjoint into its parents. Node storage is a deque so
/// references returned by Var::value() stay valid while the tape grows.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  /// Records a derived node. Non-finite values raise NumericError naming `op`.
  Var record(const char* op, Matrix value, std::span<const Var> parents, Backward backward);
  Var record(const char* op, Matrix value, std::initializer_list<Var> parents, Backward backward) {
    return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  /// Seeds d(root)/d(root) = 1 and accumulates adjoints into every node. Root must be 1x1.
  void backward(Var root);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  /// Adjoint of a node after backward(); zeros if it did not influence the root.
  Matrix grad(Var v) const;

  void accumulate(Var v, const Matrix& delta);
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
    const char* op = "";
  };

  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

inline double Var::scalar() const {
  const Matrix& m = value();
  if (m.rows() != 1 || m.cols() != 1) {
    throw DimensionError("scalar(): node is " + shape_string(m.rows(), m.cols()));
  }
  return m(0, 0);
}

/// Differentiable primitives. Forward values use the kernels in numerics.hpp.
namespace ad {

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Adds a 1 x cols row to every row of `m`.
Var add_row(Var m, Var row);
/// Divides row i of `m` by column(i, 0). `column` is rows x 1.
Var div_rows(Var m, Var column);
Var row_softmax(Var m);
Var cosine_similarity(Var u, Var v);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
/// Elementwise x log x with 0 log 0 := 0.
Var xlogx(Var a);
/// Subtracts each row's mean from that row.
Var row_center(Var m);
/// Sum of all entries (1x1).
Var sum(Var a);
/// Mean of all entries (1x1).
Var mean(Var a);
/// Sum of squares of all entries (1x1).
Var squared_norm(Var a);
/// Column sums (1 x cols).
Var col_sum(Var a);
/// Row sums (rows x 1).
Var row_sum(Var a);
/// Column means (1 x cols).
Var col_mean(Var a);
/// Stacks equally wide nodes top to bottom.
Var vstack(std::span<const Var> parts);
/// Identity in value, blocks the gradient.
Var stop_gradient(Var a);
/// 3x3, zero padded, stride 1 patch extraction of an (H*W) x C row-major map.
/// Output row y*W+x holds the 9*C neighbourhood values ordered (dy, dx, c).
Var im2col3x3(Var map, int height, int width);

}  // namespace ad

using ScalarObjective = std::function<Var(Var params)>;

struct GradientResult {
  double value = 0.0;
  Matrix gradient;
};

/// Value and exact reverse-accumulation gradient of `objective` at `params`.
GradientResult value_and_gradient(const ScalarObjective& objective, const Matrix& params);

/// Evaluates `objective` without recording a gradient.
double evaluate_objective(const ScalarObjective& objective, const Matrix& params);

/// Central-difference gradient estimate, (f(x + h e_i) - f(x - h e_i)) / 2h.
Matrix finite_difference_gradient(const ScalarObjective& objective, const Matrix& params,
                                  double h = 1e-5);
Matrix finite_difference_gradient(const std::function<double(const Matrix&)>& objective,
                                  const Matrix& params, double h = 1e-5);

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor); zero when both are identically zero.
/// The floor keeps round-off on identically vanishing gradients from reading as total error.
double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-8);

}  // namespace ssam
