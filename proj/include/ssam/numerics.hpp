#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "ssam/errors.hpp"

namespace ssam {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;

/// Rows with a squared norm below this are rejected by cosine similarity.
inline constexpr double kZeroNormEpsilon = 1e-12;

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* primitive) {
  if (!m.allFinite()) {
    throw NumericError(primitive, std::string("non-finite value produced by ") + primitive);
  }
}

template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a.rows(), a.cols()) + " times " +
                         shape_string(b.rows(), b.cols()));
  }
  return a * b;
}

/// Softmax along each row, stabilized by subtracting the row maximum.
template <typename Derived>
MatrixX<typename Derived::Scalar> row_softmax(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0) throw DimensionError("row_softmax: empty matrix");
  MatrixX<Scalar> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Scalar peak = m.row(i).maxCoeff();
    out.row(i) = (m.row(i).array() - peak).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// Row norms of `m`, throwing on rows whose norm is not above the zero-norm guard.
template <typename Derived>
VectorX<typename Derived::Scalar> checked_row_norms(const Eigen::MatrixBase<Derived>& m,
                                                    const char* who) {
  VectorX<typename Derived::Scalar> norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > kZeroNormEpsilon)) {
      throw DegenerateInputError(std::string(who) + ": row " + std::to_string(i) +
                                 " has zero norm");
    }
  }
  return norms;
}

/// out(i, j) = <u_i, v_j> / (|u_i| |v_j|).
template <typename DerivedU, typename DerivedV>
MatrixX<typename DerivedU::Scalar> cosine_similarity_matrix(const Eigen::MatrixBase<DerivedU>& u,
                                                            const Eigen::MatrixBase<DerivedV>& v) {
  if (u.cols() != v.cols()) {
    throw DimensionError("cosine_similarity_matrix: " + shape_string(u.rows(), u.cols()) +
                         " vs " + shape_string(v.rows(), v.cols()));
  }
  using Scalar = typename DerivedU::Scalar;
  MatrixX<Scalar> uh = u;
  MatrixX<Scalar> vh = v;
  uh.array().colwise() /= checked_row_norms(u, "cosine_similarity_matrix").array();
  vh.array().colwise() /= checked_row_norms(v, "cosine_similarity_matrix").array();
  MatrixX<Scalar> out = uh * vh.transpose();
  // Rounding can push |cos| a hair past 1.
  return out.cwiseMax(-1).cwiseMin(1);
}

}  // namespace ssam
