#include <doctest.h>

#include <cmath>

#include "ssam/association.hpp"
#include "ssam/objectives.hpp"
#include "ssam/rng.hpp"
#include "support.hpp"

using namespace ssam;
using namespace ssam::testing;

namespace {

const double kHigh = std::exp(1.0) / (std::exp(1.0) + 1.0);

}  // namespace

TEST_CASE("association map hand values") {
  const Matrix eye = Matrix::Identity(2, 2);
  const AssociationMap a = association_map(eye, eye);
  CHECK(a.raw == eye);
  CHECK(std::abs(a.normalized(0, 0) - 0.7311) < 1e-4);
  CHECK(std::abs(a.normalized(0, 1) - 0.2689) < 1e-4);
  CHECK(std::abs(a.normalized(1, 1) - kHigh) < 1e-15);

  const AssociationMap single = association_map(Matrix::Ones(1, 3), Matrix::Ones(1, 3));
  CHECK(single.normalized(0, 0) == 1.0);

  Matrix center(1, 3);
  center << 1, 1, 1;
  const AssociationMap uniform = association_map(center, Matrix::Identity(3, 3));
  for (int j = 0; j < 3; ++j) CHECK(std::abs(uniform.normalized(0, j) - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("prototype hand values") {
  const Matrix eye = Matrix::Identity(2, 2);
  const AssociationMap a = association_map(eye, eye);
  const Prototypes p = estimate_prototypes(a, eye);
  CHECK(std::abs(p.centers(0, 0) - 0.7311) < 1e-4);
  CHECK(std::abs(p.centers(0, 1) - 0.2689) < 1e-4);

  Rng rng(4);
  const Matrix v = rng.normal_matrix(5, 3);
  AssociationMap uniform{Matrix::Zero(5, 4), Matrix::Constant(5, 4, 0.25)};
  const Prototypes u = estimate_prototypes(uniform, v);
  for (Eigen::Index j = 0; j < 4; ++j) CHECK((u.centers.row(j) - v.colwise().mean()).cwiseAbs().maxCoeff() < 1e-14);

  const Matrix one = rng.normal_matrix(1, 3);
  const Prototypes solo = estimate_prototypes(association_map(one, rng.normal_matrix(4, 3)), one);
  for (Eigen::Index j = 0; j < 4; ++j) CHECK((solo.centers.row(j) - one).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(estimate_prototypes(a, Matrix::Identity(3, 3)), DimensionError);
}

TEST_CASE("triple-loop oracle agreement") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int b = 1 + int(rng.below(4));
    const int m = 1 + int(rng.below(3));
    const int d = 1 + int(rng.below(3));
    const Matrix v = rng.normal_matrix(b, d);
    const Matrix t = rng.normal_matrix(m, d);
    const AssociationMap a = association_map(v, t);
    const Matrix raw = oracle::cosine(v, t);
    const Matrix soft = oracle::softmax_rows(raw);
    const Matrix protos = oracle::prototypes(soft, v);
    CHECK((a.raw - raw).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((a.normalized - soft).cwiseAbs().maxCoeff() <= 1e-12);
    const Prototypes p = estimate_prototypes(a, v);
    CHECK((p.centers - protos).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((reconstruct(a, p) - oracle::reconstruction(soft, protos)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("association invariants") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = 1 + int(rng.below(16));
    const int m = 2 + int(rng.below(7));
    const int d = 1 + int(rng.below(16));
    const Matrix v = rng.normal_matrix(b, d, std::exp(2.0 * rng.normal()));
    const Matrix t = rng.normal_matrix(m, d);
    const AssociationMap a = association_map(v, t);
    CHECK((a.normalized.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK(a.raw.cwiseAbs().maxCoeff() <= 1.0);

    const Matrix w = prototype_weights(a);
    CHECK(w.minCoeff() >= 0.0);
    CHECK((w.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    const Prototypes p = estimate_prototypes(a, v);
    CHECK((w.transpose() * v - p.centers).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + v.cwiseAbs().maxCoeff()));

    const double c = std::exp(3.0 * rng.normal());
    const AssociationMap scaled = association_map(Matrix(c * v), t);
    for (Eigen::Index i = 0; i < b; ++i) {
      Eigen::Index j0, j1;
      a.normalized.row(i).maxCoeff(&j0);
      scaled.normalized.row(i).maxCoeff(&j1);
      CHECK(j0 == j1);
    }
  }
}

TEST_CASE("association gradients") {
  Rng rng(12);
  const Matrix t = rng.normal_matrix(4, 5);
  const Matrix probe = rng.normal_matrix(4, 5);
  const ScalarObjective f = [&](Var v) {
    const ad::AssociationVars a = ad::association_map(v, v.tape().constant(t));
    const Var p = ad::estimate_prototypes(a.normalized, v);
    return ad::sum(ad::mul(p, v.tape().constant(probe)));
  };
  const Matrix v0 = rng.normal_matrix(6, 5);
  CHECK(max_relative_error(value_and_gradient(f, v0).gradient, finite_difference_gradient(f, v0)) < 1e-7);
}
