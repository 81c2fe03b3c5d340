#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ssam/association.hpp"
#include "ssam/objectives.hpp"
#include "ssam/rng.hpp"
#include "support.hpp"

using namespace ssam;
using namespace ssam::testing;

namespace {

Matrix embed_categories_like(Rng& rng) {
  Matrix t = rng.normal_matrix(4, 8);
  t.array().colwise() /= t.rowwise().norm().array();
  return t;
}

}  // namespace

TEST_CASE("reconstruction") {
  Rng rng(1);
  const Matrix protos = rng.normal_matrix(3, 4);
  const Prototypes p{protos, Vector::Ones(3)};

  AssociationMap hard{Matrix::Zero(2, 3), row_softmax(Matrix((Matrix(2, 3) << 60, 0, 0, 0, 0, 60).finished()))};
  const Matrix r = reconstruct(hard, p);
  CHECK((r.row(0) - protos.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.row(1) - protos.row(2)).cwiseAbs().maxCoeff() < 1e-12);

  AssociationMap uniform{Matrix::Zero(1, 3), Matrix::Constant(1, 3, 1.0 / 3.0)};
  CHECK((reconstruct(uniform, p) - protos.colwise().mean()).cwiseAbs().maxCoeff() < 1e-15);

  const RowVector star = rng.normal_matrix(1, 4);
  const Prototypes same{star.replicate(3, 1), Vector::Ones(3)};
  AssociationMap any{Matrix::Zero(5, 3), row_softmax(rng.normal_matrix(5, 3))};
  const Matrix rs = reconstruct(any, same);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK((rs.row(i) - star).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("reconstruction loss") {
  Rng rng(2);
  const Matrix v = rng.normal_matrix(4, 3);
  CHECK(loss_pir(v, v) == 0.0);
  CHECK(loss_pir((Matrix(1, 2) << 3, 4).finished(), Matrix::Zero(1, 2)) == 25.0);
  Matrix r(2, 2), t = Matrix::Zero(2, 2);
  r << 1, 1, 2, 0;  // squared distances 2 and 4
  CHECK(loss_pir(r, t) == 3.0);
  CHECK_THROWS_AS(loss_pir(r, Matrix::Zero(3, 2)), DimensionError);
}

TEST_CASE("contrastive alignment") {
  const Matrix eye = Matrix::Identity(2, 2);
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(std::abs(loss_ca(eye, eye) - 0.31326) < 1e-5);
  CHECK(std::abs(loss_ca(eye, eye) - expected) < 1e-14);

  const Matrix same = Matrix::Ones(4, 3);
  CHECK(std::abs(loss_ca(same, same) - std::log(4.0)) < 1e-14);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix p = rng.normal_matrix(4, 5);
    const Matrix t = rng.normal_matrix(4, 5);
    CHECK(std::abs(loss_ca(p, t) - loss_ca(t, p)) < 1e-14);
    CHECK(std::abs(loss_ca(p, t) - oracle::ca(p, t)) < 1e-12);
    CHECK(loss_ca(p, t) >= 0.0);
  }
  CHECK(std::abs(loss_ca(eye, eye, 0.5) - -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0))) < 1e-14);
}

TEST_CASE("entropy") {
  AssociationMap onehot{Matrix::Zero(2, 3), Matrix::Zero(2, 3)};
  onehot.normalized(0, 1) = 1.0;
  onehot.normalized(1, 2) = 1.0;
  CHECK(loss_entropy(onehot) == 0.0);
  AssociationMap uniform{Matrix::Zero(3, 4), Matrix::Constant(3, 4, 0.25)};
  CHECK(std::abs(loss_entropy(uniform) - std::log(4.0)) < 1e-14);
  CHECK(std::abs(loss_entropy(uniform) - 1.38629) < 1e-5);
  AssociationMap skew{Matrix::Zero(1, 2), (Matrix(1, 2) << 0.75, 0.25).finished()};
  CHECK(std::abs(loss_entropy(skew) - 0.56234) < 1e-5);
}

TEST_CASE("loss ranges") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + int(rng.below(7));
    const Matrix v = rng.normal_matrix(1 + int(rng.below(16)), 6, std::exp(2.0 * rng.normal()));
    const Matrix t = rng.normal_matrix(m, 6);
    const LossBreakdown l = total_objective(v, t, 1.0, 1.0);
    CHECK(l.l_ent >= 0.0);
    CHECK(l.l_ent <= std::log(double(m)) + 1e-12);
    CHECK(l.l_pir >= 0.0);
    CHECK(l.l_ca >= 0.0);
  }
}

TEST_CASE("total objective") {
  const Matrix eye = Matrix::Identity(2, 2);
  const LossBreakdown zero = total_objective(eye, eye, 0.0, 0.0);
  CHECK(zero.total == zero.l_ent);

  // Hand composition for V = T = I2.
  const double hi = std::exp(1.0) / (std::exp(1.0) + 1.0);
  const double lo = 1.0 - hi;
  const double ent = -(hi * std::log(hi) + lo * std::log(lo));
  // Both prototypes are (hi, lo) and (lo, hi); reconstruction of e1 is hi*(hi,lo) + lo*(lo,hi).
  const double r0 = hi * hi + lo * lo;
  const double r1 = 2.0 * hi * lo;
  const double pir = (r0 - 1.0) * (r0 - 1.0) + r1 * r1;
  const double cos_diag = hi / std::sqrt(hi * hi + lo * lo);
  const double cos_off = lo / std::sqrt(hi * hi + lo * lo);
  const double ca = -std::log(std::exp(cos_diag) / (std::exp(cos_diag) + std::exp(cos_off)));
  const LossBreakdown l = total_objective(eye, eye, 1.0, 1.0);
  CHECK(std::abs(l.l_ent - ent) < 1e-14);
  CHECK(std::abs(l.l_pir - pir) < 1e-14);
  CHECK(std::abs(l.l_ca - ca) < 1e-14);
  CHECK(std::abs(l.total - (ent + pir + ca)) < 1e-14);

  Rng rng(6);
  const Matrix v = rng.normal_matrix(8, 5);
  const Matrix t = rng.normal_matrix(3, 5);
  const LossBreakdown a1 = total_objective(v, t, 1.0, 0.7);
  const LossBreakdown a2 = total_objective(v, t, 2.0, 0.7);
  CHECK(std::abs((a2.total - a1.total) - a1.l_pir) < 1e-12);
}

TEST_CASE("saturated self-consistency") {
  Rng rng(7);
  const Matrix t = embed_categories_like(rng);
  const AssociationMap soft = association_map(t, t);
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    Eigen::Index j;
    soft.normalized.row(i).maxCoeff(&j);
    CHECK(j == i);
  }
  // In the saturated limit the association is the identity assignment.
  const AssociationMap hard{soft.raw, Matrix::Identity(t.rows(), t.rows())};
  const Prototypes p = estimate_prototypes(hard, t);
  CHECK((p.centers - t).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loss_pir(reconstruct(hard, p), t) == 0.0);
}

TEST_CASE("nearest prototype minimises reconstruction over one-hot rows") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 2 + int(rng.below(7));
    const Matrix protos = rng.normal_matrix(m, 5);
    const Matrix v = rng.normal_matrix(1, 5);
    const Prototypes p{protos, Vector::Ones(m)};
    double best = 1e300;
    int best_j = -1;
    for (int j = 0; j < m; ++j) {
      AssociationMap onehot{Matrix::Zero(1, m), Matrix::Zero(1, m)};
      onehot.normalized(0, j) = 1.0;
      const double l = loss_pir(reconstruct(onehot, p), v);
      if (l < best) {
        best = l;
        best_j = j;
      }
    }
    Eigen::Index nearest;
    (protos.rowwise() - v.row(0)).rowwise().squaredNorm().minCoeff(&nearest);
    CHECK(best_j == nearest);
  }
}

TEST_CASE("objective gradients for every component") {
  Rng rng(10);
  const Matrix t = rng.normal_matrix(4, 16);
  for (int inst = 0; inst < 20; ++inst) {
    const Matrix v0 = rng.normal_matrix(8, 16);
    for (int component = 0; component < 4; ++component) {
      for (bool stop : {false, true}) {
        ObjectiveOptions o;
        o.stop_grad_target = stop;
        const ScalarObjective f = [&](Var v) {
          const ad::LossVars l = ad::total_objective(v, v.tape().constant(t), o);
          const Var parts[] = {l.ent, l.pir, l.ca, l.total};
          return parts[component];
        };
        const ScalarObjective value_only = [&](Var v) {
          ObjectiveOptions plain = o;
          plain.stop_grad_target = false;
          const ad::LossVars l = ad::total_objective(v, v.tape().constant(t), plain);
          const Var parts[] = {l.ent, l.pir, l.ca, l.total};
          return parts[component];
        };
        if (stop && (component == 0 || component == 2)) continue;
        if (!stop) {
          CHECK(max_relative_error(value_and_gradient(f, v0).gradient, finite_difference_gradient(value_only, v0)) < 1e-4);
        } else {
          CHECK(value_and_gradient(f, v0).value == doctest::Approx(value_and_gradient(value_only, v0).value).epsilon(1e-14));
        }
      }
    }
  }
}

TEST_CASE("plain and tape objectives agree") {
  Rng rng(11);
  const Matrix v = rng.normal_matrix(6, 5);
  const Matrix t = rng.normal_matrix(3, 5);
  const AssociationMap a = association_map(v, t);
  const Prototypes p = estimate_prototypes(a, v);
  const LossBreakdown l = total_objective(v, t, 0.5, 2.0);
  CHECK(std::abs(l.l_ent - oracle::entropy(a.normalized)) < 1e-12);
  CHECK(std::abs(l.l_pir - oracle::pir(reconstruct(a, p), v)) < 1e-12);
  CHECK(std::abs(l.l_ca - oracle::ca(p.centers, t)) < 1e-12);
  CHECK(l.alpha == 0.5);
  CHECK(l.beta == 2.0);
}
