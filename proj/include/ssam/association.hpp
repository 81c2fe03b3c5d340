#pragma once

#include "ssam/autodiff.hpp"
#include "ssam/numerics.hpp"

namespace ssam {

/// Image-to-category association: cosine scores and their row softmax.
struct AssociationMap {
  Matrix raw;         ///< |B| x M cosine similarities, in [-1, 1]
  Matrix normalized;  ///< |B| x M, rows sum to 1
};

/// Association-weighted class centroids of a batch.
struct Prototypes {
  Matrix centers;  ///< M x D
  Vector mass;     ///< column sums of the normalized association, all > 0
};

AssociationMap association_map(const Matrix& features, const Matrix& categories);
Prototypes estimate_prototypes(const AssociationMap& assoc, const Matrix& features);

/// Convex weights behind each prototype: column j of the normalized map divided by mass_j.
Matrix prototype_weights(const AssociationMap& assoc);

namespace ad {

struct AssociationVars {
  Var raw;
  Var normalized;
};

AssociationVars association_map(Var features, Var categories);
/// M x D prototypes from a normalized |B| x M map and |B| x D features.
Var estimate_prototypes(Var normalized, Var features);

}  // namespace ad
}  // namespace ssam
