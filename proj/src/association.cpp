#include "ssam/association.hpp"

namespace ssam {

AssociationMap association_map(const Matrix& features, const Matrix& categories) {
  AssociationMap out;
  out.raw = cosine_similarity_matrix(features, categories);
  out.normalized = row_softmax(out.raw);
  return out;
}

Prototypes estimate_prototypes(const AssociationMap& assoc, const Matrix& features) {
  if (assoc.normalized.rows() != features.rows()) {
    throw DimensionError("estimate_prototypes: association has " +
                         std::to_string(assoc.normalized.rows()) + " rows, features have " +
                         std::to_string(features.rows()));
  }
  Prototypes p;
  p.mass = assoc.normalized.colwise().sum().transpose();
  p.centers = assoc.normalized.transpose() * features;
  p.centers.array().colwise() /= p.mass.array();
  require_finite(p.centers, "estimate_prototypes");
  return p;
}

Matrix prototype_weights(const AssociationMap& assoc) {
  Matrix w = assoc.normalized;
  w.array().rowwise() /= assoc.normalized.colwise().sum().array();
  return w;
}

namespace ad {

AssociationVars association_map(Var features, Var categories) {
  const Var raw = cosine_similarity(features, categories);
  return {raw, row_softmax(raw)};
}

Var estimate_prototypes(Var normalized, Var features) {
  if (normalized.rows() != features.rows()) {
    throw DimensionError("estimate_prototypes: association and features disagree on batch size");
  }
  const Var weighted = matmul(transpose(normalized), features);
  return div_rows(weighted, transpose(col_sum(normalized)));
}

}  // namespace ad
}  // namespace ssam
