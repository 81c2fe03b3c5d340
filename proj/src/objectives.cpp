#include "ssam/objectives.hpp"

namespace ssam {
namespace ad {
namespace {

Var diagonal_mean_log_softmax(Var logits) {
  const Eigen::Index m = logits.rows();
  const Var log_probs = log(row_softmax(logits));
  const Var picked = mul(log_probs, logits.tape().constant(Matrix::Identity(m, m)));
  return scale(sum(picked), -1.0 / static_cast<double>(m));
}

}  // namespace

Var reconstruct(Var normalized, Var prototypes) { return matmul(normalized, prototypes); }

Var loss_pir(Var reconstruction, Var features) {
  if (reconstruction.rows() != features.rows() || reconstruction.cols() != features.cols()) {
    throw DimensionError("loss_pir: reconstruction and features differ in shape");
  }
  return scale(squared_norm(sub(reconstruction, features)),
               1.0 / static_cast<double>(features.rows()));
}

Var loss_ca(Var prototypes, Var categories, std::optional<double> temperature) {
  if (prototypes.rows() < 2 || prototypes.rows() != categories.rows()) {
    throw DimensionError("loss_ca: need matching prototype and category counts >= 2");
  }
  if (temperature && !(*temperature > 0.0)) throw ConfigError("loss_ca: temperature must be > 0");
  Var logits = cosine_similarity(prototypes, categories);
  if (temperature) logits = scale(logits, 1.0 / *temperature);
  const Var p2c = diagonal_mean_log_softmax(logits);
  const Var c2p = diagonal_mean_log_softmax(transpose(logits));
  return scale(add(p2c, c2p), 0.5);
}

Var loss_entropy(Var normalized) {
  return scale(sum(xlogx(normalized)), -1.0 / static_cast<double>(normalized.rows()));
}

LossVars total_objective(Var features, Var categories, const ObjectiveOptions& options) {
  if (options.alpha < 0.0 || options.beta < 0.0) {
    throw ConfigError("total_objective: alpha and beta must be non-negative");
  }
  const AssociationVars assoc = association_map(features, categories);
  const Var protos = estimate_prototypes(assoc.normalized, features);
  const Var recon = reconstruct(assoc.normalized, protos);
  const Var target = options.stop_grad_target ? stop_gradient(features) : features;

  LossVars out;
  out.ent = loss_entropy(assoc.normalized);
  out.pir = loss_pir(recon, target);
  out.ca = loss_ca(protos, categories, options.ca_temperature);
  out.total = add(add(out.ent, scale(out.pir, options.alpha)), scale(out.ca, options.beta));
  return out;
}

}  // namespace ad

Matrix reconstruct(const AssociationMap& assoc, const Prototypes& protos) {
  return matmul(assoc.normalized, protos.centers);
}

double loss_pir(const Matrix& reconstruction, const Matrix& features) {
  Tape t;
  return ad::loss_pir(t.constant(reconstruction), t.constant(features)).scalar();
}

double loss_ca(const Matrix& prototypes, const Matrix& categories,
               std::optional<double> temperature) {
  Tape t;
  return ad::loss_ca(t.constant(prototypes), t.constant(categories), temperature).scalar();
}

double loss_entropy(const AssociationMap& assoc) {
  Tape t;
  return ad::loss_entropy(t.constant(assoc.normalized)).scalar();
}

LossBreakdown breakdown_of(const ad::LossVars& vars, const ObjectiveOptions& options) {
  return LossBreakdown{vars.ent.scalar(), vars.pir.scalar(), vars.ca.scalar(),
                       vars.total.scalar(), options.alpha, options.beta};
}

LossBreakdown total_objective(const Matrix& features, const Matrix& categories,
                              const ObjectiveOptions& options) {
  Tape t;
  return breakdown_of(ad::total_objective(t.constant(features), t.constant(categories), options),
                      options);
}

LossBreakdown total_objective(const Matrix& features, const Matrix& categories, double alpha,
                              double beta) {
  ObjectiveOptions options;
  options.alpha = alpha;
  options.beta = beta;
  return total_objective(features, categories, options);
}

}  // namespace ssam
