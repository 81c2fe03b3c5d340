#pragma once

#include <optional>

#include "ssam/association.hpp"
#include "ssam/autodiff.hpp"

namespace ssam {

struct LossBreakdown {
  double l_ent = 0.0;
  double l_pir = 0.0;
  double l_ca = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

struct ObjectiveOptions {
  double alpha = 1.0;
  double beta = 1.0;
  /// Divides the contrastive logits when set. Off by default: logits are raw cosines.
  std::optional<double> ca_temperature;
  /// Treat the features as a constant target inside the reconstruction loss.
  bool stop_grad_target = false;
};

/// V̂_i = sum_k Ã(i, k) P_k.
Matrix reconstruct(const AssociationMap& assoc, const Prototypes& protos);
/// Batch mean of |V̂_i - V_i|^2.
double loss_pir(const Matrix& reconstruction, const Matrix& features);
/// Symmetric prototype/category contrastive loss, (L_p2c + L_c2p) / 2.
double loss_ca(const Matrix& prototypes, const Matrix& categories,
               std::optional<double> temperature = std::nullopt);
/// Mean row entropy of the normalized association.
double loss_entropy(const AssociationMap& assoc);

LossBreakdown total_objective(const Matrix& features, const Matrix& categories, double alpha,
                              double beta);
LossBreakdown total_objective(const Matrix& features, const Matrix& categories,
                              const ObjectiveOptions& options);

namespace ad {

struct LossVars {
  Var ent;
  Var pir;
  Var ca;
  Var total;
};

Var reconstruct(Var normalized, Var prototypes);
Var loss_pir(Var reconstruction, Var features);
Var loss_ca(Var prototypes, Var categories, std::optional<double> temperature = std::nullopt);
Var loss_entropy(Var normalized);
/// The full composition: association, prototypes, reconstruction and the weighted sum.
LossVars total_objective(Var features, Var categories, const ObjectiveOptions& options);

}  // namespace ad

LossBreakdown breakdown_of(const ad::LossVars& vars, const ObjectiveOptions& options);

}  // namespace ssam
