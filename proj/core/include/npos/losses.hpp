#pragma once

#include "npos/model.hpp"

namespace npos {

// Level-set binary loss over a phi head:
//   mean_v softplus(phi(v)) + mean_x softplus(-phi(x)).
// Outliers are treated as constants; gradients are produced for phi's
// parameters and for the ID inputs (encoder chain rule).
struct ROpenOutput {
  double value = 0.0;
  MlpGrads phi_grads;
  Matrix d_id;  // dL/d(id row), same shape as the ID batch
};

ROpenOutput r_open(const MlpParams& phi, const Matrix& outliers,
                   const Matrix& id_embeddings);

// Prototype cross-entropy over cosine logits with temperature tau. With
// logit_norm the logits are scaled by 1/(tau * ||f||), otherwise by 1/tau.
// Prototypes receive no gradient; only dL/dz is produced.
struct RClosedOutput {
  double value = 0.0;
  Matrix d_z;  // dL/d(z row)
};

RClosedOutput r_closed(const Matrix& z_batch,
                       const std::vector<std::int32_t>& labels,
                       const Prototypes& prototypes, double tau,
                       bool logit_norm);

// Eq-style joint objective: r_closed + alpha * r_open.
double total_objective(double r_closed_val, double r_open_val, double alpha);

// Numerically stable log(1 + exp(x)).
double softplus(double x);

}  // namespace npos
