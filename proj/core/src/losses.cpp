#include "npos/losses.hpp"

#include <cmath>

namespace npos {

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

ROpenOutput r_open(const MlpParams& phi, const Matrix& outliers,
                   const Matrix& id_embeddings) {
  if (outliers.rows() == 0 || id_embeddings.rows() == 0) {
    throw Error(ErrorCode::EmptySet, "r_open needs both sets nonempty");
  }
  if (outliers.cols() != phi.input_dim() ||
      id_embeddings.cols() != phi.input_dim()) {
    throw Error(ErrorCode::DimMismatch, "phi input dimension mismatch");
  }

  ROpenOutput out;
  out.phi_grads = MlpGrads::zeros_like(phi);

  MlpCache cache_v, cache_x;
  Matrix phi_v = mlp_forward(phi, outliers, &cache_v);
  Matrix phi_x = mlp_forward(phi, id_embeddings, &cache_x);

  double n_v = static_cast<double>(outliers.rows());
  double n_x = static_cast<double>(id_embeddings.rows());

  // -log(1 / (1 + e^phi(v)))      = softplus(phi(v))
  // -log(e^phi(x) / (1 + e^phi(x))) = softplus(-phi(x))
  double value = 0.0;
  Matrix d_phi_v(phi_v.rows(), 1);
  for (Eigen::Index i = 0; i < phi_v.rows(); ++i) {
    value += softplus(phi_v(i, 0)) / n_v;
    d_phi_v(i, 0) = sigmoid(phi_v(i, 0)) / n_v;
  }
  Matrix d_phi_x(phi_x.rows(), 1);
  for (Eigen::Index i = 0; i < phi_x.rows(); ++i) {
    value += softplus(-phi_x(i, 0)) / n_x;
    d_phi_x(i, 0) = -sigmoid(-phi_x(i, 0)) / n_x;
  }
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::NonFiniteLoss, "r_open is not finite");
  }

  mlp_backward(phi, cache_v, d_phi_v, out.phi_grads);
  out.d_id = mlp_backward(phi, cache_x, d_phi_x, out.phi_grads);
  out.value = value;
  return out;
}

RClosedOutput r_closed(const Matrix& z_batch,
                       const std::vector<std::int32_t>& labels,
                       const Prototypes& prototypes, double tau,
                       bool logit_norm) {
  if (z_batch.rows() == 0) {
    throw Error(ErrorCode::EmptySet, "r_closed needs a nonempty batch");
  }
  if (labels.size() != static_cast<std::size_t>(z_batch.rows())) {
    throw Error(ErrorCode::DimMismatch, "label count mismatch");
  }
  if (tau <= 0.0) throw Error(ErrorCode::InvalidSpec, "tau must be > 0");
  if (z_batch.cols() != prototypes.dim()) {
    throw Error(ErrorCode::DimMismatch, "embedding/prototype dim mismatch");
  }

  Eigen::Index num_classes = prototypes.num_classes();
  Matrix mu_hat(num_classes, prototypes.dim());
  for (Eigen::Index c = 0; c < num_classes; ++c) {
    double n = prototypes.mu.row(c).norm();
    if (n == 0.0) throw Error(ErrorCode::ZeroVector, "zero prototype");
    mu_hat.row(c) = prototypes.mu.row(c) / n;
  }

  RClosedOutput out;
  out.d_z = Matrix::Zero(z_batch.rows(), z_batch.cols());
  double n_batch = static_cast<double>(z_batch.rows());

  for (Eigen::Index i = 0; i < z_batch.rows(); ++i) {
    std::int32_t y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_classes) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(y));
    }
    Vector z = z_batch.row(i).transpose();
    double zn = z.norm();
    if (zn == 0.0) throw Error(ErrorCode::ZeroVector, "zero embedding");
    Vector u = z / zn;
    Vector f = mu_hat * u;

    double scale;
    double fn = f.norm();
    if (logit_norm) {
      if (fn == 0.0) {
        throw Error(ErrorCode::ZeroLogitNorm, "all-zero logit vector");
      }
      scale = 1.0 / (tau * fn);
    } else {
      scale = 1.0 / tau;
    }
    Vector g = scale * f;

    double gmax = g.maxCoeff();
    double lse = 0.0;
    for (Eigen::Index c = 0; c < num_classes; ++c) {
      lse += std::exp(g(c) - gmax);
    }
    lse = gmax + std::log(lse);
    out.value += (lse - g(y)) / n_batch;

    // dL/dg = softmax(g) - e_y
    Vector q(num_classes);
    for (Eigen::Index c = 0; c < num_classes; ++c) {
      q(c) = std::exp(g(c) - lse);
    }
    q(y) -= 1.0;

    // Through the logit scaling: with logit_norm, g = f / (tau ||f||) and
    // dL/df = scale * (q - ((q . f) / ||f||^2) f); otherwise dL/df = q/tau.
    Vector a;
    if (logit_norm) {
      a = scale * (q - (q.dot(f) / (fn * fn)) * f);
    } else {
      a = scale * q;
    }

    // f_j = mu_hat_j . (z/||z||): df_j/dz = (mu_hat_j - f_j u) / ||z||.
    Vector dz = (mu_hat.transpose() * a - a.dot(f) * u) / zn;
    out.d_z.row(i) = dz.transpose() / n_batch;
  }

  if (!std::isfinite(out.value)) {
    throw Error(ErrorCode::NonFiniteLoss, "r_closed is not finite");
  }
  return out;
}

double total_objective(double r_closed_val, double r_open_val, double alpha) {
  if (alpha < 0.0) throw Error(ErrorCode::InvalidSpec, "alpha must be >= 0");
  return r_closed_val + alpha * r_open_val;
}

}  // namespace npos
