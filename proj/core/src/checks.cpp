#include "npos/checks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace npos {

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

// Smallest |pre-activation| over all hidden units for the given inputs.
double min_kink_distance(const MlpParams& params, const Matrix& x) {
  MlpCache cache;
  mlp_forward(params, x, &cache);
  double min_abs = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < params.layers.size(); ++l) {
    min_abs = std::min(min_abs, cache.pre[l].array().abs().minCoeff());
  }
  return min_abs;
}

Vector flatten_matrix(const Matrix& m) {
  Vector flat(m.size());
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat(at++) = m(i, j);
  }
  return flat;
}

Matrix unflatten_matrix(const Vector& flat, Eigen::Index rows,
                        Eigen::Index cols) {
  Matrix m(rows, cols);
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = flat(at++);
  }
  return m;
}

}  // namespace

double check_r_open_grads(std::uint64_t seed, double epsilon) {
  constexpr Eigen::Index kDim = 6;
  for (int attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, 0x0e, static_cast<std::uint64_t>(attempt)));
    MlpParams phi = mlp_init({kDim, 16, 1}, rng);
    Matrix outliers = random_matrix(4, kDim, rng);
    Matrix id = random_matrix(5, kDim, rng);
    if (min_kink_distance(phi, outliers) < 10 * epsilon ||
        min_kink_distance(phi, id) < 10 * epsilon) {
      continue;
    }

    ROpenOutput out = r_open(phi, outliers, id);

    Vector phi_flat = mlp_flatten(phi);
    auto loss_of_phi = [&](const Vector& flat) {
      MlpParams p = phi;
      mlp_unflatten(flat, p);
      return r_open(p, outliers, id).value;
    };
    MlpParams grads_as_params{out.phi_grads.layers};
    double err_phi =
        grad_check(loss_of_phi, phi_flat, mlp_flatten(grads_as_params), epsilon);

    auto loss_of_id = [&](const Vector& flat) {
      return r_open(phi, outliers, unflatten_matrix(flat, id.rows(), id.cols()))
          .value;
    };
    double err_id = grad_check(loss_of_id, flatten_matrix(id),
                               flatten_matrix(out.d_id), epsilon);
    return std::max(err_phi, err_id);
  }
}

double check_r_closed_grads(std::uint64_t seed, double epsilon,
                            bool logit_norm) {
  constexpr Eigen::Index kDim = 6;
  constexpr Eigen::Index kClasses = 3;
  Rng rng(derive_seed(seed, 0x0c));
  Prototypes protos = prototypes_init(kClasses, kDim, 0.95, rng);
  Matrix z = random_matrix(5, kDim, rng);
  std::vector<std::int32_t> labels;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    labels.push_back(static_cast<std::int32_t>(rng.below(kClasses)));
  }
  double tau = 0.1;

  RClosedOutput out = r_closed(z, labels, protos, tau, logit_norm);
  auto loss_of_z = [&](const Vector& flat) {
    return r_closed(unflatten_matrix(flat, z.rows(), z.cols()), labels, protos,
                    tau, logit_norm)
        .value;
  };
  return grad_check(loss_of_z, flatten_matrix(z), flatten_matrix(out.d_z),
                    epsilon);
}

}  // namespace npos
