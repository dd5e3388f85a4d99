#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "npos/embdata.hpp"

namespace npos {

// Affine layers with ReLU between them and a linear output.
struct MlpLayer {
  Matrix W;  // out x in
  Vector b;  // out
};

struct MlpParams {
  std::vector<MlpLayer> layers;

  Eigen::Index input_dim() const { return layers.front().W.cols(); }
  Eigen::Index output_dim() const { return layers.back().W.rows(); }
  void validate() const;
};

// Gradients mirroring MlpParams shapes.
struct MlpGrads {
  std::vector<MlpLayer> layers;

  static MlpGrads zeros_like(const MlpParams& params);
  void add_scaled(const MlpGrads& other, double scale);
};

// Cached forward state for one batch (rows are samples).
struct MlpCache {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activation per layer
  std::vector<Matrix> post;  // post-ReLU per hidden layer
};

// Batch forward: X is n x input_dim, result n x output_dim. Pass a cache to
// enable backprop.
Matrix mlp_forward(const MlpParams& params, const Matrix& x,
                   MlpCache* cache = nullptr);

// Backprop dL/dY through the cached forward pass. Accumulates parameter
// gradients into grads and returns dL/dX.
Matrix mlp_backward(const MlpParams& params, const MlpCache& cache,
                    const Matrix& d_output, MlpGrads& grads);

// Fan-in scaled uniform init, seeded.
MlpParams mlp_init(const std::vector<Eigen::Index>& dims, Rng& rng);

enum class PrototypeMode { Ema, Fixed };

struct Prototypes {
  Matrix mu;  // C x d, unit-norm rows
  double gamma = 0.95;
  PrototypeMode mode = PrototypeMode::Ema;

  Eigen::Index num_classes() const { return mu.rows(); }
  Eigen::Index dim() const { return mu.cols(); }
  void validate() const;
};

// f_j = (z . mu_j) / (||z|| ||mu_j||).
Vector cosine_logits(const Vector& z, const Prototypes& prototypes);

// mu_c := Normalize(gamma * mu_c + (1 - gamma) * z), applied per sample in
// batch order. No-op in fixed mode.
void prototype_ema_update(Prototypes& prototypes, const Matrix& z_batch,
                          const std::vector<std::int32_t>& labels);

Prototypes prototypes_init(Eigen::Index num_classes, Eigen::Index dim,
                           double gamma, Rng& rng);

struct Model {
  MlpParams encoder;
  MlpParams phi;  // scalar-output head
  Prototypes prototypes;
  double tau = 0.1;
  bool logit_norm = true;

  void validate() const;
};

// Central-difference check of an analytic gradient. Returns the max over
// coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double grad_check(const std::function<double(const Vector&)>& loss_fn,
                  const Vector& at, const Vector& analytic, double epsilon);

// Flatten / unflatten helpers used by the gradient checker and optimizer.
Vector mlp_flatten(const MlpParams& params);
void mlp_unflatten(const Vector& flat, MlpParams& params);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace npos
