#pragma once

#include <cstdint>
#include <vector>

#include "npos/embdata.hpp"
#include "npos/knn.hpp"

namespace npos {

enum class FilterMode { SelectTop, Threshold };

struct SynthesisConfig {
  int k = 300;                    // k-NN order
  int m = 200;                    // boundary samples per class
  int p = 1000;                   // Gaussian candidates per boundary point
  double sigma2 = 0.1;            // candidate variance
  int accept_per_boundary = 1;
  FilterMode filter_mode = FilterMode::SelectTop;
  double beta_quantile = 0.95;    // threshold mode only
  DensityMode density_mode = DensityMode::ClassConditional;
  bool renormalize_candidates = false;

  void validate() const;
};

struct OutlierBatch {
  Matrix vectors;                          // rows are accepted outliers
  std::vector<std::int32_t> source_class;  // originating class per row
  std::vector<std::size_t> source_index;   // boundary index within the class
  std::vector<double> knn_dist;            // k-NN distance at acceptance

  Eigen::Index rows() const { return vectors.rows(); }
};

// Per-class boundary samples: the m queue entries with the largest k-NN
// distance (exclude_self) over the density_mode reference set.
struct BoundarySet {
  std::vector<Matrix> per_class;                   // m x d each
  std::vector<std::vector<double>> id_knn_dists;   // full queue distances
};

BoundarySet select_boundary(const std::vector<ClassQueue>& queues,
                            const SynthesisConfig& cfg);

// p independent draws from N(center, sigma2 * I).
Matrix sample_candidates(const Vector& center, double sigma2, int p, Rng& rng);

struct FilterResult {
  Matrix accepted;
  std::vector<double> accepted_dist;
  std::vector<Eigen::Index> accepted_index;  // candidate row indices
  std::vector<double> all_dist;              // per-candidate k-NN distance
};

// Rejection filter over one candidate pool. select-top keeps the
// accept_per_boundary candidates with the largest k-NN distance to refset;
// threshold keeps those above the beta_quantile quantile of id_knn_dists.
// Ties break toward the lower candidate index.
FilterResult reject_filter(const Matrix& candidates, const Matrix& refset,
                           const SynthesisConfig& cfg,
                           const std::vector<double>& id_knn_dists);

// Full sampler: boundary selection, Gaussian candidates, rejection filter.
// Classes whose queue has <= k entries are skipped. Each boundary point uses
// an RNG stream derived from (seed, step, class, boundary index), so output
// is independent of evaluation order.
OutlierBatch synthesize(const std::vector<ClassQueue>& queues,
                        const SynthesisConfig& cfg, std::uint64_t seed,
                        std::uint64_t step = 0);

}  // namespace npos
