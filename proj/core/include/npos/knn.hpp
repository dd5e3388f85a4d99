#pragma once

#include <optional>
#include <vector>

#include "npos/embdata.hpp"

namespace npos {

enum class DensityMode { ClassConditional, ClassAgnostic };

struct KnnParams {
  int k = 300;
  DensityMode mode = DensityMode::ClassAgnostic;
  bool exclude_self = false;
};

// Euclidean distance from query to its k-th nearest reference row.
// Comparison is on squared distances with ties broken by ascending row
// index; the square root is applied once on the selected value. When
// self_index is set, that reference row is skipped.
double knn_distance(const Vector& query, const Matrix& refset, int k,
                    std::optional<Eigen::Index> self_index = std::nullopt);

// Per-query k-NN distance against either the whole refset (class-agnostic)
// or the query's own class rows (class-conditional, requiring labels on
// both sides). When params.exclude_self is set, query i is taken to be
// refset row i and that row is skipped for it.
std::vector<double> knn_distances_batch(
    const Matrix& queries, const EmbeddingSet& refset, const KnnParams& params,
    const std::vector<std::int32_t>* query_labels = nullptr);

// Dense kernel for the synthesis inner loop: squared distances via one
// matrix product per block, then per-row k-th selection. Distance values
// equal the pairwise form up to floating-point accumulation order. When
// self_offset is set, query i is refset row self_offset + i and is skipped.
std::vector<double> knn_distances_dense(
    const Matrix& queries, const Matrix& refset, int k,
    std::optional<Eigen::Index> self_offset = std::nullopt);

// Indices of the m largest values, descending by value, ties by ascending
// index.
std::vector<std::size_t> top_m_indices(const std::vector<double>& values,
                                       std::size_t m);

// Worker-thread cap for batch operations; 1 disables parallelism.
// Results are identical for any setting.
void set_max_threads(int n);
int max_threads();

}  // namespace npos
