#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "npos/embdata.hpp"

namespace npos::test {

// Independent O(n^2) full-sort k-NN oracle. Accumulates squared distances
// the same way as the library's pairwise path ((a-b).squaredNorm()) so
// exact equality is meaningful, but selects by fully sorting all
// (distance, index) pairs instead of partial selection.
inline double knn_oracle(const Vector& query, const Matrix& refset, int k,
                         std::optional<Eigen::Index> self = std::nullopt) {
  std::vector<std::pair<double, Eigen::Index>> all;
  for (Eigen::Index i = 0; i < refset.rows(); ++i) {
    if (self && *self == i) continue;
    all.emplace_back((query.transpose() - refset.row(i)).squaredNorm(), i);
  }
  std::sort(all.begin(), all.end());
  return std::sqrt(all[static_cast<std::size_t>(k - 1)].first);
}

}  // namespace npos::test
