#include "npos/knn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <thread>

namespace npos {

namespace {

std::atomic<int> g_max_threads{1};

// k-th smallest squared distance from query to rows[indices], ties by
// ascending index. indices == nullptr means all rows.
double kth_sq_distance(const Vector& query, const Matrix& refset,
                       const std::vector<Eigen::Index>* indices, int k,
                       std::optional<Eigen::Index> self_index) {
  std::vector<std::pair<double, Eigen::Index>> d2;
  std::size_t count = indices ? indices->size()
                             : static_cast<std::size_t>(refset.rows());
  d2.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    Eigen::Index i = indices ? (*indices)[t] : static_cast<Eigen::Index>(t);
    if (self_index && i == *self_index) continue;
    d2.emplace_back((refset.row(i).transpose() - query).squaredNorm(), i);
  }
  if (d2.size() < static_cast<std::size_t>(k)) {
    throw Error(ErrorCode::NotEnoughNeighbors,
                "need " + std::to_string(k) + " neighbors, have " +
                    std::to_string(d2.size()));
  }
  auto nth = d2.begin() + (k - 1);
  std::nth_element(d2.begin(), nth, d2.end());
  return nth->first;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  int workers = std::min<int>(g_max_threads.load(), static_cast<int>(n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        body(i);
      }
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace

void set_max_threads(int n) { g_max_threads.store(std::max(1, n)); }
int max_threads() { return g_max_threads.load(); }

double knn_distance(const Vector& query, const Matrix& refset, int k,
                    std::optional<Eigen::Index> self_index) {
  if (k < 1) throw Error(ErrorCode::InvalidSpec, "k must be >= 1");
  if (query.size() != refset.cols()) {
    throw Error(ErrorCode::DimMismatch, "query dimension mismatch");
  }
  return std::sqrt(kth_sq_distance(query, refset, nullptr, k, self_index));
}

std::vector<double> knn_distances_batch(
    const Matrix& queries, const EmbeddingSet& refset, const KnnParams& params,
    const std::vector<std::int32_t>* query_labels) {
  if (params.k < 1) throw Error(ErrorCode::InvalidSpec, "k must be >= 1");
  if (queries.cols() != refset.dim()) {
    throw Error(ErrorCode::DimMismatch, "query dimension mismatch");
  }
  std::size_t n = static_cast<std::size_t>(queries.rows());

  std::vector<std::vector<Eigen::Index>> class_rows;
  if (params.mode == DensityMode::ClassAgnostic) {
    std::size_t required = static_cast<std::size_t>(params.k) +
                           (params.exclude_self ? 1 : 0);
    if (n > 0 && static_cast<std::size_t>(refset.rows()) < required) {
      throw Error(ErrorCode::NotEnoughNeighbors,
                  "refset has " + std::to_string(refset.rows()) +
                      " rows, need " + std::to_string(required));
    }
  } else {
    if (!query_labels || !refset.has_labels()) {
      throw Error(ErrorCode::MissingLabels,
                  "class-conditional mode requires labels on both sides");
    }
    if (query_labels->size() != n) {
      throw Error(ErrorCode::DimMismatch, "query label count mismatch");
    }
    for (std::int32_t label : *query_labels) {
      if (label < 0 || label >= refset.num_classes()) {
        throw Error(ErrorCode::LabelOutOfRange,
                    "query label " + std::to_string(label));
      }
    }
    class_rows.resize(static_cast<std::size_t>(refset.num_classes()));
    for (Eigen::Index i = 0; i < refset.rows(); ++i) {
      std::int32_t c = refset.labels[static_cast<std::size_t>(i)];
      if (c >= 0) class_rows[static_cast<std::size_t>(c)].push_back(i);
    }
    for (std::size_t c = 0; c < class_rows.size(); ++c) {
      // The per-class requirement is checked eagerly so the error names the
      // offending class instead of an arbitrary query.
      std::size_t required = static_cast<std::size_t>(params.k) +
                             (params.exclude_self ? 1 : 0);
      bool queried = std::any_of(query_labels->begin(), query_labels->end(),
                                 [c](std::int32_t l) {
                                   return static_cast<std::size_t>(l) == c;
                                 });
      if (queried && class_rows[c].size() < required) {
        throw Error(ErrorCode::NotEnoughNeighbors,
                    "class " + std::to_string(c) + " has " +
                        std::to_string(class_rows[c].size()) + " rows, need " +
                        std::to_string(required));
      }
    }
  }

  std::vector<double> out(n);
  parallel_for(n, [&](std::size_t i) {
    Eigen::Index row = static_cast<Eigen::Index>(i);
    std::optional<Eigen::Index> self;
    if (params.exclude_self) self = row;
    const std::vector<Eigen::Index>* rows = nullptr;
    if (params.mode == DensityMode::ClassConditional) {
      rows = &class_rows[static_cast<std::size_t>((*query_labels)[i])];
    }
    out[i] = std::sqrt(kth_sq_distance(queries.row(row).transpose(), refset.data,
                                       rows, params.k, self));
  });
  return out;
}

std::vector<double> knn_distances_dense(const Matrix& queries,
                                        const Matrix& refset, int k,
                                        std::optional<Eigen::Index> self_offset) {
  if (k < 1) throw Error(ErrorCode::InvalidSpec, "k must be >= 1");
  if (queries.cols() != refset.cols()) {
    throw Error(ErrorCode::DimMismatch, "query dimension mismatch");
  }
  Eigen::Index required = k + (self_offset ? 1 : 0);
  if (queries.rows() > 0 && refset.rows() < required) {
    throw Error(ErrorCode::NotEnoughNeighbors,
                "refset has " + std::to_string(refset.rows()) +
                    " rows, need " + std::to_string(required));
  }
  Vector ref_sq = refset.rowwise().squaredNorm();
  std::vector<double> out(static_cast<std::size_t>(queries.rows()));
  constexpr Eigen::Index kBlock = 512;
  std::vector<double> row(static_cast<std::size_t>(refset.rows()));
  for (Eigen::Index start = 0; start < queries.rows(); start += kBlock) {
    Eigen::Index count = std::min(kBlock, queries.rows() - start);
    // D2 = |q|^2 + |r|^2 - 2 q r^T
    Matrix d2 = (-2.0 * queries.middleRows(start, count) *
                 refset.transpose());
    d2.colwise() += queries.middleRows(start, count).rowwise().squaredNorm();
    d2.rowwise() += ref_sq.transpose();
    for (Eigen::Index i = 0; i < count; ++i) {
      std::size_t len = 0;
      for (Eigen::Index j = 0; j < refset.rows(); ++j) {
        if (self_offset && j == *self_offset + start + i) continue;
        row[len++] = d2(i, j);
      }
      auto nth = row.begin() + (k - 1);
      std::nth_element(row.begin(), nth, row.begin() +
                           static_cast<std::ptrdiff_t>(len));
      out[static_cast<std::size_t>(start + i)] = std::sqrt(std::max(0.0, *nth));
    }
  }
  return out;
}

std::vector<std::size_t> top_m_indices(const std::vector<double>& values,
                                       std::size_t m) {
  if (m > values.size()) {
    throw Error(ErrorCode::MTooLarge,
                "m = " + std::to_string(m) + " exceeds " +
                    std::to_string(values.size()) + " values");
  }
  std::vector<std::size_t> idx(values.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto better = [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m),
                    idx.end(), better);
  idx.resize(m);
  return idx;
}

}  // namespace npos
