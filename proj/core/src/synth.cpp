#include "npos/synth.hpp"

#include <algorithm>
#include <cmath>

namespace npos {

void SynthesisConfig::validate() const {
  if (k < 1) throw Error(ErrorCode::InvalidSpec, "k must be >= 1");
  if (m < 1) throw Error(ErrorCode::InvalidSpec, "m must be >= 1");
  if (p < 1) throw Error(ErrorCode::InvalidSpec, "p must be >= 1");
  if (sigma2 < 0) throw Error(ErrorCode::InvalidSpec, "sigma2 must be >= 0");
  if (accept_per_boundary < 1 || accept_per_boundary > p) {
    throw Error(ErrorCode::InvalidSpec,
                "accept_per_boundary must be in [1, p]");
  }
  if (filter_mode == FilterMode::Threshold &&
      (beta_quantile <= 0.0 || beta_quantile > 1.0)) {
    throw Error(ErrorCode::InvalidSpec, "beta_quantile must be in (0, 1]");
  }
}

namespace {

Matrix concat_queues(const std::vector<ClassQueue>& queues) {
  Eigen::Index total = 0;
  Eigen::Index dim = queues.empty() ? 0 : queues.front().dim();
  for (const auto& q : queues) total += static_cast<Eigen::Index>(q.size());
  Matrix all(total, dim);
  Eigen::Index row = 0;
  for (const auto& q : queues) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      all.row(row++) = q.entry(i).transpose();
    }
  }
  return all;
}

// k-NN distances of every entry of `queue_mat` (rows offset..offset+n-1 of
// `refset`) against refset, excluding self.
std::vector<double> queue_knn_dists(const Matrix& queue_mat,
                                    const Matrix& refset, Eigen::Index offset,
                                    int k) {
  return knn_distances_dense(queue_mat, refset, k, offset);
}

}  // namespace

BoundarySet select_boundary(const std::vector<ClassQueue>& queues,
                            const SynthesisConfig& cfg) {
  cfg.validate();
  BoundarySet out;
  Matrix all;
  std::vector<Eigen::Index> offsets(queues.size(), 0);
  if (cfg.density_mode == DensityMode::ClassAgnostic) {
    all = concat_queues(queues);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < queues.size(); ++c) {
      offsets[c] = row;
      row += static_cast<Eigen::Index>(queues[c].size());
    }
  }
  for (std::size_t c = 0; c < queues.size(); ++c) {
    Matrix qmat = queues[c].as_matrix();
    const Matrix& refset =
        cfg.density_mode == DensityMode::ClassConditional ? qmat : all;
    if (refset.rows() <= cfg.k) {
      throw Error(ErrorCode::NotEnoughNeighbors,
                  "class " + std::to_string(c) + " reference has " +
                      std::to_string(refset.rows()) + " entries, need > " +
                      std::to_string(cfg.k));
    }
    if (static_cast<std::size_t>(cfg.m) > queues[c].size()) {
      throw Error(ErrorCode::MTooLarge,
                  "m = " + std::to_string(cfg.m) + " exceeds queue size " +
                      std::to_string(queues[c].size()) + " for class " +
                      std::to_string(c));
    }
    std::vector<double> dists = queue_knn_dists(qmat, refset, offsets[c], cfg.k);
    std::vector<std::size_t> top =
        top_m_indices(dists, static_cast<std::size_t>(cfg.m));
    Matrix boundary(cfg.m, qmat.cols());
    for (std::size_t j = 0; j < top.size(); ++j) {
      boundary.row(static_cast<Eigen::Index>(j)) =
          qmat.row(static_cast<Eigen::Index>(top[j]));
    }
    out.per_class.push_back(std::move(boundary));
    out.id_knn_dists.push_back(std::move(dists));
  }
  return out;
}

Matrix sample_candidates(const Vector& center, double sigma2, int p, Rng& rng) {
  if (sigma2 < 0) throw Error(ErrorCode::InvalidSpec, "sigma2 must be >= 0");
  if (p < 1) throw Error(ErrorCode::InvalidSpec, "p must be >= 1");
  double sigma = std::sqrt(sigma2);
  Matrix out(p, center.size());
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < center.size(); ++j) {
      out(i, j) = center(j) + sigma * rng.normal();
    }
  }
  return out;
}

FilterResult reject_filter(const Matrix& candidates, const Matrix& refset,
                           const SynthesisConfig& cfg,
                           const std::vector<double>& id_knn_dists) {
  cfg.validate();
  if (refset.rows() <= cfg.k) {
    throw Error(ErrorCode::NotEnoughNeighbors,
                "refset has " + std::to_string(refset.rows()) +
                    " rows, need > " + std::to_string(cfg.k));
  }
  FilterResult result;
  result.all_dist = knn_distances_dense(candidates, refset, cfg.k);

  std::vector<Eigen::Index> keep;
  if (cfg.filter_mode == FilterMode::SelectTop) {
    std::size_t take = std::min<std::size_t>(
        static_cast<std::size_t>(cfg.accept_per_boundary),
        result.all_dist.size());
    for (std::size_t idx : top_m_indices(result.all_dist, take)) {
      keep.push_back(static_cast<Eigen::Index>(idx));
    }
    std::sort(keep.begin(), keep.end());
  } else {
    if (id_knn_dists.empty()) {
      throw Error(ErrorCode::EmptySet,
                  "threshold mode requires ID k-NN distances");
    }
    std::vector<double> sorted = id_knn_dists;
    std::sort(sorted.begin(), sorted.end());
    std::size_t qi = std::min(
        sorted.size() - 1,
        static_cast<std::size_t>(cfg.beta_quantile *
                                 static_cast<double>(sorted.size())));
    double threshold = sorted[qi];
    for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
      if (result.all_dist[static_cast<std::size_t>(i)] > threshold) {
        keep.push_back(i);
      }
    }
    // EmptyAcceptance is a valid outcome here, not an error.
  }

  result.accepted.resize(static_cast<Eigen::Index>(keep.size()),
                         candidates.cols());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    result.accepted.row(static_cast<Eigen::Index>(j)) =
        candidates.row(keep[j]);
    result.accepted_dist.push_back(result.all_dist[
        static_cast<std::size_t>(keep[j])]);
    result.accepted_index.push_back(keep[j]);
  }
  return result;
}

OutlierBatch synthesize(const std::vector<ClassQueue>& queues,
                        const SynthesisConfig& cfg, std::uint64_t seed,
                        std::uint64_t step) {
  cfg.validate();

  // Queue-readiness gate: classes without enough density support are
  // skipped outright.
  std::vector<std::size_t> ready;
  for (std::size_t c = 0; c < queues.size(); ++c) {
    if (queues[c].size() > static_cast<std::size_t>(cfg.k) &&
        queues[c].size() >= static_cast<std::size_t>(cfg.m)) {
      ready.push_back(c);
    }
  }

  OutlierBatch batch;
  if (ready.empty()) {
    batch.vectors.resize(0, queues.empty() ? 0 : queues.front().dim());
    return batch;
  }

  std::vector<ClassQueue> active;
  for (std::size_t c : ready) active.push_back(queues[c]);
  BoundarySet bset = select_boundary(active, cfg);

  std::vector<double> global_id_dists;
  if (cfg.density_mode == DensityMode::ClassAgnostic) {
    for (const auto& d : bset.id_knn_dists) {
      global_id_dists.insert(global_id_dists.end(), d.begin(), d.end());
    }
  }
  Matrix all;
  if (cfg.density_mode == DensityMode::ClassAgnostic) {
    all = concat_queues(active);
  }

  std::vector<Matrix> accepted;
  std::vector<std::int32_t> src_class;
  std::vector<std::size_t> src_index;
  std::vector<double> dists;
  Eigen::Index total_rows = 0;

  for (std::size_t a = 0; a < ready.size(); ++a) {
    Matrix class_ref = cfg.density_mode == DensityMode::ClassConditional
                           ? active[a].as_matrix()
                           : Matrix();
    const Matrix& refset =
        cfg.density_mode == DensityMode::ClassConditional ? class_ref : all;
    const std::vector<double>& id_dists =
        cfg.density_mode == DensityMode::ClassConditional
            ? bset.id_knn_dists[a]
            : global_id_dists;
    const Matrix& boundary = bset.per_class[a];
    for (Eigen::Index b = 0; b < boundary.rows(); ++b) {
      Rng rng(derive_seed(seed, step, ready[a], static_cast<std::uint64_t>(b)));
      Matrix candidates =
          sample_candidates(boundary.row(b).transpose(), cfg.sigma2, cfg.p, rng);
      if (cfg.renormalize_candidates) {
        for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
          candidates.row(i) = l2_normalize(candidates.row(i).transpose())
                                  .transpose();
        }
      }
      FilterResult fr = reject_filter(candidates, refset, cfg, id_dists);
      total_rows += fr.accepted.rows();
      for (Eigen::Index i = 0; i < fr.accepted.rows(); ++i) {
        src_class.push_back(static_cast<std::int32_t>(ready[a]));
        src_index.push_back(static_cast<std::size_t>(b));
        dists.push_back(fr.accepted_dist[static_cast<std::size_t>(i)]);
      }
      accepted.push_back(std::move(fr.accepted));
    }
  }

  batch.vectors.resize(total_rows, queues.front().dim());
  Eigen::Index row = 0;
  for (const Matrix& m : accepted) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      batch.vectors.row(row++) = m.row(i);
    }
  }
  batch.source_class = std::move(src_class);
  batch.source_index = std::move(src_index);
  batch.knn_dist = std::move(dists);
  return batch;
}

}  // namespace npos
