#include "doctest.h"
#include "helpers.hpp"
#include "npos/synth.hpp"
#include "oracle.hpp"

using namespace npos;

namespace {

ClassQueue queue_from(const Matrix& rows) {
  ClassQueue q(static_cast<std::size_t>(rows.rows()), rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    q.push(l2_normalize(rows.row(i).transpose()));
  return q;
}

// Unnormalized queue builder for geometric hand cases: capacity tolerance
// is on the caller.
ClassQueue raw_queue(const Matrix& rows) {
  ClassQueue q(static_cast<std::size_t>(rows.rows()), rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    Vector v = rows.row(i).transpose();
    q.push(v / v.norm());
  }
  return q;
}

std::vector<ClassQueue> random_queues(Rng& rng, int classes, int per_class,
                                      Eigen::Index d) {
  std::vector<ClassQueue> queues;
  for (int c = 0; c < classes; ++c) {
    Matrix m(per_class, d);
    for (Eigen::Index i = 0; i < per_class; ++i)
      for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal();
    queues.push_back(queue_from(m));
  }
  return queues;
}

}  // namespace

TEST_CASE("select_boundary: far point wins") {
  // Spec hand case, scaled onto the unit sphere: three bunched points and
  // one far-off direction; with k=1, m=1 the isolated direction has the
  // largest exclude-self 1-NN distance.
  Matrix pts(4, 2);
  pts << 1, 0, 0.999, 0.0447, 0.999, -0.0447, -1, 0;
  std::vector<ClassQueue> queues{raw_queue(pts)};
  SynthesisConfig cfg;
  cfg.k = 1;
  cfg.m = 1;
  BoundarySet b = select_boundary(queues, cfg);
  REQUIRE(b.per_class.size() == 1);
  REQUIRE(b.per_class[0].rows() == 1);
  CHECK((b.per_class[0].row(0).transpose() -
         l2_normalize(pts.row(3).transpose()))
            .norm() == doctest::Approx(0.0));
}

TEST_CASE("select_boundary: m equal to queue size returns everything") {
  Rng rng(1);
  auto queues = random_queues(rng, 1, 6, 3);
  SynthesisConfig cfg;
  cfg.k = 2;
  cfg.m = 6;
  BoundarySet b = select_boundary(queues, cfg);
  CHECK(b.per_class[0].rows() == 6);
  // Distances are sorted descending per the selection order.
  auto& d = b.id_knn_dists[0];
  CHECK(d.size() == 6);
}

TEST_CASE("select_boundary: equal farthest distances tie to the lower index") {
  Matrix pts(4, 2);
  // The four cardinal directions: every point's exclude-self 1-NN distance
  // is exactly sqrt(2), a four-way tie, so the winner is index 0.
  pts << 1, 0, -1, 0, 0, 1, 0, -1;
  std::vector<ClassQueue> queues{raw_queue(pts)};
  SynthesisConfig cfg;
  cfg.k = 1;
  cfg.m = 1;
  BoundarySet b = select_boundary(queues, cfg);
  REQUIRE(b.per_class[0].rows() == 1);
  CHECK((b.per_class[0].row(0).transpose() -
         l2_normalize(pts.row(0).transpose()))
            .norm() == doctest::Approx(0.0));
}

TEST_CASE("select_boundary error contracts") {
  Rng rng(2);
  auto queues = random_queues(rng, 1, 5, 3);
  SynthesisConfig cfg;
  cfg.k = 5;  // needs > k entries
  cfg.m = 1;
  CHECK_THROWS_AS(select_boundary(queues, cfg), Error);
  cfg.k = 2;
  cfg.m = 6;  // more than queue size
  CHECK_THROWS_AS(select_boundary(queues, cfg), Error);
}

TEST_CASE("sample_candidates: sigma2=0 copies the center") {
  Rng rng(3);
  Vector center(2);
  center << 1, 2;
  Matrix c = sample_candidates(center, 0.0, 3, rng);
  REQUIRE(c.rows() == 3);
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(c(i, 0) == 1.0);
    CHECK(c(i, 1) == 2.0);
  }
}

TEST_CASE("sample_candidates: deterministic given rng state, sane moments") {
  Vector center = Vector::Zero(4);
  Rng a(9), b(9);
  Matrix ca = sample_candidates(center, 0.25, 2000, a);
  Matrix cb = sample_candidates(center, 0.25, 2000, b);
  CHECK(ca == cb);
  CHECK(ca.mean() == doctest::Approx(0.0).epsilon(0.05));
  double var = (ca.array() - ca.mean()).square().mean();
  CHECK(var == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("reject_filter: far candidate accepted under select-top") {
  Rng rng(4);
  Matrix refset(20, 2);
  for (Eigen::Index i = 0; i < 20; ++i)
    for (int j = 0; j < 2; ++j) refset(i, j) = 0.01 * rng.normal();
  Matrix cand(2, 2);
  cand << 0, 0.01, 9, 9;
  SynthesisConfig cfg;
  cfg.k = 1;
  cfg.accept_per_boundary = 1;
  FilterResult r = reject_filter(cand, refset, cfg, {});
  REQUIRE(r.accepted.rows() == 1);
  CHECK(r.accepted(0, 0) == 9.0);
  CHECK(r.accepted(0, 1) == 9.0);
}

TEST_CASE("reject_filter: accept_per_boundary = p accepts the whole pool") {
  Rng rng(5);
  Matrix refset(10, 2);
  for (Eigen::Index i = 0; i < 10; ++i)
    for (int j = 0; j < 2; ++j) refset(i, j) = rng.normal();
  Matrix cand(6, 2);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (int j = 0; j < 2; ++j) cand(i, j) = rng.normal();
  SynthesisConfig cfg;
  cfg.k = 2;
  cfg.p = 6;
  cfg.accept_per_boundary = 6;
  FilterResult r = reject_filter(cand, refset, cfg, {});
  CHECK(r.accepted.rows() == 6);
}

TEST_CASE("reject_filter: threshold mode rejects a candidate on a ref point") {
  Rng rng(6);
  Matrix refset(10, 2);
  for (Eigen::Index i = 0; i < 10; ++i)
    for (int j = 0; j < 2; ++j) refset(i, j) = rng.normal();
  // ID distances all strictly positive; a candidate exactly on a refset row
  // has k=1 distance 0, which cannot exceed the beta quantile.
  std::vector<double> id_dists;
  for (Eigen::Index i = 0; i < 10; ++i)
    id_dists.push_back(npos::test::knn_oracle(refset.row(i).transpose(), refset, 1, i));
  Matrix cand(1, 2);
  cand = refset.topRows(1);
  SynthesisConfig cfg;
  cfg.k = 1;
  cfg.filter_mode = FilterMode::Threshold;
  cfg.beta_quantile = 1.0 - 1e-12;
  FilterResult r = reject_filter(cand, refset, cfg, id_dists);
  CHECK(r.accepted.rows() == 0);
}

TEST_CASE("rejection dominance over random pools") {
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.below(4));
    Matrix refset(30, d);
    for (Eigen::Index i = 0; i < 30; ++i)
      for (Eigen::Index j = 0; j < d; ++j) refset(i, j) = rng.normal();
    Matrix cand(12, d);
    for (Eigen::Index i = 0; i < 12; ++i)
      for (Eigen::Index j = 0; j < d; ++j) cand(i, j) = rng.normal();
    SynthesisConfig cfg;
    cfg.k = 3;
    cfg.accept_per_boundary = 1 + static_cast<int>(rng.below(4));
    FilterResult r = reject_filter(cand, refset, cfg, {});
    REQUIRE(r.accepted.rows() == cfg.accept_per_boundary);
    double min_acc = *std::min_element(r.accepted_dist.begin(), r.accepted_dist.end());
    std::vector<bool> accepted(12, false);
    for (auto idx : r.accepted_index) accepted[static_cast<std::size_t>(idx)] = true;
    for (std::size_t i = 0; i < 12; ++i) {
      if (!accepted[i]) CHECK(min_acc >= r.all_dist[i]);
    }
  }
}

TEST_CASE("synthesize: single-class no-choice pipeline") {
  Rng rng(8);
  auto queues = random_queues(rng, 1, 5, 3);
  SynthesisConfig cfg;
  cfg.k = 2;
  cfg.m = 1;
  cfg.p = 1;
  cfg.accept_per_boundary = 1;
  OutlierBatch out = synthesize(queues, cfg, 123);
  REQUIRE(out.rows() == 1);
  CHECK(out.source_class[0] == 0);
  CHECK(out.knn_dist[0] >= 0.0);
}

TEST_CASE("synthesize: paper-sized config yields m outliers per class") {
  Rng rng(9);
  auto queues = random_queues(rng, 2, 600, 8);
  SynthesisConfig cfg;  // defaults: k=300, m=200, p=1000, accept 1
  cfg.p = 50;           // keep the test fast; acceptance covers full p
  OutlierBatch out = synthesize(queues, cfg, 77);
  CHECK(out.rows() == 400);
  int per_class[2] = {0, 0};
  for (auto c : out.source_class) ++per_class[c];
  CHECK(per_class[0] == 200);
  CHECK(per_class[1] == 200);
}

TEST_CASE("synthesize: sigma2=0 collapse onto boundary centers") {
  Rng rng(10);
  auto queues = random_queues(rng, 2, 20, 4);
  SynthesisConfig cfg;
  cfg.k = 5;
  cfg.m = 3;
  cfg.p = 7;
  cfg.sigma2 = 0.0;
  OutlierBatch out = synthesize(queues, cfg, 5);
  BoundarySet b = select_boundary(queues, cfg);
  REQUIRE(out.rows() == 6);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    auto c = static_cast<std::size_t>(out.source_class[static_cast<std::size_t>(i)]);
    auto bi = out.source_index[static_cast<std::size_t>(i)];
    CHECK((out.vectors.row(i) -
           b.per_class[c].row(static_cast<Eigen::Index>(bi)))
              .norm() == doctest::Approx(0.0));
  }
}

TEST_CASE("synthesize is a pure function of (queues, cfg, seed, step)") {
  Rng rng(11);
  auto queues = random_queues(rng, 3, 30, 5);
  SynthesisConfig cfg;
  cfg.k = 8;
  cfg.m = 4;
  cfg.p = 10;
  OutlierBatch a = synthesize(queues, cfg, 99, 3);
  OutlierBatch b = synthesize(queues, cfg, 99, 3);
  CHECK(a.vectors == b.vectors);
  CHECK(a.knn_dist == b.knn_dist);
  OutlierBatch c = synthesize(queues, cfg, 99, 4);
  CHECK(a.vectors != c.vectors);
}

TEST_CASE("separation tendency: accepted outliers sit in lower density") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.n_per_class = 80;
    spec.noise = 0.3;
    SyntheticData data = gen_synthetic(spec);

    std::vector<ClassQueue> queues;
    for (int c = 0; c < 3; ++c) queues.emplace_back(80, 2);
    EmbeddingSet train = data.id_train;
    l2_normalize_rows(train);
    queue_update(queues, train.data, train.labels);

    SynthesisConfig cfg;
    cfg.k = 10;
    cfg.m = 8;
    cfg.p = 20;
    cfg.sigma2 = 0.1;
    OutlierBatch out = synthesize(queues, cfg, seed);
    REQUIRE(out.rows() > 0);
    double mean_out =
        std::accumulate(out.knn_dist.begin(), out.knn_dist.end(), 0.0) /
        static_cast<double>(out.knn_dist.size());

    BoundarySet b = select_boundary(queues, cfg);
    double mean_id = 0.0;
    std::size_t n_id = 0;
    for (const auto& dists : b.id_knn_dists) {
      for (double v : dists) mean_id += v, ++n_id;
    }
    mean_id /= static_cast<double>(n_id);
    CHECK(mean_out > mean_id);
  }
}

TEST_CASE("synthesize skips classes with too-small queues") {
  Rng rng(12);
  auto queues = random_queues(rng, 2, 30, 4);
  // Shrink class 1 below the k threshold.
  queues[1] = ClassQueue(30, 4);
  Vector v = Vector::Zero(4);
  v(0) = 1;
  queues[1].push(v);
  SynthesisConfig cfg;
  cfg.k = 5;
  cfg.m = 3;
  cfg.p = 5;
  OutlierBatch out = synthesize(queues, cfg, 1);
  CHECK(out.rows() == 3);
  for (auto c : out.source_class) CHECK(c == 0);
}
