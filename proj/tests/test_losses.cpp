#include "doctest.h"
#include "helpers.hpp"
#include "npos/checks.hpp"
#include "npos/losses.hpp"

using namespace npos;

namespace {

MlpParams zero_phi(Eigen::Index d) {
  MlpParams p;
  p.layers.push_back({Matrix::Zero(16, d), Vector::Zero(16)});
  p.layers.push_back({Matrix::Zero(1, 16), Vector::Zero(1)});
  return p;
}

// phi that outputs the constant c regardless of input.
MlpParams const_phi(Eigen::Index d, double c) {
  MlpParams p = zero_phi(d);
  p.layers[1].b(0) = c;
  return p;
}

Prototypes two_protos() {
  Prototypes proto;
  proto.mu.resize(2, 2);
  proto.mu << 1, 0, 0, 1;
  return proto;
}

}  // namespace

TEST_CASE("softplus: stable at extremes, exact at 0") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(700.0) == doctest::Approx(700.0).epsilon(1e-12));
  CHECK(softplus(-700.0) >= 0.0);
  CHECK(softplus(-700.0) <= 1e-300);
  CHECK(std::isfinite(softplus(700.0)));
}

TEST_CASE("r_open: zero head gives 2 ln 2") {
  MlpParams phi = zero_phi(3);
  Matrix outliers(4, 3), id(5, 3);
  outliers.setRandom();
  id.setRandom();
  ROpenOutput out = r_open(phi, outliers, id);
  CHECK(out.value == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("r_open: saturated correct head is ~0 without overflow") {
  // A head that outputs -50 maps outliers to softplus(-50) ~ 2e-22, but the
  // same constant head scores the ID side softplus(+50); build phi(x) = c
  // and evaluate each side against its own saturating constant.
  Matrix outliers(2, 3), id(2, 3);
  outliers.setRandom();
  id.setRandom();
  ROpenOutput lo = r_open(const_phi(3, -50.0), outliers, id);
  ROpenOutput hi = r_open(const_phi(3, 50.0), outliers, id);
  // outlier term of lo + ID term of hi is the saturated-correct total.
  double outlier_term = lo.value - softplus(50.0);
  double id_term = hi.value - softplus(50.0);
  CHECK(outlier_term + id_term <= 1e-20);
  CHECK(outlier_term + id_term >= 0.0);
  // And the extreme case |phi| = 700 stays finite.
  CHECK(std::isfinite(r_open(const_phi(3, 700.0), outliers, id).value));
}

TEST_CASE("r_open: hand value at phi = 1 on both sides") {
  Matrix outliers(1, 2), id(1, 2);
  outliers.setRandom();
  id.setRandom();
  ROpenOutput out = r_open(const_phi(2, 1.0), outliers, id);
  CHECK(out.value ==
        doctest::Approx(std::log(1 + std::exp(1.0)) + std::log(1 + std::exp(-1.0)))
            .epsilon(1e-12));
  CHECK(out.value == doctest::Approx(1.62652).epsilon(1e-5));
}

TEST_CASE("r_open rejects empty sets and dimension mismatches") {
  MlpParams phi = zero_phi(3);
  Matrix empty(0, 3), id(2, 3), outliers(2, 3), wrong(2, 4);
  id.setRandom();
  outliers.setRandom();
  wrong.setRandom();
  CHECK_THROWS_AS(r_open(phi, empty, id), Error);
  CHECK_THROWS_AS(r_open(phi, outliers, empty), Error);
  CHECK_THROWS_AS(r_open(phi, wrong, id), Error);
}

TEST_CASE("r_open symmetry under role swap with negated head") {
  Rng rng(40);
  MlpParams phi = mlp_init({3, 16, 1}, rng);
  Matrix a(4, 3), b(6, 3);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = rng.normal();
  for (Eigen::Index i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) b(i, j) = rng.normal();
  MlpParams neg = phi;
  neg.layers.back().W = -neg.layers.back().W;
  neg.layers.back().b = -neg.layers.back().b;
  CHECK(r_open(phi, a, b).value ==
        doctest::Approx(r_open(neg, b, a).value).epsilon(1e-12));
}

TEST_CASE("r_open monotone: raising phi(ID) lowers the loss") {
  Matrix outliers(2, 2), id(2, 2);
  outliers.setRandom();
  id.setRandom();
  double prev = r_open(const_phi(2, 0.0), outliers, id).value;
  // Raise only the ID side by comparing against the split construction.
  for (double c : {0.5, 1.0, 2.0, 4.0}) {
    // id term decreases in c; outlier term increases, so isolate the sides.
    double id_term = r_open(const_phi(2, c), outliers, id).value - softplus(c);
    double prev_id = prev - softplus(0.0);
    CHECK(id_term < prev_id);
    prev = r_open(const_phi(2, c), outliers, id).value;
  }
}

TEST_CASE("r_closed: one class costs nothing") {
  Prototypes proto;
  proto.mu.resize(1, 2);
  proto.mu << 1, 0;
  Matrix z(3, 2);
  z.setRandom();
  RClosedOutput out = r_closed(z, {0, 0, 0}, proto, 0.1, true);
  CHECK(out.value == doctest::Approx(0.0));
  CHECK(out.d_z.norm() == doctest::Approx(0.0));
}

TEST_CASE("r_closed: equidistant sample costs ln 2 for any tau") {
  Prototypes proto = two_protos();
  Matrix z(1, 2);
  z << 1, 1;  // same cosine to both prototypes
  for (double tau : {0.05, 0.1, 1.0, 10.0}) {
    for (bool ln : {false, true}) {
      CHECK(r_closed(z, {0}, proto, tau, ln).value ==
            doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("r_closed: f=(1,0) at tau 0.1 with logit_norm") {
  Prototypes proto = two_protos();
  Matrix z(1, 2);
  z << 1, 0;  // f = (1, 0), ||f|| = 1, scale = 10
  RClosedOutput out = r_closed(z, {0}, proto, 0.1, true);
  CHECK(out.value == doctest::Approx(std::log(1 + std::exp(-10.0))).epsilon(1e-9));
  CHECK(out.value == doctest::Approx(4.54e-5).epsilon(1e-2));
}

TEST_CASE("r_closed: logit_norm makes the loss scale-free in z") {
  Rng rng(41);
  Prototypes proto = two_protos();
  Matrix z(4, 2);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) z(i, j) = rng.normal();
  std::vector<std::int32_t> labels{0, 1, 0, 1};
  double base = r_closed(z, labels, proto, 0.1, true).value;
  CHECK(r_closed(Matrix(3.7 * z), labels, proto, 0.1, true).value ==
        doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("r_closed error contracts") {
  Prototypes proto = two_protos();
  Matrix empty(0, 2);
  CHECK_THROWS_AS(r_closed(empty, {}, proto, 0.1, true), Error);
  Matrix z(1, 2);
  z << 1, 0;
  CHECK_THROWS_AS(r_closed(z, {5}, proto, 0.1, true), Error);
}

TEST_CASE("total_objective arithmetic") {
  CHECK(total_objective(1.0, 2.0, 0.0) == 1.0);
  CHECK(total_objective(1.0, 2.0, 0.1) == doctest::Approx(1.2));
  CHECK(total_objective(0.7, 0.0, 1.0) == 0.7);
}

TEST_CASE("gradient checks: r_open and r_closed vs central differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CHECK(check_r_open_grads(seed) <= 1e-4);
    CHECK(check_r_closed_grads(seed, 1e-5, true) <= 1e-4);
    CHECK(check_r_closed_grads(seed, 1e-5, false) <= 1e-4);
  }
}
