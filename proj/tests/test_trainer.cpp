#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "npos/trainer.hpp"

using namespace npos;
using npos::test::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoFailure;  // sentinel: "did not throw"
}

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.warmup_epochs = 3;
  cfg.batch_size = 64;
  cfg.queue_capacity = 100;
  cfg.encoder_hidden = 16;
  cfg.embed_dim = 8;
  cfg.synthesis.k = 10;
  cfg.synthesis.m = 5;
  cfg.synthesis.p = 10;
  cfg.seed = seed;
  return cfg;
}

EmbeddingSet toy_data(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.n_per_class = 120;
  spec.noise = 0.3;
  return gen_synthetic(spec).id_train;
}

}  // namespace

TEST_CASE("parse_config: empty text yields the paper defaults") {
  TrainConfig cfg = parse_config("");
  CHECK(cfg.epochs == 500);
  CHECK(cfg.batch_size == 256);
  CHECK(cfg.lr_closed == 0.5);
  CHECK(cfg.lr_open == 0.05);
  CHECK(cfg.momentum == 0.9);
  CHECK(cfg.weight_decay == 1e-4);
  CHECK(cfg.lr_schedule == LrSchedule::Cosine);
  CHECK(cfg.alpha == 0.1);
  CHECK(cfg.warmup_epochs == 200);
  CHECK(cfg.tau == 0.1);
  CHECK(cfg.gamma == 0.95);
  CHECK(cfg.queue_capacity == 600);
  CHECK(cfg.synthesis.k == 300);
  CHECK(cfg.synthesis.m == 200);
  CHECK(cfg.synthesis.p == 1000);
  CHECK(cfg.synthesis.sigma2 == 0.1);
  CHECK(cfg.synthesis.accept_per_boundary == 1);
}

TEST_CASE("parse_config: overrides, comments, and errors") {
  TrainConfig cfg = parse_config("# comment line\nalpha = 0.25\n\nk = 50\n");
  CHECK(cfg.alpha == 0.25);
  CHECK(cfg.synthesis.k == 50);
  CHECK(cfg.epochs == 500);  // untouched default

  CHECK(code_of([] { parse_config("bananas = 1\n"); }) == ErrorCode::UnknownKey);
  CHECK(code_of([] { parse_config("sigma2 = banana\n"); }) == ErrorCode::BadValue);
  // Error messages carry the line number.
  try {
    parse_config("epochs = 10\nsigma2 = banana\n");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("format_config round-trips through parse_config") {
  TrainConfig cfg = quick_config(3);
  cfg.alpha = 0.37;
  cfg.logit_norm = false;
  TrainConfig back = parse_config(format_config(cfg));
  CHECK(back.alpha == cfg.alpha);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.synthesis.k == cfg.synthesis.k);
  CHECK(back.logit_norm == cfg.logit_norm);
  CHECK(back.seed == cfg.seed);
}

TEST_CASE("cosine_lr endpoints and midpoint") {
  CHECK(cosine_lr(0, 100, 0.5) == doctest::Approx(0.5));
  CHECK(cosine_lr(50, 100, 0.5) == doctest::Approx(0.25));
  // Monotone decreasing over the run; near zero by the final epoch.
  double prev = 1.0;
  for (int e = 0; e < 100; ++e) {
    double lr = cosine_lr(e, 100, 0.5);
    CHECK(lr < prev);
    prev = lr;
  }
  CHECK(prev < 0.001);
  CHECK_THROWS_AS(cosine_lr(100, 100, 0.5), Error);
}

TEST_CASE("sgd_step: plain gradient step when momentum and decay are zero") {
  MlpParams p;
  p.layers.push_back({Matrix::Constant(1, 1, 1.0), Vector::Zero(1)});
  MlpGrads g = MlpGrads::zeros_like(p);
  g.layers[0].W(0, 0) = 0.5;
  SgdState st{MlpGrads::zeros_like(p)};
  sgd_step(p, g, 0.1, 0.0, 0.0, st);
  CHECK(p.layers[0].W(0, 0) == doctest::Approx(0.95));

  // With momentum the previous velocity keeps contributing.
  sgd_step(p, g, 0.1, 0.9, 0.0, st);
  CHECK(p.layers[0].W(0, 0) == doctest::Approx(0.95 - 0.1 * (0.9 * 0.5 + 0.5)));
}

TEST_CASE("train: history length and staged r_open activation") {
  TrainResult r = train(toy_data(1), quick_config(1));
  REQUIRE(r.history.epochs.size() == 6);
  for (int e = 0; e < 3; ++e) {
    CHECK(r.history.epochs[static_cast<std::size_t>(e)].r_open == 0.0);
    CHECK(r.history.epochs[static_cast<std::size_t>(e)].n_outliers == 0);
  }
  bool any_outliers = false;
  for (int e = 3; e < 6; ++e)
    any_outliers |= r.history.epochs[static_cast<std::size_t>(e)].n_outliers > 0;
  CHECK(any_outliers);
}

TEST_CASE("train: loss descent on the separable task") {
  TrainConfig cfg = quick_config(2);
  cfg.epochs = 11;
  cfg.warmup_epochs = 8;
  TrainResult r = train(toy_data(2), cfg);
  CHECK(r.history.epochs[10].r_closed < r.history.epochs[0].r_closed);
}

TEST_CASE("train is deterministic in the config seed") {
  TrainResult a = train(toy_data(3), quick_config(7));
  TrainResult b = train(toy_data(3), quick_config(7));
  CHECK(mlp_flatten(a.model.encoder) == mlp_flatten(b.model.encoder));
  CHECK(mlp_flatten(a.model.phi) == mlp_flatten(b.model.phi));
  CHECK(a.model.prototypes.mu == b.model.prototypes.mu);
  TrainResult c = train(toy_data(3), quick_config(8));
  CHECK(mlp_flatten(a.model.encoder) != mlp_flatten(c.model.encoder));
}

TEST_CASE("train validates its config") {
  TrainConfig cfg = quick_config(1);
  cfg.warmup_epochs = cfg.epochs;  // must be strictly less
  CHECK_THROWS_AS(train(toy_data(1), cfg), Error);
  cfg = quick_config(1);
  cfg.tau = 0.0;
  CHECK_THROWS_AS(train(toy_data(1), cfg), Error);
}

TEST_CASE("save_history: header and row count") {
  TempDir dir;
  TrainResult r = train(toy_data(4), quick_config(4));
  save_history(r.history, dir / "h.csv");
  std::ifstream f(dir / "h.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,r_closed,r_open,lr,n_outliers,id_acc");
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 6);
}

TEST_CASE("id_accuracy is within [0, 1] and high after training") {
  TrainConfig cfg = quick_config(5);
  cfg.epochs = 30;
  cfg.warmup_epochs = 25;
  cfg.encoder_hidden = 32;
  SyntheticSpec spec;
  spec.seed = 5;
  spec.n_per_class = 120;
  spec.noise = 0.2;
  EmbeddingSet data = gen_synthetic(spec).id_train;
  TrainResult r = train(data, cfg);
  double acc = id_accuracy(r.model, data);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(acc > 0.9);
}
