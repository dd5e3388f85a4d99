#include "npos/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace npos {

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::InvalidSpec, "epochs must be >= 0");
  if (batch_size < 1) {
    throw Error(ErrorCode::InvalidSpec, "batch_size must be >= 1");
  }
  if (lr_closed <= 0 || lr_open <= 0) {
    throw Error(ErrorCode::InvalidSpec, "learning rates must be > 0");
  }
  if (momentum < 0 || momentum >= 1) {
    throw Error(ErrorCode::InvalidSpec, "momentum must be in [0, 1)");
  }
  if (weight_decay < 0) {
    throw Error(ErrorCode::InvalidSpec, "weight_decay must be >= 0");
  }
  if (alpha < 0) throw Error(ErrorCode::InvalidSpec, "alpha must be >= 0");
  if (epochs > 0 && warmup_epochs >= epochs) {
    throw Error(ErrorCode::InvalidSpec, "warmup_epochs must be < epochs");
  }
  if (tau <= 0) throw Error(ErrorCode::InvalidSpec, "tau must be > 0");
  if (gamma < 0 || gamma > 1) {
    throw Error(ErrorCode::InvalidSpec, "gamma must be in [0, 1]");
  }
  if (queue_capacity < 1) {
    throw Error(ErrorCode::InvalidSpec, "queue_capacity must be >= 1");
  }
  if (synth_every < 1) {
    throw Error(ErrorCode::InvalidSpec, "synth_every must be >= 1");
  }
  if (encoder_hidden < 1 || embed_dim < 1) {
    throw Error(ErrorCode::InvalidSpec, "encoder dims must be >= 1");
  }
  synthesis.validate();
}

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(ErrorCode::BadValue, "expected boolean, got '" + v + "'");
}

double parse_double(const std::string& v) {
  std::size_t pos = 0;
  double x;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw Error(ErrorCode::BadValue, "expected number, got '" + v + "'");
  }
  if (pos != v.size()) {
    throw Error(ErrorCode::BadValue, "expected number, got '" + v + "'");
  }
  return x;
}

int parse_int(const std::string& v) {
  std::size_t pos = 0;
  long x;
  try {
    x = std::stol(v, &pos);
  } catch (const std::exception&) {
    throw Error(ErrorCode::BadValue, "expected integer, got '" + v + "'");
  }
  if (pos != v.size()) {
    throw Error(ErrorCode::BadValue, "expected integer, got '" + v + "'");
  }
  return static_cast<int>(x);
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

void apply_key(TrainConfig& cfg, const std::string& key,
               const std::string& value) {
  if (key == "epochs") cfg.epochs = parse_int(value);
  else if (key == "batch_size") cfg.batch_size = parse_int(value);
  else if (key == "lr_closed") cfg.lr_closed = parse_double(value);
  else if (key == "lr_open") cfg.lr_open = parse_double(value);
  else if (key == "momentum") cfg.momentum = parse_double(value);
  else if (key == "weight_decay") cfg.weight_decay = parse_double(value);
  else if (key == "lr_schedule") {
    if (value == "cosine") cfg.lr_schedule = LrSchedule::Cosine;
    else if (value == "constant") cfg.lr_schedule = LrSchedule::Constant;
    else throw Error(ErrorCode::BadValue, "bad lr_schedule '" + value + "'");
  }
  else if (key == "alpha") cfg.alpha = parse_double(value);
  else if (key == "warmup_epochs") cfg.warmup_epochs = parse_int(value);
  else if (key == "tau") cfg.tau = parse_double(value);
  else if (key == "gamma") cfg.gamma = parse_double(value);
  else if (key == "queue_capacity") cfg.queue_capacity = parse_int(value);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(
      std::stoull(value));
  else if (key == "synth_every") cfg.synth_every = parse_int(value);
  else if (key == "encoder_hidden") cfg.encoder_hidden = parse_int(value);
  else if (key == "embed_dim") cfg.embed_dim = parse_int(value);
  else if (key == "logit_norm") cfg.logit_norm = parse_bool(value);
  else if (key == "k") cfg.synthesis.k = parse_int(value);
  else if (key == "m") cfg.synthesis.m = parse_int(value);
  else if (key == "p") cfg.synthesis.p = parse_int(value);
  else if (key == "sigma2") cfg.synthesis.sigma2 = parse_double(value);
  else if (key == "accept_per_boundary") {
    cfg.synthesis.accept_per_boundary = parse_int(value);
  }
  else if (key == "filter_mode") {
    if (value == "select-top") cfg.synthesis.filter_mode = FilterMode::SelectTop;
    else if (value == "threshold") {
      cfg.synthesis.filter_mode = FilterMode::Threshold;
    }
    else throw Error(ErrorCode::BadValue, "bad filter_mode '" + value + "'");
  }
  else if (key == "beta_quantile") {
    cfg.synthesis.beta_quantile = parse_double(value);
  }
  else if (key == "density_mode") {
    if (value == "class-conditional") {
      cfg.synthesis.density_mode = DensityMode::ClassConditional;
    } else if (value == "class-agnostic") {
      cfg.synthesis.density_mode = DensityMode::ClassAgnostic;
    } else {
      throw Error(ErrorCode::BadValue, "bad density_mode '" + value + "'");
    }
  }
  else if (key == "renormalize_candidates") {
    cfg.synthesis.renormalize_candidates = parse_bool(value);
  }
  else {
    throw Error(ErrorCode::UnknownKey, "unknown key '" + key + "'");
  }
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::BadValue,
                  "line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      apply_key(cfg, key, value);
    } catch (const Error& e) {
      throw Error(e.code(),
                  "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "epochs = " << cfg.epochs << "\n"
     << "batch_size = " << cfg.batch_size << "\n"
     << "lr_closed = " << cfg.lr_closed << "\n"
     << "lr_open = " << cfg.lr_open << "\n"
     << "momentum = " << cfg.momentum << "\n"
     << "weight_decay = " << cfg.weight_decay << "\n"
     << "lr_schedule = "
     << (cfg.lr_schedule == LrSchedule::Cosine ? "cosine" : "constant") << "\n"
     << "alpha = " << cfg.alpha << "\n"
     << "warmup_epochs = " << cfg.warmup_epochs << "\n"
     << "tau = " << cfg.tau << "\n"
     << "gamma = " << cfg.gamma << "\n"
     << "queue_capacity = " << cfg.queue_capacity << "\n"
     << "seed = " << cfg.seed << "\n"
     << "synth_every = " << cfg.synth_every << "\n"
     << "encoder_hidden = " << cfg.encoder_hidden << "\n"
     << "embed_dim = " << cfg.embed_dim << "\n"
     << "logit_norm = " << (cfg.logit_norm ? "true" : "false") << "\n"
     << "k = " << cfg.synthesis.k << "\n"
     << "m = " << cfg.synthesis.m << "\n"
     << "p = " << cfg.synthesis.p << "\n"
     << "sigma2 = " << cfg.synthesis.sigma2 << "\n"
     << "accept_per_boundary = " << cfg.synthesis.accept_per_boundary << "\n"
     << "filter_mode = "
     << (cfg.synthesis.filter_mode == FilterMode::SelectTop ? "select-top"
                                                            : "threshold")
     << "\n"
     << "beta_quantile = " << cfg.synthesis.beta_quantile << "\n"
     << "density_mode = "
     << (cfg.synthesis.density_mode == DensityMode::ClassConditional
             ? "class-conditional"
             : "class-agnostic")
     << "\n"
     << "renormalize_candidates = "
     << (cfg.synthesis.renormalize_candidates ? "true" : "false") << "\n";
  return os.str();
}

void sgd_step(MlpParams& params, const MlpGrads& grads, double lr,
              double momentum, double weight_decay, SgdState& state) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (!grads.layers[l].W.allFinite() || !grads.layers[l].b.allFinite()) {
      throw Error(ErrorCode::NonFiniteGradient,
                  "non-finite gradient in layer " + std::to_string(l));
    }
    auto& v = state.velocity.layers[l];
    v.W = momentum * v.W + grads.layers[l].W + weight_decay * params.layers[l].W;
    v.b = momentum * v.b + grads.layers[l].b + weight_decay * params.layers[l].b;
    params.layers[l].W -= lr * v.W;
    params.layers[l].b -= lr * v.b;
  }
}

double cosine_lr(int epoch, int total_epochs, double base_lr) {
  if (epoch < 0 || epoch >= total_epochs) {
    throw Error(ErrorCode::InvalidSpec, "epoch out of range");
  }
  return base_lr * 0.5 *
         (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                         static_cast<double>(total_epochs)));
}

namespace {

// z = h / ||h||: dL/dh = (dz - (dz . u) u) / ||h|| with u = z.
Matrix backprop_normalize(const Matrix& h, const Matrix& z, const Matrix& dz) {
  Matrix dh(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    double n = h.row(i).norm();
    Vector u = z.row(i).transpose();
    Vector g = dz.row(i).transpose();
    dh.row(i) = ((g - g.dot(u) * u) / n).transpose();
  }
  return dh;
}

Matrix encode_normalized(const MlpParams& encoder, const Matrix& x,
                         MlpCache* cache, Matrix* raw_out) {
  Matrix h = mlp_forward(encoder, x, cache);
  Matrix z(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    double n = h.row(i).norm();
    if (n == 0.0) {
      throw Error(ErrorCode::ZeroVector, "encoder produced a zero embedding");
    }
    z.row(i) = h.row(i) / n;
  }
  if (raw_out) *raw_out = std::move(h);
  return z;
}

}  // namespace

double id_accuracy(const Model& model, const EmbeddingSet& data) {
  if (data.rows() == 0 || !data.has_labels()) return 0.0;
  Matrix z = encode_normalized(model.encoder, data.data, nullptr, nullptr);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Vector f = cosine_logits(z.row(i).transpose(), model.prototypes);
    Eigen::Index pred;
    f.maxCoeff(&pred);
    if (pred == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(z.rows());
}

TrainResult train(const EmbeddingSet& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (!data.has_labels()) {
    throw Error(ErrorCode::MissingLabels, "training data must be labeled");
  }
  std::int32_t num_classes = data.num_classes();
  if (num_classes < 1) {
    throw Error(ErrorCode::MissingLabels, "no labeled rows");
  }

  Rng init_rng(derive_seed(cfg.seed, 1));
  Rng order_rng(derive_seed(cfg.seed, 2));

  TrainResult result;
  Model& model = result.model;
  model.encoder = mlp_init(
      {data.dim(), cfg.encoder_hidden, cfg.embed_dim}, init_rng);
  model.phi = mlp_init({cfg.embed_dim, 16, 1}, init_rng);
  model.prototypes =
      prototypes_init(num_classes, cfg.embed_dim, cfg.gamma, init_rng);
  model.tau = cfg.tau;
  model.logit_norm = cfg.logit_norm;

  // 10% held-out split for the accuracy history.
  std::vector<std::size_t> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), 0);
  order_rng.shuffle(order);
  std::size_t holdout_n = order.size() / 10;
  std::vector<std::size_t> train_idx(order.begin(),
                                     order.end() - static_cast<std::ptrdiff_t>(
                                         holdout_n));
  EmbeddingSet holdout;
  holdout.data.resize(static_cast<Eigen::Index>(holdout_n), data.dim());
  holdout.labels.resize(holdout_n);
  for (std::size_t i = 0; i < holdout_n; ++i) {
    std::size_t src = order[train_idx.size() + i];
    holdout.data.row(static_cast<Eigen::Index>(i)) =
        data.data.row(static_cast<Eigen::Index>(src));
    holdout.labels[i] = data.labels[src];
  }

  std::vector<ClassQueue> queues;
  for (std::int32_t c = 0; c < num_classes; ++c) {
    queues.emplace_back(static_cast<std::size_t>(cfg.queue_capacity),
                        cfg.embed_dim);
  }

  SgdState enc_state{MlpGrads::zeros_like(model.encoder)};
  SgdState phi_state{MlpGrads::zeros_like(model.phi)};

  OutlierBatch cached_outliers;
  bool have_cached = false;
  std::uint64_t global_step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr_c = cfg.lr_schedule == LrSchedule::Cosine
                      ? cosine_lr(epoch, cfg.epochs, cfg.lr_closed)
                      : cfg.lr_closed;
    double lr_o = cfg.lr_schedule == LrSchedule::Cosine
                      ? cosine_lr(epoch, cfg.epochs, cfg.lr_open)
                      : cfg.lr_open;
    bool open_active = epoch >= cfg.warmup_epochs;

    order_rng.shuffle(train_idx);

    double sum_rc = 0.0, sum_ro = 0.0;
    std::size_t batches = 0, outliers_used = 0;

    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(
          train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Eigen::Index b = static_cast<Eigen::Index>(end - start);
      Matrix x(b, data.dim());
      std::vector<std::int32_t> labels(static_cast<std::size_t>(b));
      for (Eigen::Index i = 0; i < b; ++i) {
        std::size_t src = train_idx[start + static_cast<std::size_t>(i)];
        x.row(i) = data.data.row(static_cast<Eigen::Index>(src));
        labels[static_cast<std::size_t>(i)] = data.labels[src];
      }

      MlpCache enc_cache;
      Matrix h;
      Matrix z = encode_normalized(model.encoder, x, &enc_cache, &h);

      queue_update(queues, z, labels);

      RClosedOutput rc =
          r_closed(z, labels, model.prototypes, cfg.tau, cfg.logit_norm);

      Matrix dz = rc.d_z;
      double ro_value = 0.0;
      MlpGrads phi_grads = MlpGrads::zeros_like(model.phi);
      bool have_open = false;
      if (open_active) {
        if (!have_cached ||
            global_step % static_cast<std::uint64_t>(cfg.synth_every) == 0) {
          cached_outliers =
              synthesize(queues, cfg.synthesis, cfg.seed, global_step);
          have_cached = true;
        }
        if (cached_outliers.rows() > 0) {
          ROpenOutput ro = r_open(model.phi, cached_outliers.vectors, z);
          ro_value = ro.value;
          dz += cfg.alpha * ro.d_id;
          phi_grads.add_scaled(ro.phi_grads, cfg.alpha);
          have_open = true;
          outliers_used += static_cast<std::size_t>(cached_outliers.rows());
        }
      }

      Matrix dh = backprop_normalize(h, z, dz);
      MlpGrads enc_grads = MlpGrads::zeros_like(model.encoder);
      mlp_backward(model.encoder, enc_cache, dh, enc_grads);

      sgd_step(model.encoder, enc_grads, lr_c, cfg.momentum, cfg.weight_decay,
               enc_state);
      if (have_open) {
        sgd_step(model.phi, phi_grads, lr_o, cfg.momentum, cfg.weight_decay,
                 phi_state);
      }

      prototype_ema_update(model.prototypes, z, labels);

      sum_rc += rc.value;
      sum_ro += ro_value;
      ++batches;
      ++global_step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.r_closed = batches ? sum_rc / static_cast<double>(batches) : 0.0;
    rec.r_open = batches ? sum_ro / static_cast<double>(batches) : 0.0;
    rec.lr = lr_c;
    rec.n_outliers = outliers_used;
    rec.id_acc = holdout_n > 0 ? id_accuracy(model, holdout) : 0.0;
    result.history.epochs.push_back(rec);
  }

  return result;
}

void save_history(const TrainHistory& history,
                  const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  os << "epoch,r_closed,r_open,lr,n_outliers,id_acc\n";
  char buf[128];
  for (const auto& r : history.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%zu,%.10g\n",
                  r.epoch, r.r_closed, r.r_open, r.lr, r.n_outliers, r.id_acc);
    os << buf;
  }
  if (!os) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

}  // namespace npos
