#pragma once

#include <filesystem>
#include <string>

#include "npos/losses.hpp"
#include "npos/synth.hpp"

namespace npos {

enum class LrSchedule { Cosine, Constant };

struct TrainConfig {
  int epochs = 500;
  int batch_size = 256;
  double lr_closed = 0.5;
  double lr_open = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  double alpha = 0.1;
  int warmup_epochs = 200;  // epoch at which r_open activates
  double tau = 0.1;
  double gamma = 0.95;
  int queue_capacity = 600;
  SynthesisConfig synthesis;
  std::uint64_t seed = 0;
  int synth_every = 1;        // synthesize every n-th batch, reuse between
  int encoder_hidden = 64;
  int embed_dim = 16;
  bool logit_norm = true;

  void validate() const;
};

// `key = value` lines, '#' comments, unknown keys rejected, missing keys
// keep their defaults.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
std::string format_config(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double r_closed = 0.0;
  double r_open = 0.0;
  double lr = 0.0;
  std::size_t n_outliers = 0;
  double id_acc = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

void save_history(const TrainHistory& history,
                  const std::filesystem::path& path);

struct TrainResult {
  Model model;
  TrainHistory history;
};

// Full training loop: queue maintenance, staged synthesis, joint loss,
// SGD with momentum + weight decay, EMA prototypes. Deterministic in cfg.
TrainResult train(const EmbeddingSet& data, const TrainConfig& cfg);

// Momentum SGD state and step:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
struct SgdState {
  MlpGrads velocity;
};

void sgd_step(MlpParams& params, const MlpGrads& grads, double lr,
              double momentum, double weight_decay, SgdState& state);

double cosine_lr(int epoch, int total_epochs, double base_lr);

// Argmax-of-cosine-logits accuracy of a model's encoder on labeled inputs.
double id_accuracy(const Model& model, const EmbeddingSet& data);

}  // namespace npos
