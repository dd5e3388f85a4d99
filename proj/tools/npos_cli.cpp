// npos: non-parametric outlier synthesis toolkit.
//
// Subcommands: gen, train, synth, score, eval, knn, gradcheck.
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
// failure.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "npos/checks.hpp"
#include "npos/detect.hpp"
#include "npos/trainer.hpp"

namespace fs = std::filesystem;
using namespace npos;

namespace {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector:
    case ErrorCode::ZeroLogitNorm:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::NotEnoughNeighbors:
    case ErrorCode::MTooLarge:
      return 3;
    default:
      return 2;
  }
}

FileFormat format_for(const fs::path& path) {
  return path.extension() == ".csv" ? FileFormat::Csv : FileFormat::Binary;
}

void resolve_threads(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv("NPOS_THREADS")) {
      threads = std::atoi(env);
    }
  }
  if (threads <= 0) threads = 1;
  set_max_threads(threads);
  std::cerr << "threads = " << threads << "\n";
}

SyntheticKind parse_kind(const std::string& s) {
  if (s == "gaussian-mixture") return SyntheticKind::GaussianMixture;
  if (s == "two-moons") return SyntheticKind::TwoMoons;
  if (s == "rings") return SyntheticKind::Rings;
  throw Error(ErrorCode::InvalidSpec, "unknown kind '" + s + "'");
}

OodKind parse_ood_kind(const std::string& s) {
  if (s == "ring") return OodKind::Ring;
  if (s == "uniform-shell") return OodKind::UniformShell;
  if (s == "shifted-mixture") return OodKind::ShiftedMixture;
  throw Error(ErrorCode::InvalidSpec, "unknown ood kind '" + s + "'");
}

struct GenArgs {
  std::string kind = "gaussian-mixture";
  int classes = 3;
  int n = 500;
  int d = 2;
  std::string ood_kind = "ring";
  double noise = 0.5;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "binary";
};

int run_gen(const GenArgs& args) {
  SyntheticSpec spec;
  spec.kind = parse_kind(args.kind);
  spec.num_classes = args.classes;
  spec.n_per_class = args.n;
  spec.d = args.d;
  spec.ood_kind = parse_ood_kind(args.ood_kind);
  spec.noise = args.noise;
  spec.seed = args.seed;
  spec.validate();

  std::cerr << "gen: kind = " << args.kind << ", classes = " << args.classes
            << ", n = " << args.n << ", d = " << args.d
            << ", ood-kind = " << args.ood_kind << ", noise = " << args.noise
            << ", seed = " << args.seed << ", format = " << args.format
            << "\n";

  SyntheticData data = gen_synthetic(spec);
  fs::create_directories(args.out);
  FileFormat fmt =
      args.format == "csv" ? FileFormat::Csv : FileFormat::Binary;
  std::string ext = fmt == FileFormat::Csv ? ".csv" : ".npos";
  save_embeddings(data.id_train, fs::path(args.out) / ("id_train" + ext), fmt);
  save_embeddings(data.id_test, fs::path(args.out) / ("id_test" + ext), fmt);
  save_embeddings(data.ood_test, fs::path(args.out) / ("ood_test" + ext), fmt);
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::int64_t seed = -1;
  int threads = 0;
};

int run_train(const TrainArgs& args) {
  resolve_threads(args.threads);
  TrainConfig cfg =
      args.config.empty() ? TrainConfig{} : load_config(args.config);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  std::cerr << format_config(cfg);

  fs::path train_path = fs::path(args.data) / "id_train.npos";
  if (!fs::exists(train_path)) train_path = args.data;  // direct file
  EmbeddingSet data = load_embeddings(train_path, format_for(train_path));

  TrainResult result = train(data, cfg);
  fs::create_directories(args.out);
  save_checkpoint(result.model, fs::path(args.out) / "model.bin");
  save_history(result.history, fs::path(args.out) / "history.csv");
  if (!result.history.epochs.empty()) {
    std::cerr << "final id_acc = " << result.history.epochs.back().id_acc
              << "\n";
  }
  return 0;
}

struct SynthArgs {
  std::string data;
  std::string out;
  SynthesisConfig cfg;
  std::string filter_mode = "select-top";
  std::string density_mode = "class-conditional";
  int queue_capacity = 600;
  std::uint64_t seed = 0;
  int threads = 0;
};

int run_synth(const SynthArgs& args) {
  resolve_threads(args.threads);
  SynthesisConfig cfg = args.cfg;
  cfg.filter_mode = args.filter_mode == "threshold" ? FilterMode::Threshold
                                                    : FilterMode::SelectTop;
  cfg.density_mode = args.density_mode == "class-agnostic"
                         ? DensityMode::ClassAgnostic
                         : DensityMode::ClassConditional;
  cfg.validate();
  std::cerr << "synth: k = " << cfg.k << ", m = " << cfg.m << ", p = " << cfg.p
            << ", sigma2 = " << cfg.sigma2
            << ", accept = " << cfg.accept_per_boundary
            << ", filter-mode = " << args.filter_mode
            << ", density-mode = " << args.density_mode
            << ", queue-capacity = " << args.queue_capacity
            << ", seed = " << args.seed << "\n";

  EmbeddingSet set = load_embeddings(args.data, format_for(args.data));
  if (!set.has_labels()) {
    throw Error(ErrorCode::MissingLabels, "synth input must be labeled");
  }
  if (!set.normalized) l2_normalize_rows(set);

  std::vector<ClassQueue> queues;
  for (std::int32_t c = 0; c < set.num_classes(); ++c) {
    queues.emplace_back(static_cast<std::size_t>(args.queue_capacity),
                        set.dim());
  }
  queue_update(queues, set.data, set.labels);
  OutlierBatch batch = synthesize(queues, cfg, args.seed);

  std::ofstream os(args.out);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + args.out);
  for (Eigen::Index j = 0; j < set.dim(); ++j) {
    os << (j ? "," : "") << "dim" << j;
  }
  os << ",source_class,knn_dist\n";
  char buf[64];
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    for (Eigen::Index j = 0; j < set.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.10g", batch.vectors(i, j));
      os << (j ? "," : "") << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%d,%.10g\n",
                  batch.source_class[static_cast<std::size_t>(i)],
                  batch.knn_dist[static_cast<std::size_t>(i)]);
    os << buf;
  }
  std::cerr << "synthesized " << batch.rows() << " outliers\n";
  return 0;
}

struct ScoreArgs {
  std::string model;
  std::string id_file;
  std::string ood_file;
  std::string out;
  std::string method = "npos";
  std::string train_file;
  int k = 300;
  int threads = 0;
};

int run_score(const ScoreArgs& args) {
  resolve_threads(args.threads);
  std::cerr << "score: method = " << args.method << ", id = " << args.id_file
            << ", ood = " << args.ood_file << "\n";

  ScoreSet scores;
  if (args.method == "npos") {
    if (args.model.empty()) {
      throw Error(ErrorCode::InvalidSpec, "--model required for npos scoring");
    }
    Model model = load_checkpoint(args.model);
    auto score_file = [&](const std::string& file) {
      EmbeddingSet set = load_embeddings(file, format_for(file));
      std::vector<double> out;
      Matrix h = mlp_forward(model.encoder, set.data);
      for (Eigen::Index i = 0; i < h.rows(); ++i) {
        out.push_back(npos_score(model, h.row(i).transpose()));
      }
      return out;
    };
    scores.id_scores = score_file(args.id_file);
    scores.ood_scores = score_file(args.ood_file);
  } else if (args.method == "knn") {
    if (args.train_file.empty()) {
      throw Error(ErrorCode::InvalidSpec, "--train required for knn scoring");
    }
    EmbeddingSet train =
        load_embeddings(args.train_file, format_for(args.train_file));
    auto score_file = [&](const std::string& file) {
      EmbeddingSet set = load_embeddings(file, format_for(file));
      std::vector<double> out;
      for (Eigen::Index i = 0; i < set.rows(); ++i) {
        out.push_back(knn_score(set.data.row(i).transpose(), train.data,
                                args.k));
      }
      return out;
    };
    scores.id_scores = score_file(args.id_file);
    scores.ood_scores = score_file(args.ood_file);
  } else {
    throw Error(ErrorCode::InvalidSpec, "unknown method '" + args.method + "'");
  }
  save_scores(scores, args.out);
  return 0;
}

struct EvalArgs {
  std::string id_scores;
  std::string ood_scores;
  std::string scores;
  std::string out;
  double tpr = 0.95;
  double id_acc = -1.0;
};

int run_eval(const EvalArgs& args) {
  std::cerr << "eval: tpr = " << args.tpr << "\n";
  ScoreSet set;
  if (!args.scores.empty()) {
    // Combined score,label file.
    std::ifstream is(args.scores);
    if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + args.scores);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::size_t comma = line.find(',');
      if (comma == std::string::npos) {
        throw Error(ErrorCode::BadValue, "bad score row '" + line + "'");
      }
      double s = std::stod(line.substr(0, comma));
      std::string label = line.substr(comma + 1);
      if (label == "id") set.id_scores.push_back(s);
      else if (label == "ood") set.ood_scores.push_back(s);
      else throw Error(ErrorCode::BadValue, "bad label '" + label + "'");
    }
  } else {
    set.id_scores = load_scores_csv(args.id_scores);
    set.ood_scores = load_scores_csv(args.ood_scores);
  }
  std::optional<double> id_acc;
  if (args.id_acc >= 0.0) id_acc = args.id_acc;
  MetricsReport report = compute_metrics(set, args.tpr, id_acc);
  save_metrics(report, args.out);
  std::cerr << "fpr95 = " << report.fpr95 << ", auroc = " << report.auroc
            << ", aupr = " << report.aupr << ", lambda = " << report.lambda
            << "\n";
  return 0;
}

struct KnnArgs {
  std::string query;
  std::string ref;
  int k = 1;
  std::string mode = "class-agnostic";
  bool exclude_self = false;
  std::string out;
  int threads = 0;
};

int run_knn(const KnnArgs& args) {
  resolve_threads(args.threads);
  std::cerr << "knn: k = " << args.k << ", mode = " << args.mode
            << ", exclude-self = " << (args.exclude_self ? "true" : "false")
            << "\n";
  EmbeddingSet ref = load_embeddings(args.ref, format_for(args.ref));
  EmbeddingSet query = args.query == args.ref
                           ? ref
                           : load_embeddings(args.query, format_for(args.query));
  KnnParams params;
  params.k = args.k;
  params.mode = args.mode == "class-conditional" ? DensityMode::ClassConditional
                                                 : DensityMode::ClassAgnostic;
  params.exclude_self = args.exclude_self;
  std::vector<double> dists = knn_distances_batch(
      query.data, ref, params, query.has_labels() ? &query.labels : nullptr);

  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!args.out.empty()) {
    file.open(args.out);
    if (!file) throw Error(ErrorCode::IoFailure, "cannot open " + args.out);
    os = &file;
  }
  *os << "knn_dist\n";
  char buf[64];
  for (double d : dists) {
    std::snprintf(buf, sizeof(buf), "%.12g\n", d);
    *os << buf;
  }
  return 0;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  int trials = 20;
  double epsilon = 1e-5;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradcheckArgs& args) {
  std::cerr << "gradcheck: trials = " << args.trials
            << ", epsilon = " << args.epsilon
            << ", tolerance = " << args.tolerance << ", seed = " << args.seed
            << "\n";
  double worst = 0.0;
  for (int t = 0; t < args.trials; ++t) {
    std::uint64_t s = derive_seed(args.seed, static_cast<std::uint64_t>(t));
    worst = std::max(worst, check_r_open_grads(s, args.epsilon));
    worst = std::max(worst, check_r_closed_grads(s, args.epsilon, true));
    worst = std::max(worst, check_r_closed_grads(s, args.epsilon, false));
  }
  std::cout << "max relative error = " << worst << "\n";
  if (worst > args.tolerance) {
    std::cerr << "gradient check FAILED (tolerance " << args.tolerance
              << ")\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-parametric outlier synthesis toolkit", "npos"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic ID/OOD benchmark");
  gen_cmd->add_option("--kind", gen.kind,
                      "ID kind: gaussian-mixture, two-moons, rings");
  gen_cmd->add_option("--classes", gen.classes, "Number of ID classes");
  gen_cmd->add_option("--n", gen.n, "Samples per class");
  gen_cmd->add_option("--d", gen.d, "Embedding dimension");
  gen_cmd->add_option("--ood-kind", gen.ood_kind,
                      "OOD kind: ring, uniform-shell, shifted-mixture");
  gen_cmd->add_option("--noise", gen.noise, "Noise level");
  gen_cmd->add_option("--seed", gen.seed, "RNG seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--format", gen.format, "File format: binary, csv");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train an NPOS model");
  train_cmd->add_option("--config", train_args.config,
                        "Training config file (key = value lines)");
  train_cmd->add_option("--data", train_args.data,
                        "Data directory (id_train.npos) or embedding file")
      ->required();
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();
  train_cmd->add_option("--seed", train_args.seed,
                        "Seed override (wins over config)");
  train_cmd->add_option("--threads", train_args.threads, "Worker thread cap");

  SynthArgs synth;
  auto* synth_cmd =
      app.add_subcommand("synth", "Synthesize outliers and dump them as CSV");
  synth_cmd->add_option("--data", synth.data, "Labeled embedding file")
      ->required();
  synth_cmd->add_option("--out", synth.out, "Output CSV")->required();
  synth_cmd->add_option("--k", synth.cfg.k, "k-NN order");
  synth_cmd->add_option("--m", synth.cfg.m, "Boundary samples per class");
  synth_cmd->add_option("--p", synth.cfg.p, "Candidates per boundary point");
  synth_cmd->add_option("--sigma2", synth.cfg.sigma2, "Gaussian variance");
  synth_cmd->add_option("--accept", synth.cfg.accept_per_boundary,
                        "Accepted outliers per boundary point");
  synth_cmd->add_option("--filter-mode", synth.filter_mode,
                        "select-top or threshold");
  synth_cmd->add_option("--beta-quantile", synth.cfg.beta_quantile,
                        "ID distance quantile for threshold mode");
  synth_cmd->add_option("--density-mode", synth.density_mode,
                        "class-conditional or class-agnostic");
  synth_cmd->add_flag("--renormalize", synth.cfg.renormalize_candidates,
                      "Re-normalize candidates before filtering");
  synth_cmd->add_option("--queue-capacity", synth.queue_capacity,
                        "Per-class queue capacity");
  synth_cmd->add_option("--seed", synth.seed, "RNG seed");
  synth_cmd->add_option("--threads", synth.threads, "Worker thread cap");

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "Score ID and OOD embeddings");
  score_cmd->add_option("--model", score.model, "Model checkpoint");
  score_cmd->add_option("--id", score.id_file, "ID embedding file")->required();
  score_cmd->add_option("--ood", score.ood_file, "OOD embedding file")
      ->required();
  score_cmd->add_option("--out", score.out, "Output scores.csv")->required();
  score_cmd->add_option("--method", score.method, "npos or knn");
  score_cmd->add_option("--train", score.train_file,
                        "Training embeddings (knn method)");
  score_cmd->add_option("--k", score.k, "k for the knn method");
  score_cmd->add_option("--threads", score.threads, "Worker thread cap");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Compute OOD detection metrics");
  eval_cmd->add_option("--id-scores", eval.id_scores, "ID scores CSV");
  eval_cmd->add_option("--ood-scores", eval.ood_scores, "OOD scores CSV");
  eval_cmd->add_option("--scores", eval.scores,
                       "Combined score,label CSV (alternative)");
  eval_cmd->add_option("--out", eval.out, "Output metrics.csv")->required();
  eval_cmd->add_option("--tpr", eval.tpr, "ID true positive rate target");
  eval_cmd->add_option("--id-acc", eval.id_acc,
                       "ID accuracy to record in metrics.csv");

  KnnArgs knn;
  auto* knn_cmd = app.add_subcommand("knn", "Compute k-NN distances");
  knn_cmd->add_option("--query", knn.query, "Query embedding file")->required();
  knn_cmd->add_option("--ref", knn.ref, "Reference embedding file")->required();
  knn_cmd->add_option("--k", knn.k, "k-NN order");
  knn_cmd->add_option("--mode", knn.mode,
                      "class-agnostic or class-conditional");
  knn_cmd->add_flag("--exclude-self", knn.exclude_self,
                    "Skip reference row i for query i");
  knn_cmd->add_option("--out", knn.out, "Output CSV (default stdout)");
  knn_cmd->add_option("--threads", knn.threads, "Worker thread cap");

  GradcheckArgs gradcheck;
  auto* gc_cmd =
      app.add_subcommand("gradcheck", "Verify analytic loss gradients");
  gc_cmd->add_option("--seed", gradcheck.seed, "RNG seed");
  gc_cmd->add_option("--trials", gradcheck.trials, "Random instances");
  gc_cmd->add_option("--epsilon", gradcheck.epsilon,
                     "Finite difference step");
  gc_cmd->add_option("--tolerance", gradcheck.tolerance,
                     "Max relative error allowed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(train_args);
    if (*synth_cmd) return run_synth(synth);
    if (*score_cmd) return run_score(score);
    if (*eval_cmd) return run_eval(eval);
    if (*knn_cmd) return run_knn(knn);
    if (*gc_cmd) return run_gradcheck(gradcheck);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
