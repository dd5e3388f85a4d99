#pragma once

#include <filesystem>
#include <optional>

#include "npos/model.hpp"

namespace npos {

// Convention throughout: higher score means more in-distribution.
struct ScoreSet {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
};

struct MetricsReport {
  double fpr95 = 0.0;
  double auroc = 0.0;
  double aupr = 0.0;
  double lambda = 0.0;
  std::optional<double> id_acc;
};

// Maximum softmax probability over temperature-scaled cosine logits.
double npos_score(const Model& model, const Vector& z);

// KNN-distance comparator, sign-flipped to the higher-is-ID convention.
double knn_score(const Vector& z, const Matrix& train_embeddings, int k);

// lambda = ascending-sorted id_scores[floor((1 - tpr) * n)]; scores equal
// to lambda count as ID, so #{s >= lambda}/n >= tpr.
double choose_threshold(const std::vector<double>& id_scores, double tpr);

double fpr_at_tpr(const ScoreSet& scores, double tpr = 0.95);

// Mann-Whitney form: (#(id > ood) + 0.5 #(id = ood)) / (n_id * n_ood).
double auroc(const ScoreSet& scores);

// Area under the precision-recall curve, ID positive, descending-score
// sweep with ties processed as one group.
double aupr(const ScoreSet& scores);

enum class Detection { Id, Ood };
inline Detection detect(double score, double lambda) {
  return score >= lambda ? Detection::Id : Detection::Ood;
}

MetricsReport compute_metrics(const ScoreSet& scores, double tpr = 0.95,
                              std::optional<double> id_acc = std::nullopt);

// metrics.csv: one row, >= 10 significant digits.
void save_metrics(const MetricsReport& report,
                  const std::filesystem::path& path);

// scores.csv: header `score,label`, label in {id, ood}.
void save_scores(const ScoreSet& scores, const std::filesystem::path& path);
std::vector<double> load_scores_csv(const std::filesystem::path& path);

}  // namespace npos
