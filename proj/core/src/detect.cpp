#include "npos/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "npos/knn.hpp"

namespace npos {

double npos_score(const Model& model, const Vector& z) {
  Vector f = cosine_logits(z, model.prototypes);
  Vector g = f / model.tau;
  double gmax = g.maxCoeff();
  double denom = 0.0;
  for (Eigen::Index c = 0; c < g.size(); ++c) {
    denom += std::exp(g(c) - gmax);
  }
  return 1.0 / denom;  // exp(gmax - gmax) / sum = max softmax probability
}

double knn_score(const Vector& z, const Matrix& train_embeddings, int k) {
  return -knn_distance(z, train_embeddings, k);
}

double choose_threshold(const std::vector<double>& id_scores, double tpr) {
  if (id_scores.empty()) throw Error(ErrorCode::EmptySet, "no ID scores");
  if (tpr <= 0.0 || tpr > 1.0) {
    throw Error(ErrorCode::InvalidSpec, "tpr must be in (0, 1]");
  }
  std::vector<double> sorted = id_scores;
  std::sort(sorted.begin(), sorted.end());
  std::size_t idx = static_cast<std::size_t>(
      std::floor((1.0 - tpr) * static_cast<double>(sorted.size())));
  idx = std::min(idx, sorted.size() - 1);
  return sorted[idx];
}

double fpr_at_tpr(const ScoreSet& scores, double tpr) {
  if (scores.ood_scores.empty()) throw Error(ErrorCode::EmptySet, "no OOD scores");
  double lambda = choose_threshold(scores.id_scores, tpr);
  std::size_t fp = 0;
  for (double s : scores.ood_scores) {
    if (s >= lambda) ++fp;
  }
  return static_cast<double>(fp) / static_cast<double>(scores.ood_scores.size());
}

double auroc(const ScoreSet& scores) {
  if (scores.id_scores.empty() || scores.ood_scores.empty()) {
    throw Error(ErrorCode::EmptySet, "auroc needs both score sets");
  }
  // O(n log n) via sorted OOD scores: for each ID score count strictly
  // smaller and equal OOD scores.
  std::vector<double> ood = scores.ood_scores;
  std::sort(ood.begin(), ood.end());
  double total = 0.0;
  for (double s : scores.id_scores) {
    auto lo = std::lower_bound(ood.begin(), ood.end(), s);
    auto hi = std::upper_bound(ood.begin(), ood.end(), s);
    total += static_cast<double>(lo - ood.begin()) +
             0.5 * static_cast<double>(hi - lo);
  }
  return total / (static_cast<double>(scores.id_scores.size()) *
                  static_cast<double>(ood.size()));
}

double aupr(const ScoreSet& scores) {
  if (scores.id_scores.empty() || scores.ood_scores.empty()) {
    throw Error(ErrorCode::EmptySet, "aupr needs both score sets");
  }
  // Descending sweep; ties form a single group.
  std::vector<std::pair<double, bool>> all;  // (score, is_id)
  for (double s : scores.id_scores) all.emplace_back(s, true);
  for (double s : scores.ood_scores) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  double n_pos = static_cast<double>(scores.id_scores.size());
  double tp = 0.0, fp = 0.0, area = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) {
      if (all[j].second) tp += 1.0; else fp += 1.0;
      ++j;
    }
    double recall = tp / n_pos;
    double precision = tp / (tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

MetricsReport compute_metrics(const ScoreSet& scores, double tpr,
                              std::optional<double> id_acc) {
  MetricsReport report;
  report.lambda = choose_threshold(scores.id_scores, tpr);
  report.fpr95 = fpr_at_tpr(scores, tpr);
  report.auroc = auroc(scores);
  report.aupr = aupr(scores);
  report.id_acc = id_acc;
  return report;
}

void save_metrics(const MetricsReport& report,
                  const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  os << "fpr95,auroc,aupr,lambda,id_acc\n";
  char buf[256];
  if (report.id_acc) {
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g,%.12g\n",
                  report.fpr95, report.auroc, report.aupr, report.lambda,
                  *report.id_acc);
  } else {
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g,\n",
                  report.fpr95, report.auroc, report.aupr, report.lambda);
  }
  os << buf;
  if (!os) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

void save_scores(const ScoreSet& scores, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  os << "score,label\n";
  char buf[64];
  for (double s : scores.id_scores) {
    std::snprintf(buf, sizeof(buf), "%.12g,id\n", s);
    os << buf;
  }
  for (double s : scores.ood_scores) {
    std::snprintf(buf, sizeof(buf), "%.12g,ood\n", s);
    os << buf;
  }
  if (!os) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

std::vector<double> load_scores_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) {
    throw Error(ErrorCode::TruncatedFile, "missing header in " + path.string());
  }
  std::vector<double> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t comma = line.find(',');
    std::string field = comma == std::string::npos ? line
                                                   : line.substr(0, comma);
    try {
      out.push_back(std::stod(field));
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadValue, "bad score '" + field + "'");
    }
  }
  return out;
}

}  // namespace npos
