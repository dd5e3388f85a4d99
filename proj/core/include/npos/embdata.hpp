#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

#include "npos/error.hpp"
#include "npos/rng.hpp"

namespace npos {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kUnitNormTol = 1e-6;

// n x d embedding matrix with optional per-row class labels.
// Label -1 is reserved for "unlabeled"; an empty label vector means the
// whole set is unlabeled.
struct EmbeddingSet {
  Matrix data;                       // n rows, d columns
  std::vector<std::int32_t> labels;  // empty or size n
  bool normalized = false;

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }
  bool has_labels() const { return !labels.empty(); }

  // Number of classes, i.e. max label + 1. Zero when unlabeled.
  std::int32_t num_classes() const;

  void validate() const;
};

bool operator==(const EmbeddingSet& a, const EmbeddingSet& b);

// Fixed-capacity FIFO of unit-norm embeddings (the per-class ID queue).
class ClassQueue {
 public:
  explicit ClassQueue(std::size_t capacity, Eigen::Index dim)
      : capacity_(capacity), dim_(dim) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  Eigen::Index dim() const { return dim_; }

  // Appends a unit-norm vector, evicting the oldest entry at capacity.
  void push(const Vector& z);

  const Vector& entry(std::size_t i) const { return entries_[i]; }

  // Entries as a size() x dim matrix, oldest first.
  Matrix as_matrix() const;

 private:
  std::size_t capacity_;
  Eigen::Index dim_;
  std::deque<Vector> entries_;
};

enum class SyntheticKind { GaussianMixture, TwoMoons, Rings };
enum class OodKind { Ring, UniformShell, ShiftedMixture };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::GaussianMixture;
  int n_per_class = 500;
  int d = 2;
  int num_classes = 3;
  OodKind ood_kind = OodKind::Ring;
  double noise = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  EmbeddingSet id_train;
  EmbeddingSet id_test;
  EmbeddingSet ood_test;  // unlabeled
};

enum class FileFormat { Binary, Csv };

// v = v / ||v||. Throws ZeroVector on the zero vector.
Vector l2_normalize(const Vector& v);

// Row-wise normalization; sets the normalized flag.
void l2_normalize_rows(EmbeddingSet& set);

EmbeddingSet load_embeddings(const std::filesystem::path& path,
                             FileFormat format);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path,
                     FileFormat format);

// Deterministic synthetic ID/OOD benchmark generator. Equal specs produce
// equal outputs, including across runs.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

// Appends each batch row to the queue of its label, preserving batch order.
// Rows must be unit-norm; labels must index into queues.
void queue_update(std::vector<ClassQueue>& queues, const Matrix& batch_z,
                  const std::vector<std::int32_t>& batch_labels);

}  // namespace npos
