#include "npos/embdata.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace npos {

namespace {

constexpr std::uint8_t kMagic[4] = {0x4E, 0x50, 0x4F, 0x53};  // "NPOS"
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagLabels = 1u << 0;
constexpr std::uint32_t kFlagNormalized = 1u << 1;

template <typename T>
void write_le(std::ostream& os, T value) {
  // Little-endian host assumed; asserted at container load time by magic
  // byte order.
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw Error(ErrorCode::TruncatedFile, "unexpected end of file");
  return value;
}

}  // namespace

std::int32_t EmbeddingSet::num_classes() const {
  std::int32_t c = 0;
  for (std::int32_t label : labels) c = std::max(c, label + 1);
  return c;
}

void EmbeddingSet::validate() const {
  if (data.cols() < 1) {
    throw Error(ErrorCode::InvalidSpec, "embedding dimension must be >= 1");
  }
  if (!labels.empty() &&
      labels.size() != static_cast<std::size_t>(data.rows())) {
    throw Error(ErrorCode::LabelOutOfRange, "label count does not match rows");
  }
  for (std::int32_t label : labels) {
    if (label < -1) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "label " + std::to_string(label) + " below -1");
    }
  }
  if (normalized) {
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      if (std::abs(data.row(i).norm() - 1.0) > kUnitNormTol) {
        throw Error(ErrorCode::NotNormalized,
                    "row " + std::to_string(i) + " is not unit-norm");
      }
    }
  }
}

bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
  return a.data.rows() == b.data.rows() && a.data.cols() == b.data.cols() &&
         a.data == b.data && a.labels == b.labels &&
         a.normalized == b.normalized;
}

void ClassQueue::push(const Vector& z) {
  if (z.size() != dim_) {
    throw Error(ErrorCode::DimMismatch, "queue entry dimension mismatch");
  }
  if (std::abs(z.norm() - 1.0) > kUnitNormTol) {
    throw Error(ErrorCode::NotNormalized, "queue entries must be unit-norm");
  }
  entries_.push_back(z);
  while (entries_.size() > capacity_) entries_.pop_front();
}

Matrix ClassQueue::as_matrix() const {
  Matrix m(static_cast<Eigen::Index>(entries_.size()), dim_);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = entries_[i].transpose();
  }
  return m;
}

void SyntheticSpec::validate() const {
  if (d < 2) throw Error(ErrorCode::InvalidSpec, "d must be >= 2");
  if (num_classes < 1) throw Error(ErrorCode::InvalidSpec, "C must be >= 1");
  if (n_per_class < 1) {
    throw Error(ErrorCode::InvalidSpec, "n_per_class must be >= 1");
  }
  if (noise < 0) throw Error(ErrorCode::InvalidSpec, "noise must be >= 0");
  if (kind == SyntheticKind::TwoMoons && num_classes != 2) {
    throw Error(ErrorCode::InvalidSpec, "two-moons requires C = 2");
  }
}

Vector l2_normalize(const Vector& v) {
  double n = v.norm();
  if (n == 0.0) throw Error(ErrorCode::ZeroVector, "cannot normalize 0");
  return v / n;
}

void l2_normalize_rows(EmbeddingSet& set) {
  for (Eigen::Index i = 0; i < set.data.rows(); ++i) {
    double n = set.data.row(i).norm();
    if (n == 0.0) {
      throw Error(ErrorCode::ZeroVector,
                  "row " + std::to_string(i) + " has zero norm");
    }
    set.data.row(i) /= n;
  }
  set.normalized = true;
}

namespace {

EmbeddingSet load_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());

  std::uint8_t magic[4];
  is.read(reinterpret_cast<char*>(magic), 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "bad magic in " + path.string());
  }
  auto version = read_le<std::uint32_t>(is);
  if (version != kVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "unsupported version " + std::to_string(version));
  }
  auto n = read_le<std::uint64_t>(is);
  auto d = read_le<std::uint32_t>(is);
  auto flags = read_le<std::uint32_t>(is);
  if (d < 1) throw Error(ErrorCode::InvalidSpec, "d must be >= 1");

  EmbeddingSet set;
  set.data.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) {
      set.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<double>(read_le<float>(is));
    }
  }
  if (flags & kFlagLabels) {
    set.labels.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      set.labels[i] = read_le<std::int32_t>(is);
      if (set.labels[i] < -1) {
        throw Error(ErrorCode::LabelOutOfRange,
                    "label " + std::to_string(set.labels[i]));
      }
    }
  }
  set.normalized = (flags & kFlagNormalized) != 0;
  set.validate();
  return set;
}

void save_binary(const EmbeddingSet& set, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  os.write(reinterpret_cast<const char*>(kMagic), 4);
  write_le<std::uint32_t>(os, kVersion);
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(set.rows()));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.dim()));
  std::uint32_t flags = 0;
  if (set.has_labels()) flags |= kFlagLabels;
  if (set.normalized) flags |= kFlagNormalized;
  write_le<std::uint32_t>(os, flags);
  for (Eigen::Index i = 0; i < set.rows(); ++i) {
    for (Eigen::Index j = 0; j < set.dim(); ++j) {
      write_le<float>(os, static_cast<float>(set.data(i, j)));
    }
  }
  for (std::int32_t label : set.labels) write_le<std::int32_t>(os, label);
  if (!os) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

EmbeddingSet load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) {
    throw Error(ErrorCode::TruncatedFile, "missing CSV header");
  }
  bool has_labels = line.size() >= 5 && line.substr(line.size() - 5) == "label";
  int d = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1 -
          (has_labels ? 1 : 0);
  if (d < 1) throw Error(ErrorCode::BadValue, "bad CSV header: " + line);

  std::vector<double> values;
  std::vector<std::int32_t> labels;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    for (int j = 0; j < d; ++j) {
      if (!std::getline(ss, field, ',')) {
        throw Error(ErrorCode::TruncatedFile, "short CSV row: " + line);
      }
      try {
        values.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw Error(ErrorCode::BadValue, "bad number '" + field + "'");
      }
    }
    if (has_labels) {
      if (!std::getline(ss, field, ',')) {
        throw Error(ErrorCode::TruncatedFile, "missing label: " + line);
      }
      try {
        labels.push_back(static_cast<std::int32_t>(std::stol(field)));
      } catch (const std::exception&) {
        throw Error(ErrorCode::BadValue, "bad label '" + field + "'");
      }
    }
    ++n;
  }
  EmbeddingSet set;
  set.data.resize(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      set.data(static_cast<Eigen::Index>(i), j) = values[i * d + j];
    }
  }
  set.labels = std::move(labels);
  set.validate();
  return set;
}

void save_csv(const EmbeddingSet& set, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  for (Eigen::Index j = 0; j < set.dim(); ++j) {
    os << (j ? "," : "") << "dim" << j;
  }
  if (set.has_labels()) os << ",label";
  os << "\n";
  char buf[64];
  for (Eigen::Index i = 0; i < set.rows(); ++i) {
    for (Eigen::Index j = 0; j < set.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.10g", set.data(i, j));
      os << (j ? "," : "") << buf;
    }
    if (set.has_labels()) os << "," << set.labels[i];
    os << "\n";
  }
  if (!os) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

}  // namespace

EmbeddingSet load_embeddings(const std::filesystem::path& path,
                             FileFormat format) {
  return format == FileFormat::Binary ? load_binary(path) : load_csv(path);
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path,
                     FileFormat format) {
  set.validate();
  if (format == FileFormat::Binary) {
    save_binary(set, path);
  } else {
    save_csv(set, path);
  }
}

namespace {

// Class means for the gaussian-mixture kind: radius 2 on the unit circle of
// the first two coordinates, remaining coordinates zero.
std::vector<Vector> mixture_means(int num_classes, int d) {
  std::vector<Vector> means;
  for (int c = 0; c < num_classes; ++c) {
    Vector mu = Vector::Zero(d);
    double angle = 2.0 * M_PI * c / num_classes;
    mu(0) = 2.0 * std::cos(angle);
    mu(1) = 2.0 * std::sin(angle);
    means.push_back(mu);
  }
  return means;
}

Vector random_direction(int d, Rng& rng) {
  Vector v(d);
  double n = 0.0;
  do {
    for (int j = 0; j < d; ++j) v(j) = rng.normal();
    n = v.norm();
  } while (n == 0.0);
  return v / n;
}

EmbeddingSet sample_id(const SyntheticSpec& spec, Rng& rng) {
  int n = spec.n_per_class * spec.num_classes;
  EmbeddingSet set;
  set.data.resize(n, spec.d);
  set.labels.resize(n);
  Eigen::Index row = 0;
  switch (spec.kind) {
    case SyntheticKind::GaussianMixture: {
      auto means = mixture_means(spec.num_classes, spec.d);
      for (int c = 0; c < spec.num_classes; ++c) {
        for (int i = 0; i < spec.n_per_class; ++i, ++row) {
          for (int j = 0; j < spec.d; ++j) {
            set.data(row, j) = means[c](j) + spec.noise * rng.normal();
          }
          set.labels[row] = c;
        }
      }
      break;
    }
    case SyntheticKind::TwoMoons: {
      // Unit-radius interleaved half circles in the first two coordinates.
      for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < spec.n_per_class; ++i, ++row) {
          double t = M_PI * rng.uniform();
          set.data.row(row).setZero();
          if (c == 0) {
            set.data(row, 0) = std::cos(t);
            set.data(row, 1) = std::sin(t);
          } else {
            set.data(row, 0) = 1.0 - std::cos(t);
            set.data(row, 1) = 0.5 - std::sin(t);
          }
          for (int j = 0; j < spec.d; ++j) {
            set.data(row, j) += spec.noise * rng.normal();
          }
          set.labels[row] = c;
        }
      }
      break;
    }
    case SyntheticKind::Rings: {
      // Concentric rings, class c at radius c + 1 with radial jitter.
      for (int c = 0; c < spec.num_classes; ++c) {
        for (int i = 0; i < spec.n_per_class; ++i, ++row) {
          Vector dir = random_direction(spec.d, rng);
          double r = (c + 1.0) + spec.noise * rng.normal();
          set.data.row(row) = (r * dir).transpose();
          set.labels[row] = c;
        }
      }
      break;
    }
  }
  return set;
}

double max_id_radius(const SyntheticSpec& spec) {
  switch (spec.kind) {
    case SyntheticKind::GaussianMixture:
      return 2.0;
    case SyntheticKind::TwoMoons:
      return 1.5;
    case SyntheticKind::Rings:
      return static_cast<double>(spec.num_classes);
  }
  return 2.0;
}

EmbeddingSet sample_ood(const SyntheticSpec& spec, Rng& rng) {
  int n = spec.n_per_class * spec.num_classes;
  EmbeddingSet set;
  set.data.resize(n, spec.d);
  double base = 3.0 * max_id_radius(spec);
  switch (spec.ood_kind) {
    case OodKind::Ring: {
      for (int i = 0; i < n; ++i) {
        Vector dir = random_direction(spec.d, rng);
        double r = rng.uniform(std::max(0.0, base - spec.noise),
                               base + spec.noise);
        set.data.row(i) = (r * dir).transpose();
      }
      break;
    }
    case OodKind::UniformShell: {
      for (int i = 0; i < n; ++i) {
        Vector dir = random_direction(spec.d, rng);
        double r = rng.uniform(0.5 * base, base);
        set.data.row(i) = (r * dir).transpose();
      }
      break;
    }
    case OodKind::ShiftedMixture: {
      auto means = mixture_means(spec.num_classes, spec.d);
      Vector shift = Vector::Zero(spec.d);
      shift(0) = base;
      shift(1) = base;
      for (int i = 0; i < n; ++i) {
        const Vector& mu = means[static_cast<std::size_t>(
            rng.below(static_cast<std::uint64_t>(spec.num_classes)))];
        for (int j = 0; j < spec.d; ++j) {
          set.data(i, j) = mu(j) + shift(j) + spec.noise * rng.normal();
        }
      }
      break;
    }
  }
  return set;
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData out;
  // Fixed substreams so each split is independent of the others' sizes.
  Rng train_rng(derive_seed(spec.seed, 1));
  Rng test_rng(derive_seed(spec.seed, 2));
  Rng ood_rng(derive_seed(spec.seed, 3));
  out.id_train = sample_id(spec, train_rng);
  out.id_test = sample_id(spec, test_rng);
  out.ood_test = sample_ood(spec, ood_rng);
  return out;
}

void queue_update(std::vector<ClassQueue>& queues, const Matrix& batch_z,
                  const std::vector<std::int32_t>& batch_labels) {
  if (batch_labels.size() != static_cast<std::size_t>(batch_z.rows())) {
    throw Error(ErrorCode::DimMismatch, "batch label count mismatch");
  }
  for (Eigen::Index i = 0; i < batch_z.rows(); ++i) {
    std::int32_t c = batch_labels[static_cast<std::size_t>(i)];
    if (c < 0 || static_cast<std::size_t>(c) >= queues.size()) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(c));
    }
    queues[static_cast<std::size_t>(c)].push(batch_z.row(i).transpose());
  }
}

}  // namespace npos
