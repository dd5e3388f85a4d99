#include "npos/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace npos {

void MlpParams::validate() const {
  if (layers.empty()) throw Error(ErrorCode::InvalidSpec, "empty MLP");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].b.size() != layers[l].W.rows()) {
      throw Error(ErrorCode::DimMismatch, "bias/weight mismatch in layer " +
                                              std::to_string(l));
    }
    if (l > 0 && layers[l].W.cols() != layers[l - 1].W.rows()) {
      throw Error(ErrorCode::DimMismatch,
                  "layer dimensions do not chain at layer " +
                      std::to_string(l));
    }
    if (!layers[l].W.allFinite() || !layers[l].b.allFinite()) {
      throw Error(ErrorCode::NonFiniteGradient,
                  "non-finite parameter in layer " + std::to_string(l));
    }
  }
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
  MlpGrads g;
  for (const auto& layer : params.layers) {
    g.layers.push_back({Matrix::Zero(layer.W.rows(), layer.W.cols()),
                        Vector::Zero(layer.b.size())});
  }
  return g;
}

void MlpGrads::add_scaled(const MlpGrads& other, double scale) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].W += scale * other.layers[l].W;
    layers[l].b += scale * other.layers[l].b;
  }
}

Matrix mlp_forward(const MlpParams& params, const Matrix& x, MlpCache* cache) {
  if (x.cols() != params.input_dim()) {
    throw Error(ErrorCode::DimMismatch,
                "input dim " + std::to_string(x.cols()) + " != " +
                    std::to_string(params.input_dim()));
  }
  if (cache) {
    cache->input = x;
    cache->pre.clear();
    cache->post.clear();
  }
  Matrix h = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Matrix pre = (h * params.layers[l].W.transpose()).rowwise() +
                 params.layers[l].b.transpose();
    if (cache) cache->pre.push_back(pre);
    if (l + 1 < params.layers.size()) {
      h = pre.cwiseMax(0.0);
      if (cache) cache->post.push_back(h);
    } else {
      h = std::move(pre);
    }
  }
  return h;
}

Matrix mlp_backward(const MlpParams& params, const MlpCache& cache,
                    const Matrix& d_output, MlpGrads& grads) {
  std::size_t n_layers = params.layers.size();
  Matrix delta = d_output;
  for (std::size_t l = n_layers; l-- > 0;) {
    const Matrix& layer_in = l == 0 ? cache.input : cache.post[l - 1];
    grads.layers[l].W += delta.transpose() * layer_in;
    grads.layers[l].b += delta.colwise().sum().transpose();
    Matrix d_in = delta * params.layers[l].W;
    if (l > 0) {
      // ReLU mask from the pre-activations of the layer below.
      d_in = d_in.cwiseProduct(
          (cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
    delta = std::move(d_in);
  }
  return delta;
}

MlpParams mlp_init(const std::vector<Eigen::Index>& dims, Rng& rng) {
  if (dims.size() < 2) throw Error(ErrorCode::InvalidSpec, "need >= 2 dims");
  MlpParams params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    MlpLayer layer{Matrix(dims[l + 1], dims[l]), Vector(dims[l + 1])};
    for (Eigen::Index i = 0; i < layer.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.W.cols(); ++j) {
        layer.W(i, j) = rng.uniform(-bound, bound);
      }
    }
    for (Eigen::Index i = 0; i < layer.b.size(); ++i) {
      layer.b(i) = rng.uniform(-bound, bound);
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

void Prototypes::validate() const {
  for (Eigen::Index c = 0; c < mu.rows(); ++c) {
    if (std::abs(mu.row(c).norm() - 1.0) > kUnitNormTol) {
      throw Error(ErrorCode::NotNormalized,
                  "prototype " + std::to_string(c) + " is not unit-norm");
    }
  }
  if (gamma < 0.0 || gamma > 1.0) {
    throw Error(ErrorCode::InvalidSpec, "gamma must be in [0, 1]");
  }
}

Vector cosine_logits(const Vector& z, const Prototypes& prototypes) {
  double zn = z.norm();
  if (zn == 0.0) throw Error(ErrorCode::ZeroVector, "zero embedding");
  Vector f(prototypes.num_classes());
  for (Eigen::Index c = 0; c < prototypes.num_classes(); ++c) {
    double mn = prototypes.mu.row(c).norm();
    if (mn == 0.0) throw Error(ErrorCode::ZeroVector, "zero prototype");
    f(c) = prototypes.mu.row(c).dot(z.transpose()) / (zn * mn);
  }
  return f;
}

void prototype_ema_update(Prototypes& prototypes, const Matrix& z_batch,
                          const std::vector<std::int32_t>& labels) {
  if (prototypes.mode == PrototypeMode::Fixed) return;
  if (labels.size() != static_cast<std::size_t>(z_batch.rows())) {
    throw Error(ErrorCode::DimMismatch, "label count mismatch");
  }
  for (Eigen::Index i = 0; i < z_batch.rows(); ++i) {
    std::int32_t c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= prototypes.num_classes()) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(c));
    }
    Vector updated = prototypes.gamma * prototypes.mu.row(c).transpose() +
                     (1.0 - prototypes.gamma) * z_batch.row(i).transpose();
    double n = updated.norm();
    if (n == 0.0) {
      throw Error(ErrorCode::ZeroVector,
                  "antipodal EMA update produced the zero vector");
    }
    prototypes.mu.row(c) = (updated / n).transpose();
  }
}

Prototypes prototypes_init(Eigen::Index num_classes, Eigen::Index dim,
                           double gamma, Rng& rng) {
  Prototypes p;
  p.mu.resize(num_classes, dim);
  p.gamma = gamma;
  for (Eigen::Index c = 0; c < num_classes; ++c) {
    Vector v(dim);
    double n = 0.0;
    do {
      for (Eigen::Index j = 0; j < dim; ++j) v(j) = rng.normal();
      n = v.norm();
    } while (n == 0.0);
    p.mu.row(c) = (v / n).transpose();
  }
  return p;
}

void Model::validate() const {
  encoder.validate();
  phi.validate();
  prototypes.validate();
  if (encoder.output_dim() != prototypes.dim() ||
      encoder.output_dim() != phi.input_dim()) {
    throw Error(ErrorCode::DimMismatch,
                "encoder output, prototype and phi input dims must agree");
  }
  if (phi.output_dim() != 1) {
    throw Error(ErrorCode::DimMismatch, "phi must have scalar output");
  }
  if (tau <= 0.0) throw Error(ErrorCode::InvalidSpec, "tau must be > 0");
}

double grad_check(const std::function<double(const Vector&)>& loss_fn,
                  const Vector& at, const Vector& analytic, double epsilon) {
  if (epsilon <= 0.0) throw Error(ErrorCode::InvalidSpec, "epsilon must be > 0");
  double max_rel = 0.0;
  Vector x = at;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double orig = x(i);
    x(i) = orig + epsilon;
    double hi = loss_fn(x);
    x(i) = orig - epsilon;
    double lo = loss_fn(x);
    x(i) = orig;
    if (!std::isfinite(hi) || !std::isfinite(lo)) {
      throw Error(ErrorCode::NonFiniteLoss, "loss not finite near base point");
    }
    double numeric = (hi - lo) / (2.0 * epsilon);
    double denom = std::max(1e-8, std::abs(analytic(i)) + std::abs(numeric));
    max_rel = std::max(max_rel, std::abs(analytic(i) - numeric) / denom);
  }
  return max_rel;
}

Vector mlp_flatten(const MlpParams& params) {
  Eigen::Index total = 0;
  for (const auto& l : params.layers) total += l.W.size() + l.b.size();
  Vector flat(total);
  Eigen::Index at = 0;
  for (const auto& l : params.layers) {
    for (Eigen::Index i = 0; i < l.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.W.cols(); ++j) flat(at++) = l.W(i, j);
    }
    for (Eigen::Index i = 0; i < l.b.size(); ++i) flat(at++) = l.b(i);
  }
  return flat;
}

void mlp_unflatten(const Vector& flat, MlpParams& params) {
  Eigen::Index at = 0;
  for (auto& l : params.layers) {
    for (Eigen::Index i = 0; i < l.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.W.cols(); ++j) l.W(i, j) = flat(at++);
    }
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = flat(at++);
  }
  if (at != flat.size()) {
    throw Error(ErrorCode::DimMismatch, "flat parameter size mismatch");
  }
}

namespace {

constexpr std::uint8_t kMagic[4] = {0x4E, 0x50, 0x4F, 0x53};
constexpr std::uint32_t kCheckpointVersion = 2;

void write_record(std::ostream& os, const std::string& name,
                  const std::vector<std::uint32_t>& dims,
                  const double* payload) {
  std::uint16_t name_len = static_cast<std::uint16_t>(name.size());
  os.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
  os.write(name.data(), name_len);
  std::uint8_t rank = static_cast<std::uint8_t>(dims.size());
  os.write(reinterpret_cast<const char*>(&rank), 1);
  std::size_t count = 1;
  for (std::uint32_t d : dims) {
    os.write(reinterpret_cast<const char*>(&d), sizeof(d));
    count *= d;
  }
  os.write(reinterpret_cast<const char*>(payload),
           static_cast<std::streamsize>(count * sizeof(double)));
}

void write_matrix(std::ostream& os, const std::string& name, const Matrix& m) {
  // Row-major payload.
  std::vector<double> buf(static_cast<std::size_t>(m.size()));
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) buf[at++] = m(i, j);
  }
  write_record(os, name,
               {static_cast<std::uint32_t>(m.rows()),
                static_cast<std::uint32_t>(m.cols())},
               buf.data());
}

void write_vector(std::ostream& os, const std::string& name, const Vector& v) {
  write_record(os, name, {static_cast<std::uint32_t>(v.size())}, v.data());
}

void write_scalar(std::ostream& os, const std::string& name, double value) {
  write_record(os, name, {}, &value);
}

struct Record {
  std::vector<std::uint32_t> dims;
  std::vector<double> payload;
};

std::map<std::string, Record> read_records(std::istream& is) {
  std::map<std::string, Record> records;
  while (true) {
    std::uint16_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (is.eof()) break;
    if (!is) throw Error(ErrorCode::TruncatedFile, "bad record header");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint8_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    if (!is) throw Error(ErrorCode::TruncatedFile, "bad record header");
    Record rec;
    std::size_t count = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      std::uint32_t d = 0;
      is.read(reinterpret_cast<char*>(&d), sizeof(d));
      if (!is) throw Error(ErrorCode::TruncatedFile, "bad record dims");
      rec.dims.push_back(d);
      count *= d;
    }
    rec.payload.resize(count);
    is.read(reinterpret_cast<char*>(rec.payload.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw Error(ErrorCode::TruncatedFile, "short record payload");
    records[name] = std::move(rec);
  }
  return records;
}

const Record& require(const std::map<std::string, Record>& records,
                      const std::string& name) {
  auto it = records.find(name);
  if (it == records.end()) {
    throw Error(ErrorCode::TruncatedFile, "missing record " + name);
  }
  return it->second;
}

MlpParams read_mlp(const std::map<std::string, Record>& records,
                   const std::string& prefix) {
  MlpParams params;
  for (int l = 0;; ++l) {
    std::string wname = prefix + ".w" + std::to_string(l);
    auto it = records.find(wname);
    if (it == records.end()) break;
    const Record& w = it->second;
    const Record& b = require(records, prefix + ".b" + std::to_string(l));
    if (w.dims.size() != 2 || b.dims.size() != 1) {
      throw Error(ErrorCode::BadValue, "bad tensor rank for " + wname);
    }
    MlpLayer layer{Matrix(w.dims[0], w.dims[1]), Vector(b.dims[0])};
    std::size_t at = 0;
    for (Eigen::Index i = 0; i < layer.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.W.cols(); ++j) {
        layer.W(i, j) = w.payload[at++];
      }
    }
    for (Eigen::Index i = 0; i < layer.b.size(); ++i) {
      layer.b(i) = b.payload[static_cast<std::size_t>(i)];
    }
    params.layers.push_back(std::move(layer));
  }
  if (params.layers.empty()) {
    throw Error(ErrorCode::TruncatedFile, "no layers for " + prefix);
  }
  return params;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  model.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  os.write(reinterpret_cast<const char*>(kMagic), 4);
  os.write(reinterpret_cast<const char*>(&kCheckpointVersion), 4);
  for (std::size_t l = 0; l < model.encoder.layers.size(); ++l) {
    write_matrix(os, "enc.w" + std::to_string(l), model.encoder.layers[l].W);
    write_vector(os, "enc.b" + std::to_string(l), model.encoder.layers[l].b);
  }
  for (std::size_t l = 0; l < model.phi.layers.size(); ++l) {
    write_matrix(os, "phi.w" + std::to_string(l), model.phi.layers[l].W);
    write_vector(os, "phi.b" + std::to_string(l), model.phi.layers[l].b);
  }
  write_matrix(os, "proto", model.prototypes.mu);
  write_scalar(os, "tau", model.tau);
  write_scalar(os, "gamma", model.prototypes.gamma);
  write_scalar(os, "logit_norm", model.logit_norm ? 1.0 : 0.0);
  if (!os) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::uint8_t magic[4];
  is.read(reinterpret_cast<char*>(magic), 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "bad magic in " + path.string());
  }
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (!is || version != kCheckpointVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "unsupported checkpoint version " + std::to_string(version));
  }
  auto records = read_records(is);
  Model model;
  model.encoder = read_mlp(records, "enc");
  model.phi = read_mlp(records, "phi");
  const Record& proto = require(records, "proto");
  if (proto.dims.size() != 2) {
    throw Error(ErrorCode::BadValue, "bad proto rank");
  }
  model.prototypes.mu.resize(proto.dims[0], proto.dims[1]);
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < model.prototypes.mu.rows(); ++i) {
    for (Eigen::Index j = 0; j < model.prototypes.mu.cols(); ++j) {
      model.prototypes.mu(i, j) = proto.payload[at++];
    }
  }
  model.prototypes.gamma = require(records, "gamma").payload.at(0);
  model.tau = require(records, "tau").payload.at(0);
  model.logit_norm = require(records, "logit_norm").payload.at(0) != 0.0;
  model.validate();
  return model;
}

}  // namespace npos
