#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "npos/embdata.hpp"

namespace npos::test {

// Self-cleaning temp directory for file round-trip tests.
class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    std::random_device rd;
    path_ = base / ("npos_test_" + std::to_string(rd()) + "_" +
                    std::to_string(::getpid()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const {
    return path_ / name;
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline EmbeddingSet random_set(Rng& rng, Eigen::Index n, Eigen::Index d,
                               std::int32_t classes) {
  EmbeddingSet s;
  s.data.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) s.data(i, j) = rng.normal();
  if (classes > 0) {
    s.labels.resize(static_cast<std::size_t>(n));
    for (auto& l : s.labels)
      l = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(classes)));
  }
  return s;
}

}  // namespace npos::test
