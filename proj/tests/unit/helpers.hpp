#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "kis/corpus.hpp"

namespace kis::test {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(KIS_FIXTURE_DIR) / name; }

/// In-memory corpus with items "i0", "i1", ... and spaces "s0", "s1", ...;
/// rows are normalized.
inline Corpus make_corpus(std::vector<RowMatrixXf> spaces) {
  CorpusManifest manifest;
  const auto n = spaces.front().rows();
  for (Eigen::Index i = 0; i < n; ++i) manifest.items.push_back({"i" + std::to_string(i), "item " + std::to_string(i), {}});
  std::vector<EmbeddingSpace> out;
  for (std::size_t f = 0; f < spaces.size(); ++f) {
    normalize_rows(spaces[f], "s" + std::to_string(f));
    manifest.spaces.push_back({"s" + std::to_string(f), static_cast<int>(spaces[f].cols()), {}});
    out.push_back({"s" + std::to_string(f), std::move(spaces[f]), {}});
  }
  return Corpus(std::move(manifest), std::move(out));
}

inline RowMatrixXf rows(std::initializer_list<std::initializer_list<float>> values) {
  RowMatrixXf m(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : values) {
    Eigen::Index c = 0;
    for (float v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("kis_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace kis::test
