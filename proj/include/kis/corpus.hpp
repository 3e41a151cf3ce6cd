#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace kis {

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ItemIndex = Eigen::Index;

/// Raised for malformed manifests and embedding files. The message names the
/// offending space and row where one exists.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One sub-perception: N unit-norm rows of a fixed dimension.
struct EmbeddingSpace {
  std::string space_id;
  RowMatrixXf vectors;
  RowMatrixXd scan;  // double copy of `vectors`, filled by Corpus; empty means cast on the fly

  Eigen::Index size() const { return vectors.rows(); }
  Eigen::Index dim() const { return vectors.cols(); }
};

struct ItemInfo {
  std::string item_id;
  std::string label;
  std::optional<std::string> thumbnail_uri;
};

struct SpaceEntry {
  std::string space_id;
  int dim = 0;
  std::filesystem::path file;  // relative paths resolve against the manifest directory
};

struct CorpusManifest {
  std::vector<ItemInfo> items;
  std::vector<SpaceEntry> spaces;
};

/// Immutable after construction; shared read-only between sessions.
class Corpus {
 public:
  Corpus(CorpusManifest manifest, std::vector<EmbeddingSpace> spaces);

  const CorpusManifest& manifest() const { return manifest_; }
  const std::vector<EmbeddingSpace>& spaces() const { return spaces_; }
  const EmbeddingSpace& space(std::size_t f) const { return spaces_.at(f); }
  std::size_t num_spaces() const { return spaces_.size(); }
  Eigen::Index num_items() const { return static_cast<Eigen::Index>(manifest_.items.size()); }

  std::optional<ItemIndex> find_item(const std::string& item_id) const;
  std::optional<std::size_t> find_space(const std::string& space_id) const;

 private:
  CorpusManifest manifest_;
  std::vector<EmbeddingSpace> spaces_;
  std::unordered_map<std::string, ItemIndex> item_index_;
};

// "KISE" embedding files: little-endian, magic, u32 version, u32 N, u32 dim,
// then N*dim float32 row-major.
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

RowMatrixXf read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const RowMatrixXf& vectors);

/// Scales every row to unit L2 norm. Rows already within 1e-6 of unit norm are
/// left untouched so that save/load cycles are bit-stable.
void normalize_rows(RowMatrixXf& vectors, const std::string& space_id);

Corpus load_corpus(const std::filesystem::path& manifest_path);

/// Writes `<dir>/manifest.json` plus one `<space_id>.kise` per space.
std::filesystem::path save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

/// Cosine similarity of two items (a plain dot product of unit rows).
double similarity(const EmbeddingSpace& space, ItemIndex a, ItemIndex b);

/// Cosine similarity of `query` against every row. The query is normalized
/// internally; throws on a zero query or a dimension mismatch.
Eigen::VectorXd similarity_to_all(const EmbeddingSpace& space,
                                  const Eigen::Ref<const Eigen::VectorXd>& query);

/// Dot products of every row (or of the rows listed in `rows`) with each
/// column of `directions`, accumulated in double. Output is rows x k, with
/// row r of the output matching `rows[r]` when a row list is given.
void project_rows(const EmbeddingSpace& space, const Eigen::Ref<const Eigen::MatrixXd>& directions,
                  Eigen::MatrixXd& out);
void project_rows(const EmbeddingSpace& space, const std::vector<ItemIndex>& rows,
                  const Eigen::Ref<const Eigen::MatrixXd>& directions, Eigen::MatrixXd& out);

struct NormStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

NormStats row_norm_stats(const EmbeddingSpace& space);

}  // namespace kis
