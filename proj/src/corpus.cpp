#include "kis/corpus.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "json.hpp"

namespace kis {

namespace {

constexpr std::array<char, 4> kMagic = {'K', 'I', 'S', 'E'};
constexpr Eigen::Index kScanBlock = 2048;

static_assert(std::endian::native == std::endian::little,
              "KISE files are read by reinterpretation; big-endian hosts need a byte-swapping path");

std::uint32_t read_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw LoadError("truncated header in " + path.string());
  return v;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

}  // namespace

Corpus::Corpus(CorpusManifest manifest, std::vector<EmbeddingSpace> spaces)
    : manifest_(std::move(manifest)), spaces_(std::move(spaces)) {
  if (spaces_.empty()) throw LoadError("corpus needs at least one embedding space");
  const auto n = num_items();
  for (const auto& s : spaces_) {
    if (s.size() != n) {
      throw LoadError("item-count mismatch: space '" + s.space_id + "' has " +
                      std::to_string(s.size()) + " rows, manifest lists " + std::to_string(n));
    }
  }
  for (std::size_t i = 0; i < manifest_.items.size(); ++i) {
    const auto& id = manifest_.items[i].item_id;
    if (!item_index_.emplace(id, static_cast<ItemIndex>(i)).second) {
      throw LoadError("duplicate item_id '" + id + "'");
    }
  }
  for (auto& s : spaces_) s.scan = s.vectors.cast<double>();
}

std::optional<ItemIndex> Corpus::find_item(const std::string& item_id) const {
  const auto it = item_index_.find(item_id);
  if (it == item_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> Corpus::find_space(const std::string& space_id) const {
  for (std::size_t f = 0; f < spaces_.size(); ++f) {
    if (spaces_[f].space_id == space_id) return f;
  }
  return std::nullopt;
}

RowMatrixXf read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open embedding file " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw LoadError("bad magic in " + path.string());
  const auto version = read_u32(in, path);
  if (version != kEmbeddingFormatVersion) {
    throw LoadError("unsupported KISE version " + std::to_string(version) + " in " + path.string());
  }
  const auto n = read_u32(in, path);
  const auto dim = read_u32(in, path);
  if (dim == 0) throw LoadError("zero dimension in " + path.string());
  RowMatrixXf vectors(n, dim);
  in.read(reinterpret_cast<char*>(vectors.data()),
          static_cast<std::streamsize>(sizeof(float) * vectors.size()));
  if (!in) throw LoadError("truncated payload in " + path.string());
  return vectors;
}

void write_embeddings(const std::filesystem::path& path, const RowMatrixXf& vectors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, kEmbeddingFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(vectors.rows()));
  write_u32(out, static_cast<std::uint32_t>(vectors.cols()));
  out.write(reinterpret_cast<const char*>(vectors.data()),
            static_cast<std::streamsize>(sizeof(float) * vectors.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

void normalize_rows(RowMatrixXf& vectors, const std::string& space_id) {
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    const double sq = vectors.row(i).cast<double>().squaredNorm();
    if (!(sq > 0.0) || !std::isfinite(sq)) {
      throw LoadError("zero-norm row " + std::to_string(i) + " in space '" + space_id + "'");
    }
    if (std::abs(sq - 1.0) <= 1e-6) continue;
    const double inv = 1.0 / std::sqrt(sq);
    vectors.row(i) = (vectors.row(i).cast<double>() * inv).cast<float>();
  }
}

Corpus load_corpus(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open manifest " + manifest_path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  CorpusManifest manifest;
  try {
    for (const auto& item : doc.at("items")) {
      ItemInfo info;
      info.item_id = item.at("item_id").get<std::string>();
      info.label = item.value("label", info.item_id);
      if (item.contains("thumbnail_uri") && !item["thumbnail_uri"].is_null()) {
        info.thumbnail_uri = item["thumbnail_uri"].get<std::string>();
      }
      manifest.items.push_back(std::move(info));
    }
    for (const auto& s : doc.at("spaces")) {
      manifest.spaces.push_back(
          {s.at("space_id").get<std::string>(), s.at("dim").get<int>(), s.at("file").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  const auto base = manifest_path.parent_path();
  std::vector<EmbeddingSpace> spaces;
  for (auto& entry : manifest.spaces) {
    const auto file = entry.file.is_absolute() ? entry.file : base / entry.file;
    EmbeddingSpace space{entry.space_id, read_embeddings(file), {}};
    if (space.dim() != entry.dim) {
      throw LoadError("dimension mismatch in space '" + entry.space_id + "': manifest says " +
                      std::to_string(entry.dim) + ", file has " + std::to_string(space.dim()));
    }
    if (!spaces.empty() && space.size() != spaces.front().size()) {
      throw LoadError("item-count mismatch: space '" + entry.space_id + "' has " +
                      std::to_string(space.size()) + " rows, space '" + spaces.front().space_id +
                      "' has " + std::to_string(spaces.front().size()));
    }
    normalize_rows(space.vectors, space.space_id);
    spaces.push_back(std::move(space));
  }
  return Corpus(std::move(manifest), std::move(spaces));
}

std::filesystem::path save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json doc;
  doc["items"] = nlohmann::json::array();
  for (const auto& item : corpus.manifest().items) {
    nlohmann::json j{{"item_id", item.item_id}, {"label", item.label}};
    if (item.thumbnail_uri) j["thumbnail_uri"] = *item.thumbnail_uri;
    doc["items"].push_back(std::move(j));
  }
  doc["spaces"] = nlohmann::json::array();
  for (const auto& space : corpus.spaces()) {
    const auto file = space.space_id + ".kise";
    write_embeddings(dir / file, space.vectors);
    doc["spaces"].push_back({{"space_id", space.space_id}, {"dim", space.dim()}, {"file", file}});
  }
  const auto manifest_path = dir / "manifest.json";
  std::ofstream out(manifest_path, std::ios::trunc);
  out << doc.dump(1) << '\n';
  if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
  return manifest_path;
}

double similarity(const EmbeddingSpace& space, ItemIndex a, ItemIndex b) {
  if (a < 0 || b < 0 || a >= space.size() || b >= space.size()) {
    throw std::out_of_range("item index out of range for space '" + space.space_id + "'");
  }
  return space.vectors.row(a).cast<double>().dot(space.vectors.row(b).cast<double>());
}

void project_rows(const EmbeddingSpace& space, const Eigen::Ref<const Eigen::MatrixXd>& directions,
                  Eigen::MatrixXd& out) {
  if (directions.rows() != space.dim()) {
    throw std::invalid_argument("direction dimension " + std::to_string(directions.rows()) +
                                " does not match space '" + space.space_id + "' (" +
                                std::to_string(space.dim()) + ")");
  }
  const auto n = space.size();
  out.resize(n, directions.cols());
  if (space.scan.rows() == n) {
    out.noalias() = space.scan * directions;
    return;
  }
  Eigen::MatrixXd block;
  for (Eigen::Index start = 0; start < n; start += kScanBlock) {
    const auto len = std::min(kScanBlock, n - start);
    block = space.vectors.middleRows(start, len).cast<double>();
    out.middleRows(start, len).noalias() = block * directions;
  }
}

void project_rows(const EmbeddingSpace& space, const std::vector<ItemIndex>& rows,
                  const Eigen::Ref<const Eigen::MatrixXd>& directions, Eigen::MatrixXd& out) {
  if (directions.rows() != space.dim()) {
    throw std::invalid_argument("direction dimension does not match space '" + space.space_id + "'");
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.resize(n, directions.cols());
  const bool cached = space.scan.rows() == space.size();
  Eigen::MatrixXd block(std::min(kScanBlock, n), space.dim());
  for (Eigen::Index start = 0; start < n; start += kScanBlock) {
    const auto len = std::min(kScanBlock, n - start);
    for (Eigen::Index r = 0; r < len; ++r) {
      const auto row = rows[static_cast<std::size_t>(start + r)];
      if (cached) {
        block.row(r) = space.scan.row(row);
      } else {
        block.row(r) = space.vectors.row(row).cast<double>();
      }
    }
    out.middleRows(start, len).noalias() = block.topRows(len) * directions;
  }
}

Eigen::VectorXd similarity_to_all(const EmbeddingSpace& space,
                                  const Eigen::Ref<const Eigen::VectorXd>& query) {
  if (query.size() != space.dim()) {
    throw std::invalid_argument("query dimension " + std::to_string(query.size()) +
                                " does not match space '" + space.space_id + "' (" +
                                std::to_string(space.dim()) + ")");
  }
  const double norm = query.norm();
  if (!(norm > 0.0)) throw std::invalid_argument("zero query vector");
  Eigen::MatrixXd out;
  project_rows(space, query / norm, out);
  return out.col(0);
}

NormStats row_norm_stats(const EmbeddingSpace& space) {
  NormStats stats{std::numeric_limits<double>::infinity(), 0.0, 0.0};
  if (space.size() == 0) return {};
  for (Eigen::Index i = 0; i < space.size(); ++i) {
    const double n = space.vectors.row(i).cast<double>().norm();
    stats.min = std::min(stats.min, n);
    stats.max = std::max(stats.max, n);
    stats.mean += n;
  }
  stats.mean /= static_cast<double>(space.size());
  return stats;
}

}  // namespace kis
