#include "kis/harness/synth.hpp"

#include <algorithm>
#include <fstream>
#include <cmath>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "kis/session.hpp"
#include "kis/simulator.hpp"

namespace kis::sim {

namespace {

constexpr double kSigmaMax = 8.0;
constexpr int kBisectionSteps = 40;
constexpr int kAttemptsPerQuery = 200;

// Per-space projections used to rank the target cheaply for any sigma.
struct QueryProbe {
  std::vector<Eigen::VectorXd> target_proj;  // V_f * t_f
  std::vector<Eigen::VectorXd> noise_proj;   // V_f * n_f
  std::vector<double> t_dot_n;
  std::vector<double> n_norm2;

  Eigen::Index rank(ItemIndex target, double sigma, Eigen::VectorXd& scratch) const {
    scratch.setZero(target_proj.front().size());
    for (std::size_t f = 0; f < target_proj.size(); ++f) {
      const double norm = std::sqrt(1.0 + 2.0 * sigma * t_dot_n[f] + sigma * sigma * n_norm2[f]);
      scratch += (target_proj[f] + sigma * noise_proj[f]) / norm;
    }
    return rank_in_scores(scratch, target);
  }
};

std::vector<Eigen::VectorXd> draw_noise(const Corpus& corpus, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> noise;
  for (const auto& space : corpus.spaces()) {
    Eigen::VectorXd n(space.dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(space.dim()));
    for (Eigen::Index k = 0; k < n.size(); ++k) n[k] = normal(rng) * scale;
    noise.push_back(std::move(n));
  }
  return noise;
}

std::vector<Eigen::VectorXd> query_vectors(const Corpus& corpus, ItemIndex target, double sigma,
                                           const std::vector<Eigen::VectorXd>& noise) {
  std::vector<Eigen::VectorXd> out;
  for (std::size_t f = 0; f < corpus.num_spaces(); ++f) {
    Eigen::VectorXd q = corpus.space(f).vectors.row(target).cast<double>().transpose() + sigma * noise[f];
    q.normalize();
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace

Corpus synth_corpus(const SynthSpec& spec) {
  if (spec.n_items <= 0 || spec.num_spaces <= 0 || spec.dim <= 0) throw std::invalid_argument("bad synth spec");
  if (spec.correlation < 0.0 || spec.correlation > 1.0) throw std::invalid_argument("correlation must be in [0, 1]");

  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto n = spec.n_items;
  Eigen::MatrixXd shared(n, spec.dim);
  for (Eigen::Index i = 0; i < shared.size(); ++i) shared.data()[i] = normal(rng);

  const double a = std::sqrt(spec.correlation);
  const double b = std::sqrt(1.0 - spec.correlation);
  std::vector<EmbeddingSpace> spaces;
  Eigen::MatrixXd priv(n, spec.dim);
  for (int f = 0; f < spec.num_spaces; ++f) {
    for (Eigen::Index i = 0; i < priv.size(); ++i) priv.data()[i] = normal(rng);
    Eigen::MatrixXd mixed = a * shared + b * priv;
    mixed.rowwise().normalize();
    EmbeddingSpace space{"s" + std::to_string(f), mixed.cast<float>(), {}};
    normalize_rows(space.vectors, space.space_id);
    spaces.push_back(std::move(space));
  }

  CorpusManifest manifest;
  for (Eigen::Index i = 0; i < n; ++i) {
    manifest.items.push_back({"item" + std::to_string(i), "synthetic item " + std::to_string(i), std::nullopt});
  }
  for (const auto& s : spaces) manifest.spaces.push_back({s.space_id, spec.dim, s.space_id + ".kise"});
  return Corpus(std::move(manifest), std::move(spaces));
}

Query make_query(const Corpus& corpus, ItemIndex target, double sigma, Rng& rng) {
  const auto noise = draw_noise(corpus, rng);
  Query q;
  q.target = target;
  q.sigma = sigma;
  q.vectors = query_vectors(corpus, target, sigma, noise);
  q.initial_rank = rank_in_scores(query_scores(corpus, q.vectors), target);
  return q;
}

std::vector<Query> calibrated_queries(const Corpus& corpus, std::span<const RankBucket> buckets, int per_bucket,
                                      std::uint64_t seed) {
  std::vector<Query> out;
  const auto n = corpus.num_items();
  Eigen::VectorXd scratch;
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    const auto bucket = buckets[b];
    if (bucket.lo + 1 > n) throw std::invalid_argument("bucket starts beyond the corpus size");
    Rng rng(derive_seed(seed, {0xb0c, b}));
    std::uniform_int_distribution<ItemIndex> pick_item(0, n - 1);
    const double log_lo = std::log(static_cast<double>(bucket.lo + 1));
    const double log_hi = std::log(static_cast<double>(std::min(bucket.hi, n)));
    std::uniform_real_distribution<double> pick_log_rank(log_lo, log_hi);

    int made = 0;
    int failures = 0;
    while (made < per_bucket) {
      const ItemIndex target = pick_item(rng);
      const auto desired = static_cast<Eigen::Index>(std::lround(std::exp(pick_log_rank(rng))));
      const auto noise = draw_noise(corpus, rng);

      QueryProbe probe;
      for (std::size_t f = 0; f < corpus.num_spaces(); ++f) {
        const auto& space = corpus.space(f);
        const Eigen::VectorXd t = space.vectors.row(target).cast<double>().transpose();
        Eigen::MatrixXd dirs(space.dim(), 2);
        dirs.col(0) = t;
        dirs.col(1) = noise[f];
        Eigen::MatrixXd proj;
        project_rows(space, dirs, proj);
        probe.target_proj.push_back(proj.col(0));
        probe.noise_proj.push_back(proj.col(1));
        probe.t_dot_n.push_back(t.dot(noise[f]));
        probe.n_norm2.push_back(noise[f].squaredNorm());
      }

      double lo_s = 0.0, hi_s = kSigmaMax;
      double sigma = hi_s;
      for (int it = 0; it < kBisectionSteps; ++it) {
        sigma = 0.5 * (lo_s + hi_s);
        const auto r = probe.rank(target, sigma, scratch);
        if (r == desired) break;
        (r < desired ? lo_s : hi_s) = sigma;
      }

      Query q;
      q.target = target;
      q.sigma = sigma;
      q.vectors = query_vectors(corpus, target, sigma, noise);
      q.initial_rank = rank_in_scores(query_scores(corpus, q.vectors), target);
      q.bucket = static_cast<int>(b);
      if (bucket.contains(q.initial_rank)) {
        out.push_back(std::move(q));
        ++made;
        failures = 0;
      } else if (++failures > kAttemptsPerQuery) {
        throw std::runtime_error("cannot populate rank bucket (" + std::to_string(bucket.lo) + ", " +
                                 std::to_string(bucket.hi) + "] even at sigma=" + std::to_string(kSigmaMax));
      }
    }
  }
  return out;
}

void write_queries(const std::filesystem::path& path, const Corpus& corpus, std::span<const Query> queries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& q : queries) {
    nlohmann::json j;
    j["target_id"] = corpus.manifest().items.at(static_cast<std::size_t>(q.target)).item_id;
    j["sigma"] = q.sigma;
    j["initial_rank"] = q.initial_rank;
    j["bucket"] = q.bucket;
    j["vectors"] = nlohmann::json::array();
    for (const auto& v : q.vectors) j["vectors"].push_back(std::vector<double>(v.data(), v.data() + v.size()));
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Query> read_queries(const std::filesystem::path& path, const Corpus& corpus) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Query> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      Query q;
      const auto id = j.at("target_id").get<std::string>();
      const auto idx = corpus.find_item(id);
      if (!idx) throw std::runtime_error(where + "unknown target_id '" + id + "'");
      q.target = *idx;
      q.sigma = j.value("sigma", 0.0);
      q.bucket = j.value("bucket", -1);
      const auto& vs = j.at("vectors");
      if (vs.size() != corpus.num_spaces()) throw std::runtime_error(where + "expected one vector per space");
      for (std::size_t f = 0; f < vs.size(); ++f) {
        const auto v = vs[f].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(v.size()) != corpus.space(f).dim()) {
          throw std::runtime_error(where + "vector dimension does not match space '" + corpus.space(f).space_id + "'");
        }
        q.vectors.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
      // Recomputed rather than trusted, so a query file stays valid for its corpus only.
      q.initial_rank = rank_in_scores(query_scores(corpus, q.vectors), q.target);
      out.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(where + e.what());
    }
  }
  return out;
}

double oracle_agreement(const Corpus& corpus, int samples, std::uint64_t seed) {
  const auto f_count = corpus.num_spaces();
  if (f_count < 2) return 1.0;
  Rng rng(seed);
  std::uniform_int_distribution<ItemIndex> pick(0, corpus.num_items() - 1);
  long long agree = 0, total = 0;
  for (int s = 0; s < samples; ++s) {
    const ItemIndex a = pick(rng), b = pick(rng), t = pick(rng);
    if (a == b || a == t || b == t) continue;
    std::vector<int> choice;
    for (std::size_t f = 0; f < f_count; ++f) choice.push_back(oracle_choice(corpus, f, {a, b}, t));
    for (std::size_t f = 0; f < f_count; ++f) {
      for (std::size_t g = f + 1; g < f_count; ++g) {
        agree += choice[f] == choice[g] ? 1 : 0;
        ++total;
      }
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(total);
}

}  // namespace kis::sim
