#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kis/corpus.hpp"
#include "kis/random.hpp"

namespace kis::sim {

/// Synthetic corpus recipe. Row i of space f is
/// normalize(sqrt(c) * z_i + sqrt(1 - c) * e_i^f) with shared z_i and private
/// e_i^f, both standard normal, c = `correlation`. c = 1 gives identical spaces.
struct SynthSpec {
  Eigen::Index n_items = 10000;
  int num_spaces = 3;
  int dim = 64;
  double correlation = 0.7;
  std::uint64_t seed = 1;
};

Corpus synth_corpus(const SynthSpec& spec);

/// Initial-rank interval (lo, hi].
struct RankBucket {
  Eigen::Index lo = 0;
  Eigen::Index hi = 0;

  bool contains(Eigen::Index rank) const { return rank > lo && rank <= hi; }
};

inline constexpr std::array<RankBucket, 5> kDepthBuckets = {
    {{10, 50}, {50, 100}, {100, 500}, {500, 1000}, {1000, 5000}}};

/// Simulated initial query for one target.
struct Query {
  ItemIndex target = 0;
  std::vector<Eigen::VectorXd> vectors;  // one per space, unit norm
  double sigma = 0.0;
  Eigen::Index initial_rank = 0;
  int bucket = -1;  // index into the bucket list, -1 when uncalibrated
};

/// normalize(target row + sigma * n_f) per space, with n_f ~ N(0, I / dim).
Query make_query(const Corpus& corpus, ItemIndex target, double sigma, Rng& rng);

/// `per_bucket` queries per bucket, each with a noise level searched so the
/// target's initial rank lands inside the bucket. Throws when a bucket cannot
/// be populated.
std::vector<Query> calibrated_queries(const Corpus& corpus, std::span<const RankBucket> buckets, int per_bucket,
                                      std::uint64_t seed);

/// One JSON object per line: target item id, sigma, initial rank, bucket,
/// per-space vectors.
void write_queries(const std::filesystem::path& path, const Corpus& corpus, std::span<const Query> queries);
std::vector<Query> read_queries(const std::filesystem::path& path, const Corpus& corpus);

/// Mean over space pairs of the rate at which two spaces' oracle choices agree
/// on random (pair, target) triples.
double oracle_agreement(const Corpus& corpus, int samples, std::uint64_t seed);

}  // namespace kis::sim
