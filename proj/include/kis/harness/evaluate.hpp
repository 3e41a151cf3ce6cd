#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kis/harness/runner.hpp"
#include "kis/harness/stats.hpp"
#include "kis/harness/synth.hpp"

namespace kis::sim {

/// One evaluated configuration. `predictors` must outlive the evaluation
/// and is only read for the "ours" policy.
struct EvalPolicy {
  Policy policy;
  bool prune = true;
  const PredictorSet* predictors = nullptr;

  std::string name() const;  // e.g. "ours-staterep+prune"
};

struct EvalConfig {
  Hyperparams params;  // n_prune applies to pruned policies only
  std::vector<int> ks = {1, 10};
  std::uint64_t seed = 0;
  SessionOptions session;
  int workers = 1;
};

struct PolicyResult {
  std::string name;
  EvalPolicy config;
  // recall[k index][step], step 0 is the initial ranking
  std::vector<std::vector<double>> recall;
  // bucket_recall[bucket][step] at k = 1; nullopt for buckets without queries
  std::vector<std::optional<std::vector<double>>> bucket_recall;
  std::vector<Eigen::Index> final_ranks;  // per query
  std::vector<int> steps_taken;           // per query
  double seconds = 0.0;
  long long iterations = 0;

  double seconds_per_iteration() const { return iterations == 0 ? 0.0 : seconds / static_cast<double>(iterations); }
  /// Recall@1 after the last step.
  double final_recall() const { return recall.front().back(); }
  /// Step-final recall@1 per bucket, skipping empty buckets.
  std::vector<double> final_bucket_recall() const;
};

struct Comparison {
  std::string a;
  std::string b;
  TTestResult per_bucket;  // on step-final recall@1 per bucket
  SignTestResult per_query;
};

struct EvalReport {
  std::vector<int> ks;
  int max_steps = 0;
  std::vector<RankBucket> buckets;
  std::vector<int> bucket_sizes;
  std::vector<PolicyResult> results;
  std::vector<Comparison> comparisons;

  const PolicyResult& result(const std::string& name) const;
  Comparison compare(const std::string& a, const std::string& b) const;

  /// Metrics only, fixed formatting; identical seeds give identical bytes.
  std::string csv() const;
  /// Metrics plus timings and tests.
  nlohmann::json json() const;
};

/// Runs every policy on every query with paired session seeds (query i uses
/// the same seed under every policy). Adds a comparison of each policy
/// against pichunter under the same pruning setting, and of pichunter
/// against random.
EvalReport evaluate(const Corpus& corpus, std::span<const Query> queries, std::span<const EvalPolicy> policies,
                    const EvalConfig& config, std::span<const RankBucket> buckets = kDepthBuckets);

}  // namespace kis::sim
