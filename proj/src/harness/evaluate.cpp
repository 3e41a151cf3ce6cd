#include "kis/harness/evaluate.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <stdexcept>
#include <thread>

#include "kis/random.hpp"

namespace kis::sim {

using nlohmann::json;

namespace {

struct SessionRecord {
  RankTrace trace;
  double seconds = 0.0;
};

int bucket_of(const Query& q, std::span<const RankBucket> buckets) {
  if (q.bucket >= 0 && static_cast<std::size_t>(q.bucket) < buckets.size() &&
      buckets[static_cast<std::size_t>(q.bucket)].contains(q.initial_rank)) {
    return q.bucket;
  }
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    if (buckets[b].contains(q.initial_rank)) return static_cast<int>(b);
  }
  return -1;
}

// Rank after `step` executed steps; sessions that stopped early keep their last rank.
Eigen::Index rank_at(const RankTrace& trace, int step) {
  if (step == 0 || trace.ranks.empty()) return trace.initial_rank;
  const auto idx = static_cast<std::size_t>(std::min<int>(step, static_cast<int>(trace.ranks.size())));
  return trace.ranks[idx - 1];
}

std::vector<SessionRecord> run_all(const Corpus& corpus, std::span<const Query> queries,
                                   std::span<const Eigen::VectorXd> scores, const EvalPolicy& policy,
                                   const EvalConfig& config) {
  Hyperparams params = config.params;
  if (!policy.prune) params.n_prune = 0;
  std::vector<SessionRecord> out(queries.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < queries.size(); i = next++) {
      const auto start = std::chrono::steady_clock::now();
      SessionOptions opts = config.session;
      opts.initial_scores = &scores[i];
      out[i].trace = run_session(corpus, queries[i].target, queries[i].vectors, policy.policy, params,
                                 policy.predictors, derive_seed(config.seed, {i}), opts);
      out[i].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  const int workers = std::max(1, config.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  return out;
}

std::vector<double> reached_flags(const PolicyResult& r) {
  std::vector<double> out;
  for (auto rank : r.final_ranks) out.push_back(rank == 1 ? 1.0 : 0.0);
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string bucket_name(const RankBucket& b) {
  return "(" + std::to_string(b.lo) + "," + std::to_string(b.hi) + "]";
}

json test_json(const TTestResult& t) {
  json j;
  j["t"] = std::isfinite(t.t) ? json(t.t) : json(t.t > 0 ? "inf" : "-inf");
  j["p"] = t.degenerate ? json(nullptr) : json(t.p);
  j["df"] = t.df;
  j["mean_difference"] = t.mean_difference;
  j["degenerate"] = t.degenerate;
  return j;
}

}  // namespace

std::string EvalPolicy::name() const {
  return policy.name() + (prune ? "+prune" : "");
}

std::vector<double> PolicyResult::final_bucket_recall() const {
  std::vector<double> out;
  for (const auto& b : bucket_recall) {
    if (b) out.push_back(b->back());
  }
  return out;
}

const PolicyResult& EvalReport::result(const std::string& name) const {
  for (const auto& r : results) {
    if (r.name == name) return r;
  }
  throw std::out_of_range("no result for policy '" + name + "'");
}

Comparison EvalReport::compare(const std::string& a, const std::string& b) const {
  const auto& ra = result(a);
  const auto& rb = result(b);
  Comparison c{a, b, {}, {}};
  const auto ba = ra.final_bucket_recall();
  const auto bb = rb.final_bucket_recall();
  if (ba.size() >= 2) c.per_bucket = paired_t_test(ba, bb);
  const auto qa = reached_flags(ra);
  const auto qb = reached_flags(rb);
  c.per_query = sign_test(qa, qb);
  return c;
}

std::string EvalReport::csv() const {
  std::string out = "policy,bucket,k,step,recall,queries\n";
  const int total = static_cast<int>(results.empty() ? 0 : results.front().final_ranks.size());
  for (const auto& r : results) {
    for (std::size_t k = 0; k < ks.size(); ++k) {
      for (std::size_t s = 0; s < r.recall[k].size(); ++s) {
        out += r.name + ",all," + std::to_string(ks[k]) + "," + std::to_string(s) + "," +
               format_double(r.recall[k][s]) + "," + std::to_string(total) + "\n";
      }
    }
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      if (!r.bucket_recall[b]) continue;
      for (std::size_t s = 0; s < r.bucket_recall[b]->size(); ++s) {
        out += r.name + "," + bucket_name(buckets[b]) + ",1," + std::to_string(s) + "," +
               format_double((*r.bucket_recall[b])[s]) + "," + std::to_string(bucket_sizes[b]) + "\n";
      }
    }
  }
  return out;
}

json EvalReport::json() const {
  nlohmann::json j;
  j["ks"] = ks;
  j["max_steps"] = max_steps;
  j["buckets"] = nlohmann::json::array();
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    j["buckets"].push_back({{"interval", bucket_name(buckets[b])}, {"queries", bucket_sizes[b]}});
  }
  j["policies"] = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json p;
    p["name"] = r.name;
    p["prune"] = r.config.prune;
    for (std::size_t k = 0; k < ks.size(); ++k) p["recall@" + std::to_string(ks[k])] = r.recall[k];
    p["bucket_recall@1"] = nlohmann::json::array();
    for (const auto& b : r.bucket_recall) p["bucket_recall@1"].push_back(b ? nlohmann::json(*b) : nlohmann::json());
    p["seconds"] = r.seconds;
    p["iterations"] = r.iterations;
    p["seconds_per_iteration"] = r.seconds_per_iteration();
    j["policies"].push_back(std::move(p));
  }
  j["comparisons"] = nlohmann::json::array();
  for (const auto& c : comparisons) {
    nlohmann::json cj;
    cj["a"] = c.a;
    cj["b"] = c.b;
    cj["paired_t_test_per_bucket"] = test_json(c.per_bucket);
    cj["sign_test_per_query"] = {{"wins", c.per_query.wins},
                                 {"losses", c.per_query.losses},
                                 {"ties", c.per_query.ties},
                                 {"p", c.per_query.p}};
    j["comparisons"].push_back(std::move(cj));
  }
  return j;
}

EvalReport evaluate(const Corpus& corpus, std::span<const Query> queries, std::span<const EvalPolicy> policies,
                    const EvalConfig& config, std::span<const RankBucket> buckets) {
  if (queries.empty()) throw std::invalid_argument("evaluation needs at least one query");
  if (config.ks.empty()) throw std::invalid_argument("evaluation needs at least one k");
  config.params.validate();

  EvalReport report;
  report.ks = config.ks;
  report.max_steps = config.params.max_steps;
  report.buckets.assign(buckets.begin(), buckets.end());
  report.bucket_sizes.assign(buckets.size(), 0);
  std::vector<int> query_bucket;
  for (const auto& q : queries) {
    query_bucket.push_back(bucket_of(q, buckets));
    if (query_bucket.back() >= 0) ++report.bucket_sizes[static_cast<std::size_t>(query_bucket.back())];
  }

  std::vector<Eigen::VectorXd> scores;
  scores.reserve(queries.size());
  for (const auto& q : queries) scores.push_back(query_scores(corpus, q.vectors));

  const auto steps = static_cast<std::size_t>(config.params.max_steps) + 1;
  for (const auto& policy : policies) {
    const auto records = run_all(corpus, queries, scores, policy, config);
    PolicyResult r;
    r.name = policy.name();
    r.config = policy;
    r.recall.assign(config.ks.size(), std::vector<double>(steps, 0.0));
    std::vector<std::vector<double>> bucket_hits(buckets.size(), std::vector<double>(steps, 0.0));
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& trace = records[i].trace;
      for (std::size_t s = 0; s < steps; ++s) {
        const auto rank = rank_at(trace, static_cast<int>(s));
        for (std::size_t k = 0; k < config.ks.size(); ++k) {
          if (rank <= config.ks[k]) r.recall[k][s] += 1.0;
        }
        if (query_bucket[i] >= 0 && rank == 1) bucket_hits[static_cast<std::size_t>(query_bucket[i])][s] += 1.0;
      }
      r.final_ranks.push_back(rank_at(trace, config.params.max_steps));
      r.steps_taken.push_back(trace.steps_taken);
      r.seconds += records[i].seconds;
      r.iterations += trace.steps_taken;
    }
    for (auto& row : r.recall) {
      for (auto& v : row) v /= static_cast<double>(queries.size());
    }
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      if (report.bucket_sizes[b] == 0) {
        r.bucket_recall.emplace_back(std::nullopt);
        continue;
      }
      auto row = bucket_hits[b];
      for (auto& v : row) v /= static_cast<double>(report.bucket_sizes[b]);
      r.bucket_recall.emplace_back(std::move(row));
    }
    spdlog::info("{}: recall@1 after {} steps = {:.4f} ({:.1f} ms/iteration)", r.name, config.params.max_steps,
                 r.final_recall(), 1000.0 * r.seconds_per_iteration());
    report.results.push_back(std::move(r));
  }

  auto find = [&](PolicyKind kind, Ablation ablation, bool prune) -> const PolicyResult* {
    for (const auto& r : report.results) {
      if (r.config.policy.kind == kind && r.config.policy.ablation == ablation && r.config.prune == prune) return &r;
    }
    return nullptr;
  };
  for (const auto& r : report.results) {
    if (r.config.policy.kind == PolicyKind::pichunter) {
      if (const auto* rnd = find(PolicyKind::random, Ablation::none, r.config.prune)) {
        report.comparisons.push_back(report.compare(r.name, rnd->name));
      }
      continue;
    }
    if (r.config.policy.kind == PolicyKind::random) continue;
    if (const auto* pic = find(PolicyKind::pichunter, Ablation::none, r.config.prune)) {
      report.comparisons.push_back(report.compare(r.name, pic->name));
    }
  }
  return report;
}

}  // namespace kis::sim
