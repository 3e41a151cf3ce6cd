#include "kis/harness/trajectory.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "kis/harness/runner.hpp"
#include "kis/perception/tokens.hpp"
#include "kis/random.hpp"
#include "kis/simulator.hpp"

namespace kis::sim {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSessionStream = 0x7a5e;
constexpr std::uint64_t kStrategyStream = 0x57a7;

json vector_json(const Eigen::VectorXd& v) {
  // float precision is all the corpus carries
  json out = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(static_cast<float>(v[k]));
  return out;
}

Eigen::VectorXd vector_from(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  return v;
}

json record_json(const TrajectoryRecord& r) {
  json j;
  j["seed"] = r.seed;
  j["target"] = r.target;
  j["sigma"] = r.sigma;
  j["initial_rank"] = r.initial_rank;
  j["query"] = json::array();
  for (const auto& q : r.query) j["query"].push_back(vector_json(q));
  j["steps"] = json::array();
  for (const auto& s : r.steps) {
    json step;
    step["strategy"] = std::string(to_string(s.display.strategy));
    step["pairs"] = json::array();
    for (const auto& p : s.display.pairs) step["pairs"].push_back({p.a, p.b});
    step["labels"] = s.labels;
    step["alignment"] = s.alignment;
    step["state"] = json::array();
    for (const auto& e : s.state_embeddings) step["state"].push_back(vector_json(e));
    step["target_rank"] = s.target_rank;
    j["steps"].push_back(std::move(step));
  }
  j["terminal_step"] = r.terminal_step();
  return j;
}

TrajectoryRecord record_from(const json& j) {
  TrajectoryRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.target = j.at("target").get<ItemIndex>();
  r.sigma = j.at("sigma").get<double>();
  r.initial_rank = j.at("initial_rank").get<Eigen::Index>();
  for (const auto& q : j.at("query")) r.query.push_back(vector_from(q));
  for (const auto& s : j.at("steps")) {
    TrajectoryStep step;
    step.display.strategy = parse_strategy(s.at("strategy").get<std::string>());
    for (const auto& p : s.at("pairs")) step.display.pairs.push_back({p.at(0).get<ItemIndex>(), p.at(1).get<ItemIndex>()});
    step.labels = s.at("labels").get<std::vector<int>>();
    step.alignment = s.at("alignment").get<std::vector<std::vector<int>>>();
    for (const auto& e : s.at("state")) step.state_embeddings.push_back(vector_from(e));
    step.target_rank = s.at("target_rank").get<Eigen::Index>();
    r.steps.push_back(std::move(step));
  }
  return r;
}

}  // namespace

std::vector<TrajectoryRecord> generate_trajectories(const Corpus& corpus, const TrajectoryOptions& options,
                                                    TrajectoryStats* stats) {
  if (options.num_sessions <= 0) throw std::invalid_argument("num_sessions must be positive");
  options.params.validate();
  const int buckets = static_cast<int>(kDepthBuckets.size());
  const int per_bucket = (options.num_sessions + buckets - 1) / buckets;
  auto queries = calibrated_queries(corpus, kDepthBuckets, per_bucket, derive_seed(options.seed, {0x9e7}));
  queries.resize(static_cast<std::size_t>(options.num_sessions));

  std::vector<TrajectoryRecord> kept;
  TrajectoryStats local;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    const auto seed = derive_seed(options.seed, {kSessionStream, i});
    InteractiveSearch search(corpus, q.vectors, options.params, {PolicyKind::aligned}, nullptr, seed);
    search.mutable_state().target = q.target;
    Rng strategy_rng(derive_seed(seed, {kStrategyStream}));
    std::bernoulli_distribution diverse(options.diverse_rate);

    TrajectoryRecord record{seed, q.target, q.sigma, q.initial_rank, q.vectors, {}};
    Eigen::Index rank = rank_of(search.state(), q.target).rank;
    while (rank != 1 && !search.finished()) {
      const auto strategy = diverse(strategy_rng) ? DisplayStrategy::diverse : DisplayStrategy::greedy;
      TrajectoryStep step;
      step.display = search.display(strategy);
      std::vector<OracleVerdict> verdicts;
      for (const auto& pair : step.display.pairs) {
        verdicts.push_back(judge(corpus, pair, q.target));
        step.labels.push_back(verdicts.back().majority);
        step.alignment.push_back(verdicts.back().alignment);
      }
      search.feedback(step.labels, &verdicts);
      step.state_embeddings = search.state().history.back().state_embeddings;
      rank = rank_of(search.state(), q.target).rank;
      step.target_rank = rank;
      record.steps.push_back(std::move(step));
    }
    ++local.sessions;
    // A target that starts at rank 1 gives no judgments to learn from.
    if (rank == 1 && !record.steps.empty()) {
      ++local.kept;
      kept.push_back(std::move(record));
    }
  }
  spdlog::info("trajectories: kept {} of {} sessions", local.kept, local.sessions);
  if (stats != nullptr) *stats = local;
  return kept;
}

void write_trajectories(const std::filesystem::path& path, std::span<const TrajectoryRecord> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << record_json(r).dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<TrajectoryRecord> read_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<TrajectoryRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from(json::parse(line)));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

perception::Dataset build_dataset(const Corpus& corpus, std::size_t space_index,
                                  std::span<const TrajectoryRecord> records) {
  if (space_index >= corpus.num_spaces()) throw std::out_of_range("space index out of range");
  const auto& space = corpus.space(space_index);
  perception::Dataset data;
  for (const auto& r : records) {
    if (r.query.size() != corpus.num_spaces()) throw std::invalid_argument("record has wrong number of query vectors");
    perception::SequenceExample ex;
    ex.query = r.query[space_index];
    for (const auto& s : r.steps) {
      const auto judgments = make_judgments(s.display, s.labels);
      ex.steps.push_back(perception::encode_judgments(space, judgments, s.state_embeddings.at(space_index)));
      std::vector<double> labels;
      for (const auto& a : s.alignment) labels.push_back(a.at(space_index));
      ex.labels.push_back(std::move(labels));
    }
    data.sequences.push_back(std::move(ex));
  }
  return data;
}

}  // namespace kis::sim
