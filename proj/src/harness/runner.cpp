#include "kis/harness/runner.hpp"

#include <stdexcept>

#include "kis/random.hpp"

namespace kis::sim {

namespace {

constexpr std::uint64_t kDisplayStream = 0xd15b;
constexpr std::uint64_t kCoinStream = 0xc011;
constexpr std::uint64_t kNoiseStream = 0x401e;

}  // namespace

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::random: return "random";
    case PolicyKind::pichunter: return "pichunter";
    case PolicyKind::ours: return "ours";
    case PolicyKind::aligned: return "aligned";
  }
  return "?";
}

std::string_view to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::none: return "none";
    case Ablation::soft_update: return "softupd";
    case Ablation::state_rep: return "staterep";
    case Ablation::distance_emb: return "distemb";
  }
  return "?";
}

PolicyKind parse_policy_kind(std::string_view name) {
  if (name == "random") return PolicyKind::random;
  if (name == "pichunter") return PolicyKind::pichunter;
  if (name == "ours") return PolicyKind::ours;
  if (name == "aligned") return PolicyKind::aligned;
  throw std::invalid_argument("unknown policy '" + std::string(name) + "'");
}

Ablation parse_ablation(std::string_view name) {
  if (name == "none" || name.empty()) return Ablation::none;
  if (name == "softupd") return Ablation::soft_update;
  if (name == "staterep") return Ablation::state_rep;
  if (name == "distemb") return Ablation::distance_emb;
  throw std::invalid_argument("unknown ablation '" + std::string(name) + "'");
}

std::string Policy::name() const {
  std::string out(to_string(kind));
  if (ablation != Ablation::none) out += "-" + std::string(to_string(ablation));
  return out;
}

InteractiveSearch::InteractiveSearch(const Corpus& corpus, std::vector<Eigen::VectorXd> queries, Hyperparams params,
                                     Policy policy, const PredictorSet* predictors, std::uint64_t seed)
    : corpus_(corpus),
      queries_(std::move(queries)),
      params_(params),
      policy_(policy),
      predictors_(predictors),
      seed_(seed),
      state_(init_session(corpus, queries_, params)),
      token_history_(corpus.num_spaces()) {
  set_policy(policy);
}

InteractiveSearch::InteractiveSearch(const Corpus& corpus, std::vector<Eigen::VectorXd> queries,
                                     const Eigen::VectorXd& scores, Hyperparams params, Policy policy,
                                     const PredictorSet* predictors, std::uint64_t seed)
    : corpus_(corpus),
      queries_(std::move(queries)),
      params_(params),
      policy_(policy),
      predictors_(predictors),
      seed_(seed),
      state_(init_session(scores, params)),
      token_history_(corpus.num_spaces()) {
  if (queries_.size() != corpus.num_spaces()) throw std::invalid_argument("expected one query vector per space");
  if (scores.size() != corpus.num_items()) throw std::invalid_argument("score vector length does not match corpus");
  set_policy(policy);
}

void InteractiveSearch::set_policy(Policy policy) {
  if (policy.kind == PolicyKind::ours) {
    if (predictors_ == nullptr || predictors_->size() != corpus_.num_spaces()) {
      throw std::invalid_argument("policy 'ours' needs one trained predictor per space");
    }
  }
  policy_ = policy;
}

const Display& InteractiveSearch::display(DisplayStrategy strategy) {
  if (!pending_) {
    if (finished()) throw std::logic_error("session reached max_steps");
    pending_ = make_display(state_, strategy, params_,
                            derive_seed(seed_, {kDisplayStream, static_cast<std::uint64_t>(state_.step)}));
  }
  return *pending_;
}

std::vector<std::vector<double>> InteractiveSearch::confidences(
    const std::vector<Judgment>& judgments, const std::vector<perception::StepTokens>& step_tokens,
    const std::vector<OracleVerdict>* verdicts) {
  const auto f_count = corpus_.num_spaces();
  std::vector<std::vector<double>> conf(f_count, std::vector<double>(judgments.size(), 1.0));
  switch (policy_.kind) {
    case PolicyKind::pichunter:
      break;
    case PolicyKind::random: {
      Rng rng(derive_seed(seed_, {kCoinStream, static_cast<std::uint64_t>(state_.step)}));
      std::bernoulli_distribution coin(0.5);
      for (auto& row : conf) {
        for (auto& c : row) c = coin(rng) ? 1.0 : 0.0;
      }
      break;
    }
    case PolicyKind::aligned:
      if (verdicts == nullptr || verdicts->size() != judgments.size()) {
        throw std::invalid_argument("aligned policy needs one verdict per judgment");
      }
      for (std::size_t f = 0; f < f_count; ++f) {
        for (std::size_t j = 0; j < judgments.size(); ++j) conf[f][j] = (*verdicts)[j].alignment.at(f);
      }
      break;
    case PolicyKind::ours:
      for (std::size_t f = 0; f < f_count; ++f) {
        auto history = token_history_[f];
        history.push_back(step_tokens[f]);
        conf[f] = perception::predict((*predictors_)[f], queries_[f], history);
        if (policy_.ablation == Ablation::soft_update) {
          for (auto& c : conf[f]) c = c >= 0.5 ? 1.0 : 0.0;
        }
      }
      break;
  }
  return conf;
}

StepOutcome InteractiveSearch::feedback(const std::vector<int>& labels, const std::vector<OracleVerdict>* verdicts) {
  if (!pending_) throw std::logic_error("no pending display");
  const auto judgments = make_judgments(*pending_, labels);

  const auto f_count = corpus_.num_spaces();
  HistoryEntry entry{*pending_, labels, {}};
  std::vector<perception::StepTokens> step_tokens;
  const auto top = top_items(state_, perception::kStateTopK);
  for (std::size_t f = 0; f < f_count; ++f) {
    entry.state_embeddings.push_back(perception::state_embedding(corpus_.space(f), top));
    step_tokens.push_back(perception::encode_judgments(corpus_.space(f), judgments, entry.state_embeddings.back()));
  }

  StepOutcome outcome;
  outcome.confidences = confidences(judgments, step_tokens, verdicts);
  std::vector<Eigen::VectorXd> temporals;
  for (std::size_t f = 0; f < f_count; ++f) {
    temporals.push_back(temporal_soft(state_, judgments, outcome.confidences[f], corpus_.space(f), params_.rho));
  }
  apply_update(state_, temporals);
  state_.history.push_back(std::move(entry));
  for (std::size_t f = 0; f < f_count; ++f) token_history_[f].push_back(std::move(step_tokens[f]));
  pending_.reset();
  outcome.step = state_.step;
  return outcome;
}

RankTrace run_session(const Corpus& corpus, ItemIndex target, const std::vector<Eigen::VectorXd>& queries,
                      const Policy& policy, const Hyperparams& params, const PredictorSet* predictors,
                      std::uint64_t seed, const SessionOptions& options) {
  InteractiveSearch search = options.initial_scores != nullptr
                                 ? InteractiveSearch(corpus, queries, *options.initial_scores, params, policy,
                                                     predictors, seed)
                                 : InteractiveSearch(corpus, queries, params, policy, predictors, seed);
  search.mutable_state().target = target;
  RankTrace trace;
  trace.initial_rank = rank_of(search.state(), target).rank;
  Eigen::Index rank = trace.initial_rank;
  Rng noise_rng(derive_seed(seed, {kNoiseStream}));
  std::bernoulli_distribution flip(options.label_noise);

  while (!search.finished() && !(options.early_stop && rank == 1)) {
    const auto& display = search.display(options.strategy);
    std::vector<OracleVerdict> verdicts;
    std::vector<int> labels;
    for (const auto& pair : display.pairs) {
      auto v = judge(corpus, pair, target);
      if (options.label_noise > 0.0 && flip(noise_rng)) flip_majority(v);
      labels.push_back(v.majority);
      verdicts.push_back(std::move(v));
    }
    search.feedback(labels, &verdicts);
    rank = rank_of(search.state(), target).rank;
    trace.ranks.push_back(rank);
    ++trace.steps_taken;
  }
  return trace;
}

}  // namespace kis::sim
