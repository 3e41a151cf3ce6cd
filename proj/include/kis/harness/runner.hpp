#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kis/corpus.hpp"
#include "kis/display.hpp"
#include "kis/perception/predictor.hpp"
#include "kis/perception/tokens.hpp"
#include "kis/session.hpp"
#include "kis/simulator.hpp"

namespace kis::sim {

/// How per-space confidences are chosen for each judgment.
///  - pichunter: every space weighted 1 (unfiltered update)
///  - random:    each space independently included (1) or excluded (0) per judgment
///  - ours:      predicted confidences from the per-space predictors
///  - aligned:   the simulator's alignment bits (teacher policy for trajectory generation)
enum class PolicyKind { random, pichunter, ours, aligned };

/// Model ablations. `soft_update` binarizes predicted confidences at 0.5;
/// `state_rep` and `distance_emb` are carried by the predictors' configs and
/// only tag the policy here.
enum class Ablation { none, soft_update, state_rep, distance_emb };

struct Policy {
  PolicyKind kind = PolicyKind::pichunter;
  Ablation ablation = Ablation::none;

  std::string name() const;
};

std::string_view to_string(PolicyKind kind);
std::string_view to_string(Ablation ablation);
PolicyKind parse_policy_kind(std::string_view name);
Ablation parse_ablation(std::string_view name);

using PredictorSet = std::vector<perception::Predictor<float>>;

struct StepOutcome {
  int step = 0;
  std::vector<std::vector<double>> confidences;  // [space][pair]
};

/// One search session driven step by step: the shared core of the simulator
/// loop and the HTTP service.
///
/// A display is generated on demand and cached until feedback arrives; the
/// display seed depends only on (seed, step), so two drivers with the same
/// seed and labels follow identical trajectories.
class InteractiveSearch {
 public:
  InteractiveSearch(const Corpus& corpus, std::vector<Eigen::VectorXd> queries, Hyperparams params, Policy policy,
                    const PredictorSet* predictors, std::uint64_t seed);
  /// Same, reusing precomputed query scores (see query_scores).
  InteractiveSearch(const Corpus& corpus, std::vector<Eigen::VectorXd> queries, const Eigen::VectorXd& scores,
                    Hyperparams params, Policy policy, const PredictorSet* predictors, std::uint64_t seed);

  const SessionState& state() const { return state_; }
  SessionState& mutable_state() { return state_; }
  const Hyperparams& params() const { return params_; }
  const Policy& policy() const { return policy_; }
  void set_policy(Policy policy);
  std::uint64_t seed() const { return seed_; }
  const std::vector<Eigen::VectorXd>& queries() const { return queries_; }

  bool finished() const { return state_.step >= params_.max_steps; }
  const std::optional<Display>& pending_display() const { return pending_; }

  /// Returns the cached display, creating it with `strategy` if none is pending.
  const Display& display(DisplayStrategy strategy = DisplayStrategy::greedy);

  /// Applies labels for the pending display. `verdicts` is required by the
  /// aligned policy and ignored otherwise.
  StepOutcome feedback(const std::vector<int>& labels, const std::vector<OracleVerdict>* verdicts = nullptr);

 private:
  std::vector<std::vector<double>> confidences(const std::vector<Judgment>& judgments,
                                               const std::vector<perception::StepTokens>& step_tokens,
                                               const std::vector<OracleVerdict>* verdicts);

  const Corpus& corpus_;
  std::vector<Eigen::VectorXd> queries_;
  Hyperparams params_;
  Policy policy_;
  const PredictorSet* predictors_;
  std::uint64_t seed_;
  SessionState state_;
  std::optional<Display> pending_;
  std::vector<std::vector<perception::StepTokens>> token_history_;  // [space][step]
};

struct RankTrace {
  Eigen::Index initial_rank = 0;
  std::vector<Eigen::Index> ranks;  // target rank after each executed step
  int steps_taken = 0;
  bool reached() const { return initial_rank == 1 || (!ranks.empty() && ranks.back() == 1); }
};

struct SessionOptions {
  double label_noise = 0.0;  // probability of flipping the majority label
  DisplayStrategy strategy = DisplayStrategy::greedy;
  bool early_stop = true;  // stop once the target reaches rank 1
  const Eigen::VectorXd* initial_scores = nullptr;  // query_scores result, to skip recomputing it
};

/// Simulated session: display -> oracle verdict -> confidences -> update,
/// for at most max_steps iterations.
RankTrace run_session(const Corpus& corpus, ItemIndex target, const std::vector<Eigen::VectorXd>& queries,
                      const Policy& policy, const Hyperparams& params, const PredictorSet* predictors,
                      std::uint64_t seed, const SessionOptions& options = {});

}  // namespace kis::sim
