#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "kis/corpus.hpp"
#include "kis/feedback.hpp"

namespace kis {

/// Search hyperparameters. Defaults are the evaluation settings.
struct Hyperparams {
  double rho = 0.05;
  int num_pairs = 5;
  int n_display = 100;
  int n_prune = 5000;  // 0 disables pruning
  int max_steps = 7;
  double init_temperature = 0.05;

  /// Throws std::invalid_argument on a non-positive rho/temperature/pair count.
  void validate() const;
};

struct HistoryEntry {
  Display display;
  std::vector<int> labels;
  std::vector<Eigen::VectorXd> state_embeddings;  // one per space, taken before the update
};

/// Per-session posterior over candidates.
///
/// `probs` sums to one over the active set and is exactly zero elsewhere.
/// `active_items` lists the active indices in ascending order and mirrors
/// `active`.
struct SessionState {
  Eigen::VectorXd probs;
  std::vector<std::uint8_t> active;
  std::vector<ItemIndex> active_items;
  int step = 0;
  std::vector<HistoryEntry> history;
  std::optional<ItemIndex> target;

  Eigen::Index num_items() const { return probs.size(); }
  Eigen::Index num_active() const { return static_cast<Eigen::Index>(active_items.size()); }
  bool is_active(ItemIndex i) const {
    return i >= 0 && i < probs.size() && active[static_cast<std::size_t>(i)] != 0;
  }
};

/// Raised when a multiplicative update collapses to zero mass.
class UnderflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean over spaces of the cosine between each space's query and every item.
Eigen::VectorXd query_scores(const Corpus& corpus, std::span<const Eigen::VectorXd> queries);

/// P0 from per-space query vectors: softmax of mean cosine over
/// `init_temperature`, then optional top-n_prune masking.
SessionState init_session(const Corpus& corpus, std::span<const Eigen::VectorXd> queries,
                          const Hyperparams& params);

/// P0 from a precomputed N-length score vector.
SessionState init_session(const Eigen::Ref<const Eigen::VectorXd>& scores, const Hyperparams& params);

/// Hard temporal factor: sum over judgments of sigmoid(gap / rho) where
/// gap = s(v+, v_i) - s(v-, v_i). Zero on inactive items.
Eigen::VectorXd temporal_hard(const SessionState& state, std::span<const Judgment> judgments,
                              const EmbeddingSpace& space, double rho);

/// Confidence-weighted factor: sum over judgments of sigmoid(c_j * gap / rho).
Eigen::VectorXd temporal_soft(const SessionState& state, std::span<const Judgment> judgments,
                              std::span<const double> confidences, const EmbeddingSpace& space,
                              double rho);

/// Sums the per-space factors, multiplies them into the posterior,
/// renormalizes over the active set, and advances the step counter. History
/// is appended by the caller.
void apply_update(SessionState& state, std::span<const Eigen::VectorXd> per_space_temporals);

struct RankResult {
  Eigen::Index rank = 0;  // 1-based
  bool active = true;     // false => rank is the sentinel N
};

/// Rank by descending probability, ties to the lower index.
RankResult rank_of(const SessionState& state, ItemIndex item);

/// The k best active items by probability, ties to the lower index.
std::vector<ItemIndex> top_items(const SessionState& state, Eigen::Index k);

/// Descending ranking of scores with index tie-break, as used for pruning and
/// initial ranks. Returns the 1-based rank of `item`.
Eigen::Index rank_in_scores(const Eigen::Ref<const Eigen::VectorXd>& scores, ItemIndex item);

}  // namespace kis
