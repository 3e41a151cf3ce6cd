#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "kis/corpus.hpp"
#include "kis/feedback.hpp"
#include "kis/session.hpp"

namespace kis::perception {

inline constexpr int kDistanceBins = 100;
inline constexpr int kStateTopK = 50;

/// Bin of ||v+ - v-|| over the attainable range [0, 2]: the norm is halved and
/// (0, 1] is cut into 100 equal intervals. Zero lands in bin 0.
int distance_bin(double diff_norm);

/// Mean of the top-50 (or all, if fewer are active) rows by probability,
/// rescaled to unit length. A zero mean stays zero.
Eigen::VectorXd state_embedding(const EmbeddingSpace& space, const SessionState& state,
                                int top_k = kStateTopK);

/// Same, from an already ranked item list.
Eigen::VectorXd state_embedding(const EmbeddingSpace& space, std::span<const ItemIndex> top);

/// One judgment as seen by a single sub-perception's predictor.
struct JudgmentToken {
  Eigen::VectorXd diff;   // v+ - v-
  Eigen::VectorXd state;  // search-state embedding when the display was shown
  int dist_bin = 0;
};

using StepTokens = std::vector<JudgmentToken>;

StepTokens encode_judgments(const EmbeddingSpace& space, std::span<const Judgment> judgments,
                            const Eigen::VectorXd& state_embedding);

/// Tokens for one display/label round in space `space_index`, with the state
/// embedding taken from `state`.
StepTokens encode_step(const Corpus& corpus, std::size_t space_index, const SessionState& state,
                       const Display& display, const std::vector<int>& labels);

}  // namespace kis::perception
