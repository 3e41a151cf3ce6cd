#include "kis/perception/tokens.hpp"

#include <algorithm>
#include <cmath>

namespace kis::perception {

int distance_bin(double diff_norm) {
  const double scaled = std::ceil(diff_norm / 2.0 * kDistanceBins) - 1.0;
  return static_cast<int>(std::clamp(scaled, 0.0, static_cast<double>(kDistanceBins - 1)));
}

Eigen::VectorXd state_embedding(const EmbeddingSpace& space, const SessionState& state, int top_k) {
  return state_embedding(space, top_items(state, top_k));
}

Eigen::VectorXd state_embedding(const EmbeddingSpace& space, std::span<const ItemIndex> top) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(space.dim());
  for (auto i : top) mean += space.vectors.row(i).cast<double>().transpose();
  const double norm = mean.norm();
  if (norm > 0.0) mean /= norm;
  return mean;
}

StepTokens encode_judgments(const EmbeddingSpace& space, std::span<const Judgment> judgments,
                            const Eigen::VectorXd& state_embedding) {
  StepTokens tokens;
  tokens.reserve(judgments.size());
  for (const auto& j : judgments) {
    JudgmentToken t;
    t.diff = space.vectors.row(j.selected()).cast<double>().transpose() -
             space.vectors.row(j.rejected()).cast<double>().transpose();
    t.state = state_embedding;
    t.dist_bin = distance_bin(t.diff.norm());
    tokens.push_back(std::move(t));
  }
  return tokens;
}

StepTokens encode_step(const Corpus& corpus, std::size_t space_index, const SessionState& state,
                       const Display& display, const std::vector<int>& labels) {
  const auto judgments = make_judgments(display, labels);
  const auto& space = corpus.space(space_index);
  return encode_judgments(space, judgments, state_embedding(space, state));
}

}  // namespace kis::perception
