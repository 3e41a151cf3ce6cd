#include "kis/session.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace kis {

namespace {

constexpr double kMaxLogit = 700.0;

void check_judgments(const SessionState& state, std::span<const Judgment> judgments) {
  if (judgments.empty()) throw std::invalid_argument("temporal update needs at least one judgment");
  for (const auto& j : judgments) {
    if (j.pair.a == j.pair.b) throw std::invalid_argument("judgment pair has identical items");
    if (j.label != 0 && j.label != 1) throw std::invalid_argument("judgment label must be 0 or 1");
    if (!state.is_active(j.pair.a) || !state.is_active(j.pair.b)) {
      throw std::invalid_argument("judgment references inactive item (" + std::to_string(j.pair.a) +
                                  ", " + std::to_string(j.pair.b) + ")");
    }
  }
}

// Columns are v+ - v- per judgment, in double.
Eigen::MatrixXd difference_directions(std::span<const Judgment> judgments, const EmbeddingSpace& space) {
  Eigen::MatrixXd dirs(space.dim(), static_cast<Eigen::Index>(judgments.size()));
  for (std::size_t j = 0; j < judgments.size(); ++j) {
    dirs.col(static_cast<Eigen::Index>(j)) =
        space.vectors.row(judgments[j].selected()).cast<double>().transpose() -
        space.vectors.row(judgments[j].rejected()).cast<double>().transpose();
  }
  return dirs;
}

bool better(const Eigen::VectorXd& p, ItemIndex x, ItemIndex y) {
  return p[x] > p[y] || (p[x] == p[y] && x < y);
}

}  // namespace

void Hyperparams::validate() const {
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be positive");
  if (!(init_temperature > 0.0)) throw std::invalid_argument("init_temperature must be positive");
  if (num_pairs <= 0) throw std::invalid_argument("num_pairs must be positive");
  if (n_display <= 0) throw std::invalid_argument("n_display must be positive");
  if (n_prune < 0) throw std::invalid_argument("n_prune must be >= 0");
  if (max_steps <= 0) throw std::invalid_argument("max_steps must be positive");
}

Eigen::VectorXd query_scores(const Corpus& corpus, std::span<const Eigen::VectorXd> queries) {
  if (queries.size() != corpus.num_spaces()) {
    throw std::invalid_argument("expected " + std::to_string(corpus.num_spaces()) +
                                " query vectors, got " + std::to_string(queries.size()));
  }
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(corpus.num_items());
  for (std::size_t f = 0; f < queries.size(); ++f) scores += similarity_to_all(corpus.space(f), queries[f]);
  return scores / static_cast<double>(queries.size());
}

SessionState init_session(const Corpus& corpus, std::span<const Eigen::VectorXd> queries,
                          const Hyperparams& params) {
  return init_session(query_scores(corpus, queries), params);
}

SessionState init_session(const Eigen::Ref<const Eigen::VectorXd>& scores, const Hyperparams& params) {
  params.validate();
  const auto n = scores.size();
  if (n == 0) throw std::invalid_argument("empty score vector");

  SessionState state;
  state.active.assign(static_cast<std::size_t>(n), 1);
  if (params.n_prune > 0) {
    if (params.n_prune >= n) {
      spdlog::warn("n_prune={} >= corpus size {}; pruning disabled", params.n_prune, n);
    } else {
      std::vector<ItemIndex> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), ItemIndex{0});
      std::nth_element(order.begin(), order.begin() + params.n_prune, order.end(),
                       [&](ItemIndex x, ItemIndex y) {
                         return scores[x] > scores[y] || (scores[x] == scores[y] && x < y);
                       });
      std::fill(state.active.begin(), state.active.end(), 0);
      for (int r = 0; r < params.n_prune; ++r) state.active[static_cast<std::size_t>(order[r])] = 1;
    }
  }
  for (ItemIndex i = 0; i < n; ++i) {
    if (state.active[static_cast<std::size_t>(i)]) state.active_items.push_back(i);
  }

  double max_score = -std::numeric_limits<double>::infinity();
  for (auto i : state.active_items) max_score = std::max(max_score, scores[i]);
  state.probs = Eigen::VectorXd::Zero(n);
  double total = 0.0;
  for (auto i : state.active_items) {
    state.probs[i] = std::exp((scores[i] - max_score) / params.init_temperature);
    total += state.probs[i];
  }
  state.probs /= total;
  return state;
}

Eigen::VectorXd temporal_hard(const SessionState& state, std::span<const Judgment> judgments,
                              const EmbeddingSpace& space, double rho) {
  const std::vector<double> ones(judgments.size(), 1.0);
  return temporal_soft(state, judgments, ones, space, rho);
}

Eigen::VectorXd temporal_soft(const SessionState& state, std::span<const Judgment> judgments,
                              std::span<const double> confidences, const EmbeddingSpace& space,
                              double rho) {
  check_judgments(state, judgments);
  if (confidences.size() != judgments.size()) {
    throw std::invalid_argument("confidence count does not match judgment count");
  }
  for (double c : confidences) {
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("confidence outside [0, 1]");
  }
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be positive");
  if (space.size() != state.num_items()) throw std::invalid_argument("space size does not match session");

  const auto dirs = difference_directions(judgments, space);
  const bool dense = state.num_active() == state.num_items();
  Eigen::MatrixXd gaps;
  if (dense) {
    project_rows(space, dirs, gaps);
  } else {
    project_rows(space, state.active_items, dirs, gaps);
  }

  // Clamping keeps exp finite, so every term stays strictly positive.
  Eigen::ArrayXXd args = gaps.array();
  for (Eigen::Index j = 0; j < args.cols(); ++j) {
    const double c = confidences[static_cast<std::size_t>(j)];
    args.col(j) = (c * args.col(j) / rho).cwiseMax(-kMaxLogit).cwiseMin(kMaxLogit);
  }
  const Eigen::VectorXd sums = (1.0 / (1.0 + (-args).exp())).rowwise().sum().matrix();
  if (dense) return sums;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(state.num_items());
  for (std::size_t r = 0; r < state.active_items.size(); ++r) {
    out[state.active_items[r]] = sums[static_cast<Eigen::Index>(r)];
  }
  return out;
}

void apply_update(SessionState& state, std::span<const Eigen::VectorXd> per_space_temporals) {
  if (per_space_temporals.empty()) {
    ++state.step;
    return;
  }
  Eigen::VectorXd factor = Eigen::VectorXd::Zero(state.num_items());
  for (const auto& t : per_space_temporals) {
    if (t.size() != state.num_items()) throw std::invalid_argument("temporal vector has wrong length");
    factor += t;
  }
  double total = 0.0;
  for (auto i : state.active_items) {
    const double f = factor[i];
    if (!(f > 0.0) || !std::isfinite(f)) {
      throw std::invalid_argument("temporal factor must be strictly positive on the active set (item " +
                                  std::to_string(i) + ")");
    }
    state.probs[i] *= f;
    total += state.probs[i];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw UnderflowError("posterior mass underflowed to zero; accumulate the update in the log domain");
  }
  for (auto i : state.active_items) state.probs[i] /= total;
  ++state.step;
}

RankResult rank_of(const SessionState& state, ItemIndex item) {
  if (!state.is_active(item)) return {state.num_items(), false};
  Eigen::Index ahead = 0;
  for (auto j : state.active_items) {
    if (j != item && better(state.probs, j, item)) ++ahead;
  }
  return {ahead + 1, true};
}

std::vector<ItemIndex> top_items(const SessionState& state, Eigen::Index k) {
  std::vector<ItemIndex> items = state.active_items;
  const auto take = static_cast<std::size_t>(std::clamp<Eigen::Index>(k, 0, state.num_active()));
  auto cmp = [&](ItemIndex x, ItemIndex y) { return better(state.probs, x, y); };
  if (take < items.size()) {
    std::nth_element(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(take), items.end(), cmp);
    items.resize(take);
  }
  std::sort(items.begin(), items.end(), cmp);
  return items;
}

Eigen::Index rank_in_scores(const Eigen::Ref<const Eigen::VectorXd>& scores, ItemIndex item) {
  Eigen::Index ahead = 0;
  const double s = scores[item];
  for (Eigen::Index j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && j < item)) ++ahead;
  }
  return ahead + 1;
}

}  // namespace kis
