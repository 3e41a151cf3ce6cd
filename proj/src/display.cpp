#include "kis/display.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "kis/random.hpp"

namespace kis {

Display greedy_display(const SessionState& state, int num_pairs, std::uint64_t seed) {
  if (num_pairs <= 0) throw std::invalid_argument("num_pairs must be positive");
  if (state.num_active() < 2 * num_pairs) {
    throw std::invalid_argument("active set has " + std::to_string(state.num_active()) +
                                " items, greedy display needs " + std::to_string(2 * num_pairs) +
                                "; use fewer pairs");
  }
  auto items = top_items(state, 2 * num_pairs);
  Rng rng(seed);
  std::shuffle(items.begin(), items.end(), rng);
  Display display{{}, DisplayStrategy::greedy};
  for (int p = 0; p < num_pairs; ++p) display.pairs.push_back({items[2 * p], items[2 * p + 1]});
  return display;
}

Display diverse_display(const SessionState& state, int num_pairs, int n_display, std::uint64_t seed) {
  if (num_pairs <= 0) throw std::invalid_argument("num_pairs must be positive");
  if (n_display < 2 * kDiverseBand) {
    throw std::invalid_argument("diverse display needs n_display >= " + std::to_string(2 * kDiverseBand));
  }
  if (num_pairs > kDiverseBand) throw std::invalid_argument("too many pairs for the diverse bands");
  if (state.num_active() < n_display) {
    throw std::invalid_argument("active set has " + std::to_string(state.num_active()) +
                                " items, diverse display needs n_display=" + std::to_string(n_display));
  }
  const auto ranked = top_items(state, n_display);
  std::vector<ItemIndex> head(ranked.begin(), ranked.begin() + kDiverseBand);
  std::vector<ItemIndex> tail(ranked.end() - kDiverseBand, ranked.end());

  Rng rng(seed);
  std::shuffle(head.begin(), head.end(), rng);
  std::shuffle(tail.begin(), tail.end(), rng);
  std::bernoulli_distribution swap(0.5);
  Display display{{}, DisplayStrategy::diverse};
  for (int p = 0; p < num_pairs; ++p) {
    ItemPair pair{head[static_cast<std::size_t>(p)], tail[static_cast<std::size_t>(p)]};
    if (swap(rng)) std::swap(pair.a, pair.b);
    display.pairs.push_back(pair);
  }
  return display;
}

Display make_display(const SessionState& state, DisplayStrategy strategy, const Hyperparams& params,
                     std::uint64_t seed) {
  return strategy == DisplayStrategy::greedy ? greedy_display(state, params.num_pairs, seed)
                                             : diverse_display(state, params.num_pairs, params.n_display, seed);
}

}  // namespace kis
