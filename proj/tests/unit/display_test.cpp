#include "doctest.h"

#include <algorithm>
#include <random>
#include <set>

#include "helpers.hpp"
#include "kis/display.hpp"
#include "kis/random.hpp"

using namespace kis;

namespace {

SessionState random_state(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd scores(n);
  for (Eigen::Index i = 0; i < n; ++i) scores[i] = u(rng);
  Hyperparams p;
  p.n_prune = 0;
  return init_session(scores, p);
}

}  // namespace

TEST_CASE("greedy display") {
  Hyperparams p;
  p.n_prune = 0;
  SUBCASE("one pair from the only two candidates") {
    auto state = init_session(Eigen::Vector4d::Zero(), p);
    state.probs << 0.7, 0.2, 0.05, 0.05;
    const auto d = greedy_display(state, 1, 42);
    REQUIRE(d.pairs.size() == 1);
    CHECK(std::set<ItemIndex>{d.pairs[0].a, d.pairs[0].b} == std::set<ItemIndex>{0, 1});
    CHECK(d.strategy == DisplayStrategy::greedy);
  }
  SUBCASE("two pairs partition four items") {
    const auto state = init_session(Eigen::Vector4d(0.1, 0.3, 0.2, 0.4), p);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto d = greedy_display(state, 2, seed);
      std::set<ItemIndex> seen;
      for (const auto& pr : d.pairs) {
        seen.insert(pr.a);
        seen.insert(pr.b);
      }
      CHECK(seen == std::set<ItemIndex>{0, 1, 2, 3});
    }
  }
  SUBCASE("top 2|D| items and seed determinism") {
    const auto state = random_state(200, 1);
    const auto top = top_items(state, 10);
    const auto d = greedy_display(state, 5, 7);
    CHECK(d == greedy_display(state, 5, 7));
    std::set<ItemIndex> shown;
    for (const auto& pr : d.pairs) {
      shown.insert(pr.a);
      shown.insert(pr.b);
    }
    CHECK(shown == std::set<ItemIndex>(top.begin(), top.end()));
  }
  SUBCASE("too few active items") {
    const auto state = init_session(Eigen::Vector4d::Zero(), p);
    CHECK_THROWS_AS(greedy_display(state, 3, 0), std::invalid_argument);
  }
}

TEST_CASE("diverse display band membership over 1000 seeds") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto state = random_state(300, seed);
    const auto d = diverse_display(state, 5, 100, derive_seed(seed, {1}));
    REQUIRE(d.pairs.size() == 5);
    std::set<ItemIndex> items;
    int head = 0, tail = 0;
    for (const auto& pr : d.pairs) {
      const auto ra = rank_of(state, pr.a).rank;
      const auto rb = rank_of(state, pr.b).rank;
      const auto lo = std::min(ra, rb);
      const auto hi = std::max(ra, rb);
      CHECK(lo <= 50);
      CHECK(hi >= 51);
      CHECK(hi <= 100);
      head += lo <= 50;
      tail += hi >= 51;
      items.insert(pr.a);
      items.insert(pr.b);
    }
    CHECK(items.size() == 10);
    CHECK(head == 5);
    CHECK(tail == 5);
  }
}

TEST_CASE("diverse display determinism and preconditions") {
  const auto state = random_state(150, 3);
  CHECK(diverse_display(state, 5, 100, 9) == diverse_display(state, 5, 100, 9));
  CHECK(diverse_display(state, 5, 100, 9).strategy == DisplayStrategy::diverse);
  CHECK_THROWS_AS(diverse_display(random_state(80, 3), 5, 100, 9), std::invalid_argument);
  CHECK_THROWS_AS(diverse_display(state, 5, 60, 9), std::invalid_argument);
}

TEST_CASE("make_judgments") {
  const Display d{{{3, 4}, {5, 6}}, DisplayStrategy::greedy};
  const auto js = make_judgments(d, {0, 1});
  CHECK(js[0].selected() == 3);
  CHECK(js[0].rejected() == 4);
  CHECK(js[1].selected() == 6);
  CHECK_THROWS_AS(make_judgments(d, {0}), std::invalid_argument);
  CHECK_THROWS_AS(make_judgments(d, {0, 2}), std::invalid_argument);
  CHECK(parse_strategy(to_string(DisplayStrategy::diverse)) == DisplayStrategy::diverse);
}
