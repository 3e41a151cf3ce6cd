#include "doctest.h"

#include "helpers.hpp"
#include "kis/simulator.hpp"

using namespace kis;
using kis::test::make_corpus;
using kis::test::rows;

TEST_CASE("oracle_choice") {
  // items: 0 = a, 1 = b, 2 = target, 3 = copy of the target row
  SUBCASE("a identical to the target") {
    const auto c = make_corpus({rows({{0.6f, 0.8f}, {1, 0}, {0.6f, 0.8f}, {0.6f, 0.8f}})});
    CHECK(oracle_choice(c, 0, {3, 1}, 2) == 0);
    CHECK(oracle_choice(c, 0, {2, 1}, 2) == 0);
    CHECK(oracle_choice(c, 0, {1, 2}, 2) == 1);
  }
  SUBCASE("b closer") {
    // s(a, T) = 0.3, s(b, T) = 0.7 along the first axis
    const auto c = make_corpus({rows({{0.3f, 0.9539392f}, {0.7f, 0.7141428f}, {1, 0}})});
    CHECK(oracle_choice(c, 0, {0, 1}, 2) == 1);
  }
  SUBCASE("exact tie goes to a") {
    const auto c = make_corpus({rows({{0, 1}, {0, -1}, {1, 0}})});
    CHECK(oracle_choice(c, 0, {0, 1}, 2) == 0);
  }
}

TEST_CASE("judge majority and alignment") {
  SUBCASE("disagreeing spaces against a hand table") {
    const auto c = make_corpus({rows({{1, 0}, {0, 1}, {0.8f, 0.6f}}),     // 0.8 vs 0.6 -> a
                                rows({{1, 0}, {0, 1}, {0.6f, 0.8f}}),     // 0.6 vs 0.8 -> b
                                rows({{0.6f, 0.8f}, {1, 0}, {0, 1}})});  // 0.8 vs 0.0 -> a
    const auto v = judge(c, {0, 1}, 2);
    CHECK(v.per_space_choice == std::vector<int>{0, 1, 0});
    CHECK(v.majority == 0);
    CHECK(v.alignment == std::vector<int>{1, 0, 1});
  }
  SUBCASE("unanimous") {
    const auto space = rows({{1, 0}, {0, 1}, {0.1f, 1}});
    const auto c = make_corpus({space, space, space});
    const auto v = judge(c, {0, 1}, 2);
    CHECK(v.per_space_choice == std::vector<int>{1, 1, 1});
    CHECK(v.majority == 1);
    CHECK(v.alignment == std::vector<int>{1, 1, 1});
  }
  SUBCASE("even split follows space 0") {
    const auto c = make_corpus({rows({{1, 0}, {0, 1}, {0.6f, 0.8f}}), rows({{1, 0}, {0, 1}, {0.8f, 0.6f}})});
    const auto v = judge(c, {0, 1}, 2);
    CHECK(v.majority == 1);
    CHECK(v.alignment == std::vector<int>{1, 0});
  }
  SUBCASE("flip_majority recomputes alignment") {
    const auto c = make_corpus({rows({{1, 0}, {0, 1}, {0.8f, 0.6f}}), rows({{1, 0}, {0, 1}, {0.6f, 0.8f}}),
                                rows({{0.6f, 0.8f}, {1, 0}, {0, 1}})});
    auto v = judge(c, {0, 1}, 2);
    flip_majority(v);
    CHECK(v.majority == 1);
    CHECK(v.alignment == std::vector<int>{0, 1, 0});
  }
}
