#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kis/corpus.hpp"

namespace kis {

enum class DisplayStrategy { greedy, diverse };

std::string_view to_string(DisplayStrategy strategy);
DisplayStrategy parse_strategy(std::string_view name);

struct ItemPair {
  ItemIndex a = 0;
  ItemIndex b = 0;

  friend bool operator==(const ItemPair&, const ItemPair&) = default;
};

/// The pairs shown to the user in one iteration.
struct Display {
  std::vector<ItemPair> pairs;
  DisplayStrategy strategy = DisplayStrategy::greedy;

  friend bool operator==(const Display&, const Display&) = default;
};

/// A pairwise judgment. label 0 selects `pair.a`, label 1 selects `pair.b`.
struct Judgment {
  ItemPair pair;
  int label = 0;

  ItemIndex selected() const { return label == 0 ? pair.a : pair.b; }
  ItemIndex rejected() const { return label == 0 ? pair.b : pair.a; }
};

/// Zips a display with a label vector; throws on length mismatch or non-bit labels.
std::vector<Judgment> make_judgments(const Display& display, const std::vector<int>& labels);

}  // namespace kis
