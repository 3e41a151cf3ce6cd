#include "kis/feedback.hpp"

#include <stdexcept>
#include <string>

namespace kis {

std::string_view to_string(DisplayStrategy strategy) {
  return strategy == DisplayStrategy::greedy ? "greedy" : "diverse";
}

DisplayStrategy parse_strategy(std::string_view name) {
  if (name == "greedy") return DisplayStrategy::greedy;
  if (name == "diverse") return DisplayStrategy::diverse;
  throw std::invalid_argument("unknown display strategy '" + std::string(name) + "'");
}

std::vector<Judgment> make_judgments(const Display& display, const std::vector<int>& labels) {
  if (labels.size() != display.pairs.size()) {
    throw std::invalid_argument("expected " + std::to_string(display.pairs.size()) + " labels, got " +
                                std::to_string(labels.size()));
  }
  std::vector<Judgment> out;
  out.reserve(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] != 0 && labels[j] != 1) throw std::invalid_argument("labels must be 0 or 1");
    out.push_back({display.pairs[j], labels[j]});
  }
  return out;
}

}  // namespace kis
