#include "kis/simulator.hpp"

#include <spdlog/spdlog.h>

#include <mutex>
#include <stdexcept>

namespace kis {

namespace {

void recompute_alignment(OracleVerdict& v) {
  v.alignment.resize(v.per_space_choice.size());
  for (std::size_t f = 0; f < v.per_space_choice.size(); ++f) {
    v.alignment[f] = v.per_space_choice[f] == v.majority ? 1 : 0;
  }
}

}  // namespace

int oracle_choice(const Corpus& corpus, std::size_t space_index, ItemPair pair, ItemIndex target) {
  const auto& space = corpus.space(space_index);
  if (target == pair.a) return 0;
  if (target == pair.b) return 1;
  const double sa = similarity(space, pair.a, target);
  const double sb = similarity(space, pair.b, target);
  return sb > sa ? 1 : 0;
}

OracleVerdict judge(const Corpus& corpus, ItemPair pair, ItemIndex target) {
  OracleVerdict v;
  const auto f_count = corpus.num_spaces();
  int ones = 0;
  for (std::size_t f = 0; f < f_count; ++f) {
    v.per_space_choice.push_back(oracle_choice(corpus, f, pair, target));
    ones += v.per_space_choice.back();
  }
  const int zeros = static_cast<int>(f_count) - ones;
  if (ones == zeros) {
    static std::once_flag warned;
    std::call_once(warned, [] {
      spdlog::warn("even number of sub-perceptions produced a tied vote; breaking toward space 0");
    });
    v.majority = v.per_space_choice.front();
  } else {
    v.majority = ones > zeros ? 1 : 0;
  }
  recompute_alignment(v);
  return v;
}

void flip_majority(OracleVerdict& verdict) {
  verdict.majority = 1 - verdict.majority;
  recompute_alignment(verdict);
}

}  // namespace kis
