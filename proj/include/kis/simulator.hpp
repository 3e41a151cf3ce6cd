#pragma once

#include <cstdint>
#include <vector>

#include "kis/corpus.hpp"
#include "kis/feedback.hpp"

namespace kis {

/// Simulated user verdict on one pair. Bits follow the wire convention:
/// 0 = first item closer to the target, 1 = second item.
struct OracleVerdict {
  std::vector<int> per_space_choice;
  int majority = 0;
  std::vector<int> alignment;  // 1 where the space agrees with the majority
};

/// Which pair member is closer to the target in space f. Ties go to `a`.
int oracle_choice(const Corpus& corpus, std::size_t space_index, ItemPair pair, ItemIndex target);

/// Per-space choices, their majority, and the alignment of each space with it.
/// With an even number of spaces a tied vote goes to space 0's choice.
OracleVerdict judge(const Corpus& corpus, ItemPair pair, ItemIndex target);

/// Flips the majority bit (and recomputes alignment) to inject label noise.
void flip_majority(OracleVerdict& verdict);

}  // namespace kis
