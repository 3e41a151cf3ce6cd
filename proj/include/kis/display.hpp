#pragma once

#include <cstdint>

#include "kis/feedback.hpp"
#include "kis/session.hpp"

namespace kis {

/// Width of each rank band sampled by the diverse display.
inline constexpr int kDiverseBand = 50;

/// Top 2*num_pairs items by probability, paired by a seeded random matching.
Display greedy_display(const SessionState& state, int num_pairs, std::uint64_t seed);

/// One member per pair from ranks [1, 50], the other from ranks
/// [n_display - 49, n_display], sampled without replacement.
Display diverse_display(const SessionState& state, int num_pairs, int n_display, std::uint64_t seed);

Display make_display(const SessionState& state, DisplayStrategy strategy, const Hyperparams& params,
                     std::uint64_t seed);

}  // namespace kis
