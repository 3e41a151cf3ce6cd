#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kis/corpus.hpp"
#include "kis/feedback.hpp"
#include "kis/harness/synth.hpp"
#include "kis/perception/training.hpp"
#include "kis/session.hpp"

namespace kis::sim {

struct TrajectoryStep {
  Display display;
  std::vector<int> labels;
  std::vector<std::vector<int>> alignment;         // [pair][space]
  std::vector<Eigen::VectorXd> state_embeddings;  // [space], before the update
  Eigen::Index target_rank = 0;                   // after the update
};

struct TrajectoryRecord {
  std::uint64_t seed = 0;
  ItemIndex target = 0;
  double sigma = 0.0;
  Eigen::Index initial_rank = 0;
  std::vector<Eigen::VectorXd> query;  // [space]
  std::vector<TrajectoryStep> steps;

  int terminal_step() const { return static_cast<int>(steps.size()); }
};

struct TrajectoryOptions {
  int num_sessions = 1000;
  Hyperparams params;
  std::uint64_t seed = 0;
  double diverse_rate = 0.5;  // per-step chance of a diverse display
};

struct TrajectoryStats {
  int sessions = 0;
  int kept = 0;
  double kept_fraction() const { return sessions == 0 ? 0.0 : static_cast<double>(kept) / sessions; }
};

/// Simulates perfect-user sessions driven by the alignment-weighted update
/// and keeps those whose target reaches rank 1 within max_steps. Queries are
/// spread evenly over the depth buckets.
std::vector<TrajectoryRecord> generate_trajectories(const Corpus& corpus, const TrajectoryOptions& options,
                                                    TrajectoryStats* stats = nullptr);

/// One JSON object per line.
void write_trajectories(const std::filesystem::path& path, std::span<const TrajectoryRecord> records);
std::vector<TrajectoryRecord> read_trajectories(const std::filesystem::path& path);

/// Training sequences for space `space_index`: v_diff from the corpus rows,
/// the recorded state embeddings, and the recorded alignment bits as labels.
perception::Dataset build_dataset(const Corpus& corpus, std::size_t space_index,
                                  std::span<const TrajectoryRecord> records);

}  // namespace kis::sim
