#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kis/harness/runner.hpp"
#include "kis/harness/synth.hpp"
#include "kis/harness/trajectory.hpp"
#include "kis/perception/training.hpp"

namespace kis::sim {

/// The reference synthetic benchmark. Evaluation and training use separate
/// corpora drawn from the same recipe with different seeds.
struct BenchmarkSpec {
  SynthSpec corpus{50000, 3, 64, 0.7, 20240501};
  SynthSpec training_corpus{50000, 3, 64, 0.7, 20240502};
  int queries_per_bucket = 150;
  std::uint64_t query_seed = 11;
  std::uint64_t session_seed = 99;
  TrajectoryOptions trajectories{1500, {}, 5, 0.5};
  perception::PredictorConfig predictor{64, 64, 2, 4, 128, 0.1, 7, 5, true, true};
  perception::TrainOptions training{8, 1e-3, 32, 3, 0.1, 0.9, 0.999, 1e-8, true, {}};
  Hyperparams params;
};

/// One predictor per space, trained on the same records.
struct TrainedSet {
  PredictorSet predictors;
  std::vector<perception::TrainResult> results;
  std::vector<perception::AlignmentAccuracy> validation_accuracy;
};

TrainedSet train_predictors(const Corpus& corpus, std::span<const TrajectoryRecord> records,
                            const perception::PredictorConfig& config, const perception::TrainOptions& options,
                            std::uint64_t init_seed);

/// Checkpoint file for one space and ablation variant inside a checkpoint
/// directory: `<space_id>.kisp`, `<space_id>.staterep.kisp`, `<space_id>.distemb.kisp`.
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, const std::string& space_id,
                                      Ablation variant = Ablation::none);

/// Loads one checkpoint per space; throws when a file is missing or its
/// input dimension does not match the space.
PredictorSet load_predictor_set(const std::filesystem::path& dir, const Corpus& corpus,
                                Ablation variant = Ablation::none);
void save_predictor_set(const std::filesystem::path& dir, const Corpus& corpus, const PredictorSet& predictors,
                        Ablation variant = Ablation::none);

/// Predictor config for an ablation variant: state term or distance table off.
perception::PredictorConfig variant_config(perception::PredictorConfig config, Ablation variant);

}  // namespace kis::sim
