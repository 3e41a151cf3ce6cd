#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "kis/perception/predictor.hpp"

namespace kis::perception {

/// One interaction trajectory as seen by one sub-perception: the query and
/// every step's tokens, with per-token alignment labels (1 = the space agrees
/// with the feedback).
struct SequenceExample {
  Eigen::VectorXd query;
  std::vector<StepTokens> steps;
  std::vector<std::vector<double>> labels;
};

/// A training sample is a prefix: sequence `sequence`, read out at step
/// `step` (1-based).
struct SampleRef {
  std::size_t sequence = 0;
  int step = 1;
};

struct Dataset {
  std::vector<SequenceExample> sequences;

  std::vector<SampleRef> samples() const;
  std::size_t num_judgments() const;
};

struct TrainOptions {
  int epochs = 20;
  double learning_rate = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool keep_best = true;  // restore the epoch with the lowest validation loss
  std::function<void(int epoch, double train_loss, double val_loss)> on_epoch;
};

struct TrainResult {
  std::vector<double> train_loss;  // mean BCE per judgment, with dropout
  std::vector<double> val_loss;    // inference-mode BCE on the held-out sequences; empty without a split
  std::vector<std::size_t> validation_sequences;
  int best_epoch = -1;  // epoch whose parameters were kept; -1 means the last one
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Minibatch Adam on mean BCE. Deterministic for a fixed seed.
TrainResult train(Predictor<float>& predictor, const Dataset& data, const TrainOptions& options);

/// Mean BCE per judgment over the given samples (inference mode).
template <typename Scalar>
double mean_loss(const Predictor<Scalar>& predictor, const Dataset& data, const std::vector<SampleRef>& samples);

struct AlignmentAccuracy {
  double accuracy = 0.0;
  double majority_rate = 0.0;  // accuracy of always predicting the more common label
  std::size_t judgments = 0;
};

/// Thresholds confidences at 0.5 against the alignment labels.
AlignmentAccuracy alignment_accuracy(const Predictor<float>& predictor, const Dataset& data,
                                     const std::vector<SampleRef>& samples);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients with central differences on up to
/// `max_params` randomly drawn parameters (all of them when fewer exist, or
/// only those in `blocks` when given). Runs in double precision with dropout
/// off. Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradientCheckResult gradient_check(const Predictor<double>& predictor, const SequenceExample& sample, int step,
                                   double epsilon, std::size_t max_params = 1000, std::uint64_t seed = 0,
                                   const std::vector<std::size_t>& blocks = {});

void save_checkpoint(const std::filesystem::path& path, const Predictor<float>& predictor);
Predictor<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace kis::perception
