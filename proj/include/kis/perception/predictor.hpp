#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kis/perception/tokens.hpp"
#include "kis/random.hpp"

namespace kis::perception {

/// Architecture of one sub-perception predictor. `use_state` and
/// `use_distance` switch off the state term and the distance table, giving
/// the ablated variants.
struct PredictorConfig {
  int input_dim = 0;
  int model_dim = 128;
  int layers = 2;
  int heads = 4;
  int ff_dim = 256;
  double dropout = 0.1;
  int max_steps = 7;
  int num_pairs = 5;
  bool use_state = true;
  bool use_distance = true;

  int max_sequence() const { return 1 + max_steps * num_pairs; }
  void validate() const;

  friend bool operator==(const PredictorConfig&, const PredictorConfig&) = default;
};

void to_json(nlohmann::json& j, const PredictorConfig& c);
void from_json(const nlohmann::json& j, PredictorConfig& c);

struct ParameterBlock {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index offset = 0;

  Eigen::Index size() const { return rows * cols; }
};

/// Offsets of every named tensor inside the flat parameter vector.
struct ParameterLayout {
  struct Layer {
    std::size_t ln1_gamma, ln1_beta;
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_gamma, ln2_beta;
    std::size_t ff1_w, ff1_b, ff2_w, ff2_b;
  };

  std::vector<ParameterBlock> blocks;
  std::size_t input_w = 0, input_b = 0;
  std::size_t query_w = 0, query_b = 0;
  std::size_t distance = 0, step = 0;
  std::vector<Layer> layers;
  std::size_t final_gamma = 0, final_beta = 0;
  std::size_t head_w = 0, head_b = 0;
  Eigen::Index total = 0;

  static ParameterLayout build(const PredictorConfig& config);
  std::optional<std::size_t> find(const std::string& name) const;
};

/// Transformer-encoder confidence model for one sub-perception.
///
/// Sequence layout: position 0 holds the projected initial query; every
/// judgment token is W*(v_diff + v_s) + b + E_d[bin] + E_step[step]. All
/// positions attend to each other. The confidences are read from the tokens
/// of the last step through a linear head and a sigmoid.
template <typename Scalar>
class Predictor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  /// Xavier-uniform weights, zero biases, unit LayerNorm gains, N(0, 0.02)
  /// tables and output head (so an untrained model outputs about 0.5). The
  /// distance table stays zero when `use_distance` is off.
  Predictor(PredictorConfig config, std::uint64_t seed);
  Predictor(PredictorConfig config, Vector params);

  const PredictorConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }

  Eigen::Map<const Matrix> block(std::size_t id) const {
    const auto& b = layout_.blocks[id];
    return {params_.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<Matrix> block(std::size_t id) {
    const auto& b = layout_.blocks[id];
    return {params_.data() + b.offset, b.rows, b.cols};
  }

  template <typename Other>
  Predictor<Other> cast() const {
    return Predictor<Other>(config_, params_.template cast<Other>());
  }

 private:
  PredictorConfig config_;
  ParameterLayout layout_;
  Vector params_;
};

/// Confidences in (0, 1) for the tokens of `steps.back()`. Inference mode.
template <typename Scalar>
std::vector<double> predict(const Predictor<Scalar>& predictor, const Eigen::VectorXd& query,
                            std::span<const StepTokens> steps);

/// Raw logits for the tokens of `steps.back()`. Inference mode.
template <typename Scalar>
std::vector<double> predict_logits(const Predictor<Scalar>& predictor, const Eigen::VectorXd& query,
                                   std::span<const StepTokens> steps);

/// Binary cross-entropy summed over the last step's tokens (times `weight`),
/// with the matching gradient added into `grad` (same layout as the
/// parameters). Dropout is active iff `dropout_rng` is non-null.
template <typename Scalar>
double accumulate_gradient(const Predictor<Scalar>& predictor, const Eigen::VectorXd& query,
                           std::span<const StepTokens> steps, std::span<const double> labels,
                           double weight, Eigen::VectorXd& grad, Rng* dropout_rng = nullptr);

/// Loss only (no gradient), inference mode.
template <typename Scalar>
double sequence_loss(const Predictor<Scalar>& predictor, const Eigen::VectorXd& query,
                     std::span<const StepTokens> steps, std::span<const double> labels);

extern template class Predictor<float>;
extern template class Predictor<double>;

}  // namespace kis::perception
