#include "kis/harness/benchmark.hpp"

#include <spdlog/spdlog.h>

#include <stdexcept>

#include "kis/random.hpp"

namespace kis::sim {

TrainedSet train_predictors(const Corpus& corpus, std::span<const TrajectoryRecord> records,
                            const perception::PredictorConfig& config, const perception::TrainOptions& options,
                            std::uint64_t init_seed) {
  TrainedSet out;
  for (std::size_t f = 0; f < corpus.num_spaces(); ++f) {
    auto cfg = config;
    cfg.input_dim = static_cast<int>(corpus.space(f).dim());
    const auto data = build_dataset(corpus, f, records);
    perception::Predictor<float> predictor(cfg, derive_seed(init_seed, {f}));
    auto opts = options;
    opts.seed = derive_seed(options.seed, {f});
    auto result = perception::train(predictor, data, opts);

    std::vector<char> held_out(data.sequences.size(), 0);
    for (auto s : result.validation_sequences) held_out[s] = 1;
    std::vector<perception::SampleRef> val;
    for (const auto& s : data.samples()) {
      if (held_out[s.sequence]) val.push_back(s);
    }
    const auto acc = val.empty() ? perception::AlignmentAccuracy{} : perception::alignment_accuracy(predictor, data, val);
    spdlog::info("space {}: {} samples, held-out alignment accuracy {:.4f} (majority rate {:.4f})",
                 corpus.space(f).space_id, data.samples().size(), acc.accuracy, acc.majority_rate);
    out.predictors.push_back(std::move(predictor));
    out.results.push_back(std::move(result));
    out.validation_accuracy.push_back(acc);
  }
  return out;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, const std::string& space_id,
                                      Ablation variant) {
  if (variant == Ablation::none || variant == Ablation::soft_update) return dir / (space_id + ".kisp");
  return dir / (space_id + "." + std::string(to_string(variant)) + ".kisp");
}

PredictorSet load_predictor_set(const std::filesystem::path& dir, const Corpus& corpus, Ablation variant) {
  PredictorSet out;
  for (const auto& space : corpus.spaces()) {
    const auto path = checkpoint_path(dir, space.space_id, variant);
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing checkpoint " + path.string());
    auto p = perception::load_checkpoint(path);
    if (p.config().input_dim != space.dim()) {
      throw std::runtime_error("checkpoint " + path.string() + " expects dimension " +
                               std::to_string(p.config().input_dim) + ", space has " + std::to_string(space.dim()));
    }
    out.push_back(std::move(p));
  }
  return out;
}

void save_predictor_set(const std::filesystem::path& dir, const Corpus& corpus, const PredictorSet& predictors,
                        Ablation variant) {
  if (predictors.size() != corpus.num_spaces()) throw std::invalid_argument("need one predictor per space");
  std::filesystem::create_directories(dir);
  for (std::size_t f = 0; f < predictors.size(); ++f) {
    perception::save_checkpoint(checkpoint_path(dir, corpus.space(f).space_id, variant), predictors[f]);
  }
}

perception::PredictorConfig variant_config(perception::PredictorConfig config, Ablation variant) {
  if (variant == Ablation::state_rep) config.use_state = false;
  if (variant == Ablation::distance_emb) config.use_distance = false;
  return config;
}

}  // namespace kis::sim
