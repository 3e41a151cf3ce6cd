#include "kis/perception/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace kis::perception {

namespace {

constexpr std::array<char, 4> kCheckpointMagic = {'K', 'I', 'S', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::span<const StepTokens> prefix(const SequenceExample& seq, int step) {
  return std::span<const StepTokens>(seq.steps.data(), static_cast<std::size_t>(step));
}

std::span<const double> step_labels(const SequenceExample& seq, int step) {
  return seq.labels.at(static_cast<std::size_t>(step - 1));
}

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("truncated checkpoint");
  return v;
}

}  // namespace

std::vector<SampleRef> Dataset::samples() const {
  std::vector<SampleRef> out;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    for (std::size_t t = 0; t < sequences[s].steps.size(); ++t) {
      if (!sequences[s].steps[t].empty()) out.push_back({s, static_cast<int>(t) + 1});
    }
  }
  return out;
}

std::size_t Dataset::num_judgments() const {
  std::size_t n = 0;
  for (const auto& seq : sequences) {
    for (const auto& step : seq.steps) n += step.size();
  }
  return n;
}

template <typename Scalar>
double mean_loss(const Predictor<Scalar>& predictor, const Dataset& data, const std::vector<SampleRef>& samples) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    const auto& seq = data.sequences[s.sequence];
    total += sequence_loss(predictor, seq.query, prefix(seq, s.step), step_labels(seq, s.step));
    count += seq.steps[static_cast<std::size_t>(s.step - 1)].size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

template double mean_loss<float>(const Predictor<float>&, const Dataset&, const std::vector<SampleRef>&);
template double mean_loss<double>(const Predictor<double>&, const Dataset&, const std::vector<SampleRef>&);

TrainResult train(Predictor<float>& predictor, const Dataset& data, const TrainOptions& options) {
  if (data.sequences.empty()) throw std::invalid_argument("training dataset is empty");
  if (options.batch_size <= 0 || options.epochs < 0) throw std::invalid_argument("bad batch size or epoch count");
  for (const auto& seq : data.sequences) {
    if (seq.labels.size() != seq.steps.size()) throw std::invalid_argument("every step needs alignment labels");
  }

  TrainResult result;
  std::vector<std::size_t> order(data.sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(options.seed, {0x5e11}));
  std::shuffle(order.begin(), order.end(), split_rng);
  std::size_t n_val = 0;
  if (options.validation_fraction > 0.0 && order.size() >= 2) {
    n_val = std::min(order.size() - 1,
                     static_cast<std::size_t>(std::floor(options.validation_fraction * order.size())));
  }
  result.validation_sequences.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(result.validation_sequences.begin(), result.validation_sequences.end());

  std::vector<char> is_val(data.sequences.size(), 0);
  for (auto s : result.validation_sequences) is_val[s] = 1;
  std::vector<SampleRef> train_samples, val_samples;
  for (const auto& s : data.samples()) (is_val[s.sequence] ? val_samples : train_samples).push_back(s);
  if (train_samples.empty()) throw std::invalid_argument("no training samples after the validation split");

  const auto n_params = predictor.layout().total;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd master = predictor.params().cast<double>();
  long long adam_step = 0;
  const bool track_best = options.keep_best && !val_samples.empty();
  Eigen::VectorXf best_params = predictor.params();
  double best_val = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(options.seed, {0xe90c, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(train_samples.begin(), train_samples.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;

    for (std::size_t begin = 0; begin < train_samples.size(); begin += static_cast<std::size_t>(options.batch_size)) {
      const auto end = std::min(train_samples.size(), begin + static_cast<std::size_t>(options.batch_size));
      std::size_t batch_judgments = 0;
      for (auto i = begin; i < end; ++i) {
        const auto& s = train_samples[i];
        batch_judgments += data.sequences[s.sequence].steps[static_cast<std::size_t>(s.step - 1)].size();
      }
      const double weight = 1.0 / static_cast<double>(batch_judgments);
      grad.setZero();
      double batch_loss = 0.0;
      for (auto i = begin; i < end; ++i) {
        const auto& s = train_samples[i];
        const auto& seq = data.sequences[s.sequence];
        Rng dropout_rng(derive_seed(options.seed, {0xd409, static_cast<std::uint64_t>(epoch), i}));
        batch_loss += accumulate_gradient(predictor, seq.query, prefix(seq, s.step), step_labels(seq, s.step),
                                          weight, grad, &dropout_rng);
      }
      if (!std::isfinite(batch_loss) || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch starting " << begin << " (loss=" << batch_loss
            << ", lr=" << options.learning_rate << "); the learning rate is likely too high";
        throw TrainingError(msg.str());
      }
      epoch_loss += batch_loss * static_cast<double>(batch_judgments);
      epoch_count += batch_judgments;

      ++adam_step;
      m = options.beta1 * m + (1.0 - options.beta1) * grad;
      v = options.beta2 * v + (1.0 - options.beta2) * grad.cwiseProduct(grad);
      const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(adam_step));
      const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(adam_step));
      master.array() -= options.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + options.epsilon);
      predictor.params() = master.cast<float>();
    }

    result.train_loss.push_back(epoch_loss / static_cast<double>(epoch_count));
    result.val_loss.push_back(val_samples.empty() ? std::nan("") : mean_loss(predictor, data, val_samples));
    if (options.on_epoch) options.on_epoch(epoch, result.train_loss.back(), result.val_loss.back());
    if (track_best && result.val_loss.back() < best_val) {
      best_val = result.val_loss.back();
      best_params = predictor.params();
      result.best_epoch = epoch;
    }
  }
  if (track_best && result.best_epoch != static_cast<int>(result.val_loss.size()) - 1) {
    predictor.params() = best_params;
    spdlog::info("restored epoch {} (validation loss {:.4f})", result.best_epoch, best_val);
  }
  if (val_samples.empty()) result.val_loss.clear();
  return result;
}

AlignmentAccuracy alignment_accuracy(const Predictor<float>& predictor, const Dataset& data,
                                     const std::vector<SampleRef>& samples) {
  AlignmentAccuracy out;
  std::size_t correct = 0, positives = 0;
  for (const auto& s : samples) {
    const auto& seq = data.sequences[s.sequence];
    const auto conf = predict(predictor, seq.query, prefix(seq, s.step));
    const auto labels = step_labels(seq, s.step);
    for (std::size_t j = 0; j < conf.size(); ++j) {
      const int predicted = conf[j] >= 0.5 ? 1 : 0;
      const int truth = labels[j] >= 0.5 ? 1 : 0;
      correct += predicted == truth ? 1 : 0;
      positives += static_cast<std::size_t>(truth);
      ++out.judgments;
    }
  }
  if (out.judgments > 0) {
    const double n = static_cast<double>(out.judgments);
    out.accuracy = static_cast<double>(correct) / n;
    const double pos_rate = static_cast<double>(positives) / n;
    out.majority_rate = std::max(pos_rate, 1.0 - pos_rate);
  }
  return out;
}

GradientCheckResult gradient_check(const Predictor<double>& predictor, const SequenceExample& sample, int step,
                                   double epsilon, std::size_t max_params, std::uint64_t seed,
                                   const std::vector<std::size_t>& blocks) {
  if (!(epsilon >= 1e-5 && epsilon <= 1e-3)) throw std::invalid_argument("epsilon must lie in [1e-5, 1e-3]");
  const auto steps = prefix(sample, step);
  const auto labels = step_labels(sample, step);

  Eigen::VectorXd analytic = Eigen::VectorXd::Zero(predictor.layout().total);
  accumulate_gradient(predictor, sample.query, steps, labels, 1.0, analytic, nullptr);

  std::vector<Eigen::Index> candidates;
  if (blocks.empty()) {
    candidates.resize(static_cast<std::size_t>(predictor.layout().total));
    std::iota(candidates.begin(), candidates.end(), Eigen::Index{0});
  } else {
    for (auto id : blocks) {
      const auto& b = predictor.layout().blocks.at(id);
      for (Eigen::Index i = 0; i < b.size(); ++i) candidates.push_back(b.offset + i);
    }
  }
  if (candidates.size() > max_params) {
    Rng rng(seed);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(max_params);
  }

  Predictor<double> work = predictor;
  GradientCheckResult result;
  for (auto idx : candidates) {
    const double original = work.params()[idx];
    work.params()[idx] = original + epsilon;
    const double up = sequence_loss(work, sample.query, steps, labels);
    work.params()[idx] = original - epsilon;
    const double down = sequence_loss(work, sample.query, steps, labels);
    work.params()[idx] = original;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[idx];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
    ++result.checked;
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const Predictor<float>& predictor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string header = nlohmann::json(predictor.config()).dump();
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const auto& layout = predictor.layout();
  write_u32(out, static_cast<std::uint32_t>(layout.blocks.size()));
  for (const auto& b : layout.blocks) {
    write_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    write_u32(out, static_cast<std::uint32_t>(b.rows));
    write_u32(out, static_cast<std::uint32_t>(b.cols));
    out.write(reinterpret_cast<const char*>(predictor.params().data() + b.offset),
              static_cast<std::streamsize>(sizeof(float) * b.size()));
  }
  if (!out) throw std::runtime_error("short write to checkpoint " + path.string());
}

Predictor<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw std::runtime_error("bad checkpoint magic in " + path.string());
  if (read_u32(in) != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  std::string header(read_u32(in), '\0');
  in.read(header.data(), static_cast<std::streamsize>(header.size()));
  const auto config = nlohmann::json::parse(header).get<PredictorConfig>();
  Predictor<float> predictor(config, Eigen::VectorXf::Zero(ParameterLayout::build(config).total));
  const auto count = read_u32(in);
  std::vector<char> seen(predictor.layout().blocks.size(), 0);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(read_u32(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rows = read_u32(in);
    const auto cols = read_u32(in);
    const auto id = predictor.layout().find(name);
    if (!id) throw std::runtime_error("checkpoint has unknown tensor '" + name + "'");
    const auto& b = predictor.layout().blocks[*id];
    if (b.rows != rows || b.cols != cols) throw std::runtime_error("shape mismatch for tensor '" + name + "'");
    in.read(reinterpret_cast<char*>(predictor.params().data() + b.offset),
            static_cast<std::streamsize>(sizeof(float) * b.size()));
    if (!in) throw std::runtime_error("truncated checkpoint tensor '" + name + "'");
    seen[*id] = 1;
  }
  for (std::size_t id = 0; id < seen.size(); ++id) {
    if (!seen[id]) throw std::runtime_error("checkpoint is missing tensor '" + predictor.layout().blocks[id].name + "'");
  }
  return predictor;
}

}  // namespace kis::perception
