#include "kis/perception/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kis::perception {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;
constexpr double kLogitClamp = 30.0;

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using ConstMap = Eigen::Map<const Mat<S>>;
template <typename S>
using MutMap = Eigen::Map<Mat<S>>;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

template <typename S>
void layer_norm_forward(const Mat<S>& x, const ConstMap<S>& gamma, const ConstMap<S>& beta, Mat<S>& xhat,
                        Vec<S>& rstd, Mat<S>& out) {
  const auto rows = x.rows();
  const auto d = x.cols();
  xhat.resize(rows, d);
  rstd.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).eval();
    const S var = centered.square().mean();
    rstd[r] = S(1) / std::sqrt(var + S(kLayerNormEps));
    xhat.row(r) = centered * rstd[r];
  }
  out = (xhat.array().rowwise() * gamma.col(0).transpose().array()).rowwise() +
        beta.col(0).transpose().array();
}

// dx is overwritten.
template <typename S>
void layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const Vec<S>& rstd, const ConstMap<S>& gamma,
                         Mat<S>& dx, MutMap<S> dgamma, MutMap<S> dbeta) {
  const auto rows = dy.rows();
  dx.resize(rows, dy.cols());
  dgamma.col(0) += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
  dbeta.col(0) += dy.colwise().sum().transpose();
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto dxhat = (dy.row(r).array() * gamma.col(0).transpose().array()).eval();
    const S mean_dxhat = dxhat.mean();
    const S mean_dxhat_xhat = (dxhat * xhat.row(r).array()).mean();
    dx.row(r) = (rstd[r] * (dxhat - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat)).matrix();
  }
}

// out = in * W^T + b
template <typename S>
void linear(const Mat<S>& in, const ConstMap<S>& w, const ConstMap<S>& b, Mat<S>& out) {
  out.noalias() = in * w.transpose();
  out.rowwise() += b.col(0).transpose();
}

template <typename S>
void dropout_mask(Mat<S>& mask, Eigen::Index rows, Eigen::Index cols, double p, Rng* rng) {
  mask.resize(rows, cols);
  if (rng == nullptr || p <= 0.0) {
    mask.setOnes();
    return;
  }
  std::bernoulli_distribution keep(1.0 - p);
  const S scale = S(1.0 / (1.0 - p));
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) mask(r, c) = keep(*rng) ? scale : S(0);
  }
}

template <typename S>
struct LayerCache {
  Mat<S> x_in, xhat1, h1, q, k, v, o, attn, mask1, x_mid, xhat2, h2, u, g, f, mask2;
  Vec<S> rstd1, rstd2;
  std::vector<Mat<S>> probs;
};

template <typename S>
struct Workspace {
  Mat<S> token_in;  // (L-1) x input_dim: diff (+ state)
  Vec<S> query;
  std::vector<int> token_step;
  std::vector<int> token_bin;
  Mat<S> x0;
  std::vector<LayerCache<S>> layers;
  Mat<S> x_final, xhatf, z;
  Vec<S> rstdf;
  Eigen::Index readout_begin = 0;
  Eigen::Index length = 0;
  bool training = false;
  Vec<S> grad;
};

template <typename S>
Workspace<S>& workspace() {
  thread_local Workspace<S> ws;
  return ws;
}

template <typename S>
void forward(const Predictor<S>& model, const Eigen::VectorXd& query, std::span<const StepTokens> steps,
             Rng* rng, Workspace<S>& ws) {
  const auto& cfg = model.config();
  const auto& lay = model.layout();
  if (steps.empty() || steps.back().empty()) throw std::invalid_argument("predictor needs a non-empty last step");
  if (static_cast<int>(steps.size()) > cfg.max_steps) throw std::invalid_argument("sequence overflow: too many steps");
  if (query.size() != cfg.input_dim) throw std::invalid_argument("query dimension does not match predictor");

  Eigen::Index tokens = 0;
  for (const auto& s : steps) tokens += static_cast<Eigen::Index>(s.size());
  const Eigen::Index L = tokens + 1;
  if (L > cfg.max_sequence()) {
    throw std::invalid_argument("sequence overflow: " + std::to_string(L) + " > " +
                                std::to_string(cfg.max_sequence()));
  }
  ws.length = L;
  ws.readout_begin = L - static_cast<Eigen::Index>(steps.back().size());
  ws.training = rng != nullptr && cfg.dropout > 0.0;
  Rng* drop_rng = ws.training ? rng : nullptr;

  const auto d = cfg.model_dim;
  ws.token_in.resize(tokens, cfg.input_dim);
  ws.token_step.clear();
  ws.token_bin.clear();
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    for (const auto& tok : steps[s]) {
      if (tok.diff.size() != cfg.input_dim || (cfg.use_state && tok.state.size() != cfg.input_dim)) {
        throw std::invalid_argument("token dimension does not match predictor");
      }
      if (cfg.use_state) {
        ws.token_in.row(row) = (tok.diff + tok.state).template cast<S>().transpose();
      } else {
        ws.token_in.row(row) = tok.diff.template cast<S>().transpose();
      }
      ws.token_step.push_back(static_cast<int>(s) + 1);
      ws.token_bin.push_back(std::clamp(tok.dist_bin, 0, kDistanceBins - 1));
      ++row;
    }
  }
  ws.query = query.template cast<S>();

  const auto step_table = model.block(lay.step);
  const auto dist_table = model.block(lay.distance);
  ws.x0.resize(L, d);
  ws.x0.row(0) = (model.block(lay.query_w) * ws.query + model.block(lay.query_b).col(0)).transpose() +
                 step_table.row(0);
  {
    Mat<S> proj;
    linear<S>(ws.token_in, model.block(lay.input_w), model.block(lay.input_b), proj);
    for (Eigen::Index r = 0; r < tokens; ++r) {
      ws.x0.row(r + 1) = proj.row(r) + step_table.row(ws.token_step[static_cast<std::size_t>(r)]);
      if (cfg.use_distance) ws.x0.row(r + 1) += dist_table.row(ws.token_bin[static_cast<std::size_t>(r)]);
    }
  }

  const int heads = cfg.heads;
  const Eigen::Index dh = d / heads;
  const S scale = S(1.0 / std::sqrt(static_cast<double>(dh)));
  ws.layers.resize(static_cast<std::size_t>(cfg.layers));
  const Mat<S>* x = &ws.x0;
  for (int l = 0; l < cfg.layers; ++l) {
    auto& c = ws.layers[static_cast<std::size_t>(l)];
    const auto& ids = lay.layers[static_cast<std::size_t>(l)];
    c.x_in = *x;
    layer_norm_forward<S>(c.x_in, model.block(ids.ln1_gamma), model.block(ids.ln1_beta), c.xhat1, c.rstd1, c.h1);
    linear<S>(c.h1, model.block(ids.wq), model.block(ids.bq), c.q);
    linear<S>(c.h1, model.block(ids.wk), model.block(ids.bk), c.k);
    linear<S>(c.h1, model.block(ids.wv), model.block(ids.bv), c.v);
    c.o.resize(L, d);
    c.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      auto& p = c.probs[static_cast<std::size_t>(h)];
      p.noalias() = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose();
      p *= scale;
      for (Eigen::Index r = 0; r < L; ++r) {
        const S m = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - m).exp().matrix();
        p.row(r) /= p.row(r).sum();
      }
      c.o.middleCols(h * dh, dh).noalias() = p * c.v.middleCols(h * dh, dh);
    }
    linear<S>(c.o, model.block(ids.wo), model.block(ids.bo), c.attn);
    dropout_mask<S>(c.mask1, L, d, cfg.dropout, drop_rng);
    c.x_mid = c.x_in + c.attn.cwiseProduct(c.mask1);

    layer_norm_forward<S>(c.x_mid, model.block(ids.ln2_gamma), model.block(ids.ln2_beta), c.xhat2, c.rstd2, c.h2);
    linear<S>(c.h2, model.block(ids.ff1_w), model.block(ids.ff1_b), c.u);
    const auto u3 = c.u.array().cube();
    c.g = (S(0.5) * c.u.array() * (S(1) + (S(kGeluScale) * (c.u.array() + S(kGeluCubic) * u3)).tanh())).matrix();
    linear<S>(c.g, model.block(ids.ff2_w), model.block(ids.ff2_b), c.f);
    dropout_mask<S>(c.mask2, L, d, cfg.dropout, drop_rng);
    // x_out = x_mid + f * mask2, stored as the next layer's input or x_final.
    if (l + 1 < cfg.layers) {
      ws.layers[static_cast<std::size_t>(l + 1)].x_in = c.x_mid + c.f.cwiseProduct(c.mask2);
      x = &ws.layers[static_cast<std::size_t>(l + 1)].x_in;
    } else {
      ws.x_final = c.x_mid + c.f.cwiseProduct(c.mask2);
      x = &ws.x_final;
    }
  }
  if (cfg.layers == 0) ws.x_final = ws.x0;
  layer_norm_forward<S>(ws.x_final, model.block(lay.final_gamma), model.block(lay.final_beta), ws.xhatf, ws.rstdf,
                        ws.z);
}

template <typename S>
std::vector<double> readout_logits(const Predictor<S>& model, const Workspace<S>& ws) {
  const auto& lay = model.layout();
  const auto head = model.block(lay.head_w);  // 1 x d
  const S bias = model.block(lay.head_b)(0, 0);
  std::vector<double> logits;
  for (Eigen::Index r = ws.readout_begin; r < ws.length; ++r) {
    logits.push_back(static_cast<double>(ws.z.row(r).dot(head.row(0)) + bias));
  }
  return logits;
}

template <typename S>
void backward(const Predictor<S>& model, Workspace<S>& ws, const std::vector<double>& dlogits) {
  const auto& cfg = model.config();
  const auto& lay = model.layout();
  auto& grad = ws.grad;
  grad.setZero(lay.total);
  auto gblock = [&](std::size_t id) -> MutMap<S> {
    const auto& b = lay.blocks[id];
    return {grad.data() + b.offset, b.rows, b.cols};
  };

  const Eigen::Index L = ws.length;
  const auto d = cfg.model_dim;
  Mat<S> dz = Mat<S>::Zero(L, d);
  {
    const auto head = model.block(lay.head_w);
    auto ghead = gblock(lay.head_w);
    auto gbias = gblock(lay.head_b);
    for (std::size_t t = 0; t < dlogits.size(); ++t) {
      const auto r = ws.readout_begin + static_cast<Eigen::Index>(t);
      const S dl = static_cast<S>(dlogits[t]);
      dz.row(r) = dl * head.row(0);
      ghead.row(0) += dl * ws.z.row(r);
      gbias(0, 0) += dl;
    }
  }
  Mat<S> dx;
  layer_norm_backward<S>(dz, ws.xhatf, ws.rstdf, model.block(lay.final_gamma), dx, gblock(lay.final_gamma),
                         gblock(lay.final_beta));

  const int heads = cfg.heads;
  const Eigen::Index dh = d / heads;
  const S scale = S(1.0 / std::sqrt(static_cast<double>(dh)));
  Mat<S> df, dg, du, dh2, dtmp, dattn, dO, dQ, dK, dV, dA, dS, dh1;
  for (int l = cfg.layers - 1; l >= 0; --l) {
    const auto& c = ws.layers[static_cast<std::size_t>(l)];
    const auto& ids = lay.layers[static_cast<std::size_t>(l)];

    // feed-forward branch
    df = dx.cwiseProduct(c.mask2);
    gblock(ids.ff2_w).noalias() += df.transpose() * c.g;
    gblock(ids.ff2_b).col(0) += df.colwise().sum().transpose();
    dg.noalias() = df * model.block(ids.ff2_w);
    {
      const auto u = c.u.array();
      const auto inner = (S(kGeluScale) * (u + S(kGeluCubic) * u.cube())).eval();
      const auto th = inner.tanh().eval();
      const auto deriv =
          (S(0.5) * (S(1) + th) + S(0.5) * u * (S(1) - th.square()) * S(kGeluScale) *
                                      (S(1) + S(3.0 * kGeluCubic) * u.square()))
              .eval();
      du = (dg.array() * deriv).matrix();
    }
    gblock(ids.ff1_w).noalias() += du.transpose() * c.h2;
    gblock(ids.ff1_b).col(0) += du.colwise().sum().transpose();
    dh2.noalias() = du * model.block(ids.ff1_w);
    layer_norm_backward<S>(dh2, c.xhat2, c.rstd2, model.block(ids.ln2_gamma), dtmp, gblock(ids.ln2_gamma),
                           gblock(ids.ln2_beta));
    dx += dtmp;  // now d(x_mid)

    // attention branch
    dattn = dx.cwiseProduct(c.mask1);
    gblock(ids.wo).noalias() += dattn.transpose() * c.o;
    gblock(ids.bo).col(0) += dattn.colwise().sum().transpose();
    dO.noalias() = dattn * model.block(ids.wo);
    dQ.resize(L, d);
    dK.resize(L, d);
    dV.resize(L, d);
    for (int h = 0; h < heads; ++h) {
      const auto& p = c.probs[static_cast<std::size_t>(h)];
      const auto dOh = dO.middleCols(h * dh, dh);
      dA.noalias() = dOh * c.v.middleCols(h * dh, dh).transpose();
      dV.middleCols(h * dh, dh).noalias() = p.transpose() * dOh;
      const Vec<S> rowdot = (dA.array() * p.array()).rowwise().sum();
      dS = (p.array() * (dA.array().colwise() - rowdot.array())).matrix() * scale;
      dQ.middleCols(h * dh, dh).noalias() = dS * c.k.middleCols(h * dh, dh);
      dK.middleCols(h * dh, dh).noalias() = dS.transpose() * c.q.middleCols(h * dh, dh);
    }
    gblock(ids.wq).noalias() += dQ.transpose() * c.h1;
    gblock(ids.bq).col(0) += dQ.colwise().sum().transpose();
    gblock(ids.wk).noalias() += dK.transpose() * c.h1;
    gblock(ids.bk).col(0) += dK.colwise().sum().transpose();
    gblock(ids.wv).noalias() += dV.transpose() * c.h1;
    gblock(ids.bv).col(0) += dV.colwise().sum().transpose();
    dh1.noalias() = dQ * model.block(ids.wq);
    dh1.noalias() += dK * model.block(ids.wk);
    dh1.noalias() += dV * model.block(ids.wv);
    layer_norm_backward<S>(dh1, c.xhat1, c.rstd1, model.block(ids.ln1_gamma), dtmp, gblock(ids.ln1_gamma),
                           gblock(ids.ln1_beta));
    dx += dtmp;  // now d(x_in)
  }

  // embeddings
  gblock(lay.query_w).noalias() += dx.row(0).transpose() * ws.query.transpose();
  gblock(lay.query_b).col(0) += dx.row(0).transpose();
  auto gstep = gblock(lay.step);
  auto gdist = gblock(lay.distance);
  gstep.row(0) += dx.row(0);
  const auto tokens = L - 1;
  if (tokens > 0) {
    const auto dtok = dx.bottomRows(tokens);
    gblock(lay.input_w).noalias() += dtok.transpose() * ws.token_in;
    gblock(lay.input_b).col(0) += dtok.colwise().sum().transpose();
    for (Eigen::Index r = 0; r < tokens; ++r) {
      gstep.row(ws.token_step[static_cast<std::size_t>(r)]) += dtok.row(r);
      if (cfg.use_distance) gdist.row(ws.token_bin[static_cast<std::size_t>(r)]) += dtok.row(r);
    }
  }
}

}  // namespace

void PredictorConfig::validate() const {
  if (input_dim <= 0) throw std::invalid_argument("input_dim must be positive");
  if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0) {
    throw std::invalid_argument("model_dim must be a positive multiple of heads");
  }
  if (layers < 0 || ff_dim <= 0) throw std::invalid_argument("bad layer/ff configuration");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
  if (max_steps <= 0 || num_pairs <= 0) throw std::invalid_argument("max_steps and num_pairs must be positive");
}

void to_json(nlohmann::json& j, const PredictorConfig& c) {
  j = nlohmann::json{{"input_dim", c.input_dim}, {"model_dim", c.model_dim},     {"layers", c.layers},
                     {"heads", c.heads},         {"ff_dim", c.ff_dim},           {"dropout", c.dropout},
                     {"max_steps", c.max_steps}, {"num_pairs", c.num_pairs},     {"use_state", c.use_state},
                     {"use_distance", c.use_distance}};
}

void from_json(const nlohmann::json& j, PredictorConfig& c) {
  c.input_dim = j.at("input_dim").get<int>();
  c.model_dim = j.value("model_dim", c.model_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.dropout = j.value("dropout", c.dropout);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.num_pairs = j.value("num_pairs", c.num_pairs);
  c.use_state = j.value("use_state", c.use_state);
  c.use_distance = j.value("use_distance", c.use_distance);
}

ParameterLayout ParameterLayout::build(const PredictorConfig& config) {
  config.validate();
  ParameterLayout out;
  auto add = [&](std::string name, Eigen::Index rows, Eigen::Index cols) {
    out.blocks.push_back({std::move(name), rows, cols, out.total});
    out.total += rows * cols;
    return out.blocks.size() - 1;
  };
  const auto d = config.model_dim;
  const auto in = config.input_dim;
  out.input_w = add("input.weight", d, in);
  out.input_b = add("input.bias", d, 1);
  out.query_w = add("query.weight", d, in);
  out.query_b = add("query.bias", d, 1);
  out.distance = add("distance.table", kDistanceBins, d);
  out.step = add("step.table", config.max_steps + 1, d);
  for (int l = 0; l < config.layers; ++l) {
    const auto p = "layers." + std::to_string(l) + ".";
    Layer ids{};
    ids.ln1_gamma = add(p + "ln1.gamma", d, 1);
    ids.ln1_beta = add(p + "ln1.beta", d, 1);
    ids.wq = add(p + "attn.wq", d, d);
    ids.bq = add(p + "attn.bq", d, 1);
    ids.wk = add(p + "attn.wk", d, d);
    ids.bk = add(p + "attn.bk", d, 1);
    ids.wv = add(p + "attn.wv", d, d);
    ids.bv = add(p + "attn.bv", d, 1);
    ids.wo = add(p + "attn.wo", d, d);
    ids.bo = add(p + "attn.bo", d, 1);
    ids.ln2_gamma = add(p + "ln2.gamma", d, 1);
    ids.ln2_beta = add(p + "ln2.beta", d, 1);
    ids.ff1_w = add(p + "ff1.weight", config.ff_dim, d);
    ids.ff1_b = add(p + "ff1.bias", config.ff_dim, 1);
    ids.ff2_w = add(p + "ff2.weight", d, config.ff_dim);
    ids.ff2_b = add(p + "ff2.bias", d, 1);
    out.layers.push_back(ids);
  }
  out.final_gamma = add("final.gamma", d, 1);
  out.final_beta = add("final.beta", d, 1);
  out.head_w = add("head.weight", 1, d);
  out.head_b = add("head.bias", 1, 1);
  return out;
}

std::optional<std::size_t> ParameterLayout::find(const std::string& name) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename Scalar>
Predictor<Scalar>::Predictor(PredictorConfig config, std::uint64_t seed)
    : config_(config), layout_(ParameterLayout::build(config)), params_(Vector::Zero(layout_.total)) {
  Rng rng(seed);
  std::normal_distribution<double> table(0.0, 0.02);
  for (std::size_t id = 0; id < layout_.blocks.size(); ++id) {
    const auto& b = layout_.blocks[id];
    auto m = block(id);
    const bool is_gamma = b.name.ends_with("gamma");
    const bool is_bias = b.cols == 1 && !is_gamma;
    if (is_gamma) {
      m.setOnes();
    } else if (is_bias) {
      m.setZero();
    } else if (id == layout_.distance || id == layout_.step || id == layout_.head_w) {
      if (id == layout_.distance && !config_.use_distance) continue;
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(table(rng));
    } else {
      const double limit = std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(u(rng));
    }
  }
}

template <typename Scalar>
Predictor<Scalar>::Predictor(PredictorConfig config, Vector params)
    : config_(config), layout_(ParameterLayout::build(config)), params_(std::move(params)) {
  if (params_.size() != layout_.total) {
    throw std::invalid_argument("parameter vector has " + std::to_string(params_.size()) + " entries, layout needs " +
                                std::to_string(layout_.total));
  }
}

template <typename Scalar>
std::vector<double> predict_logits(const Predictor<Scalar>& predictor, const Eigen::VectorXd& query,
                                   std::span<const StepTokens> steps) {
  auto& ws = workspace<Scalar>();
  forward(predictor, query, steps, nullptr, ws);
  return readout_logits(predictor, ws);
}

template <typename Scalar>
std::vector<double> predict(const Predictor<Scalar>& predictor, const Eigen::VectorXd& query,
                            std::span<const StepTokens> steps) {
  auto out = predict_logits(predictor, query, steps);
  for (auto& v : out) {
    if (!std::isfinite(v)) v = 0.0;
    v = stable_sigmoid(std::clamp(v, -kLogitClamp, kLogitClamp));
  }
  return out;
}

template <typename Scalar>
double sequence_loss(const Predictor<Scalar>& predictor, const Eigen::VectorXd& query,
                     std::span<const StepTokens> steps, std::span<const double> labels) {
  const auto logits = predict_logits(predictor, query, steps);
  if (labels.size() != logits.size()) throw std::invalid_argument("label count does not match last step");
  double loss = 0.0;
  for (std::size_t t = 0; t < logits.size(); ++t) loss += softplus(logits[t]) - labels[t] * logits[t];
  return loss;
}

template <typename Scalar>
double accumulate_gradient(const Predictor<Scalar>& predictor, const Eigen::VectorXd& query,
                           std::span<const StepTokens> steps, std::span<const double> labels, double weight,
                           Eigen::VectorXd& grad, Rng* dropout_rng) {
  auto& ws = workspace<Scalar>();
  forward(predictor, query, steps, dropout_rng, ws);
  const auto logits = readout_logits(predictor, ws);
  if (labels.size() != logits.size()) throw std::invalid_argument("label count does not match last step");
  double loss = 0.0;
  std::vector<double> dlogits(logits.size());
  for (std::size_t t = 0; t < logits.size(); ++t) {
    loss += softplus(logits[t]) - labels[t] * logits[t];
    dlogits[t] = weight * (stable_sigmoid(logits[t]) - labels[t]);
  }
  backward(predictor, ws, dlogits);
  if (grad.size() != predictor.layout().total) grad = Eigen::VectorXd::Zero(predictor.layout().total);
  grad += ws.grad.template cast<double>();
  return weight * loss;
}

template class Predictor<float>;
template class Predictor<double>;

#define KIS_INSTANTIATE(S)                                                                                    \
  template std::vector<double> predict<S>(const Predictor<S>&, const Eigen::VectorXd&,                       \
                                          std::span<const StepTokens>);                                       \
  template std::vector<double> predict_logits<S>(const Predictor<S>&, const Eigen::VectorXd&,                \
                                                 std::span<const StepTokens>);                                \
  template double sequence_loss<S>(const Predictor<S>&, const Eigen::VectorXd&, std::span<const StepTokens>, \
                                   std::span<const double>);                                                  \
  template double accumulate_gradient<S>(const Predictor<S>&, const Eigen::VectorXd&,                        \
                                         std::span<const StepTokens>, std::span<const double>, double,        \
                                         Eigen::VectorXd&, Rng*);

KIS_INSTANTIATE(float)
KIS_INSTANTIATE(double)

#undef KIS_INSTANTIATE

}  // namespace kis::perception
