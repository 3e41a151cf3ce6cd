#pragma once

// Plain-loop reference of the posterior: softmax start, per-space sigmoid
// sums, sum over spaces, product over steps. Only std::vector and scalar math.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "kis/corpus.hpp"

namespace kis::oracle {

using Vec = std::vector<double>;

inline double dot_rows(const EmbeddingSpace& s, Eigen::Index a, Eigen::Index b) {
  double acc = 0.0;
  for (Eigen::Index d = 0; d < s.dim(); ++d) acc += static_cast<double>(s.vectors(a, d)) * static_cast<double>(s.vectors(b, d));
  return acc;
}

// Stored rows are the unit embeddings, so only the query is normalized.
inline double cosine(const EmbeddingSpace& s, Eigen::Index row, const std::vector<double>& q) {
  double dot = 0.0, qq = 0.0;
  for (Eigen::Index d = 0; d < s.dim(); ++d) {
    dot += static_cast<double>(s.vectors(row, d)) * q[static_cast<std::size_t>(d)];
    qq += q[static_cast<std::size_t>(d)] * q[static_cast<std::size_t>(d)];
  }
  return dot / std::sqrt(qq);
}

struct OracleJudgment {
  Eigen::Index a, b;
  int label;
  Vec confidence;  // per space
};

/// Prior from per-space queries; n_prune = 0 keeps everything.
inline Vec prior(const Corpus& c, const std::vector<std::vector<double>>& queries, double tau, int n_prune) {
  const auto n = static_cast<std::size_t>(c.num_items());
  Vec score(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < c.num_spaces(); ++f) score[i] += cosine(c.space(f), static_cast<Eigen::Index>(i), queries[f]);
    score[i] /= static_cast<double>(c.num_spaces());
  }
  std::vector<char> keep(n, 1);
  if (n_prune > 0 && static_cast<std::size_t>(n_prune) < n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return score[x] > score[y]; });
    std::fill(keep.begin(), keep.end(), 0);
    for (int r = 0; r < n_prune; ++r) keep[order[static_cast<std::size_t>(r)]] = 1;
  }
  double top = -1e300;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) top = std::max(top, score[i]);
  Vec p(n, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    p[i] = std::exp((score[i] - top) / tau);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

/// p_hat for one space: sum over judgments of sigmoid(c * (s(v+, v_i) - s(v-, v_i)) / rho).
inline Vec temporal(const EmbeddingSpace& s, const std::vector<OracleJudgment>& js, std::size_t f, double rho) {
  Vec out(static_cast<std::size_t>(s.size()), 0.0);
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    for (const auto& j : js) {
      const auto plus = j.label == 0 ? j.a : j.b;
      const auto minus = j.label == 0 ? j.b : j.a;
      const double gap = dot_rows(s, plus, i) - dot_rows(s, minus, i);
      out[static_cast<std::size_t>(i)] += 1.0 / (1.0 + std::exp(-j.confidence[f] * gap / rho));
    }
  }
  return out;
}

/// One multiplicative step: p_i <- p_i * sum_f p_hat_i^f, renormalized.
inline Vec step(const Corpus& c, const Vec& p, const std::vector<OracleJudgment>& js, double rho) {
  Vec factor(p.size(), 0.0);
  for (std::size_t f = 0; f < c.num_spaces(); ++f) {
    const auto t = temporal(c.space(f), js, f, rho);
    for (std::size_t i = 0; i < p.size(); ++i) factor[i] += t[i];
  }
  Vec out(p.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = p[i] * factor[i];
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

}  // namespace kis::oracle
