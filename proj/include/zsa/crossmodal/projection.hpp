#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zsa/core/autograd.hpp"
#include "zsa/core/error.hpp"
#include "zsa/core/params.hpp"
#include "zsa/core/rng.hpp"
#include "zsa/semantics/vectors.hpp"

namespace zsa::crossmodal {

// Two-layer projection from the audio embedding space (m) into the semantic
// space (n), preceded by a fixed per-dimension z-score normalizer.
template <class T>
struct ProjectionParams {
  ParameterSet<T> params;
  double dropout_rate = 0.2;

  Tensor<T>& mean() { return params.at("norm.mean").value; }
  Tensor<T>& std() { return params.at("norm.std").value; }
  Tensor<T>& w1() { return params.at("fc1.weight").value; }
  Tensor<T>& b1() { return params.at("fc1.bias").value; }
  Tensor<T>& w2() { return params.at("fc2.weight").value; }
  Tensor<T>& b2() { return params.at("fc2.bias").value; }
  const Tensor<T>& mean() const { return params.at("norm.mean").value; }
  const Tensor<T>& std() const { return params.at("norm.std").value; }
  const Tensor<T>& w1() const { return params.at("fc1.weight").value; }
  const Tensor<T>& b1() const { return params.at("fc1.bias").value; }
  const Tensor<T>& w2() const { return params.at("fc2.weight").value; }
  const Tensor<T>& b2() const { return params.at("fc2.bias").value; }

  std::size_t input_dim() const { return mean().size(); }
  std::size_t hidden_dim() const { return b1().size(); }
  std::size_t output_dim() const { return b2().size(); }

  void validate() const {
    const std::size_t m = input_dim(), h = hidden_dim(), n = output_dim();
    if (std().size() != m || w1().shape() != Shape{h, m} || w2().shape() != Shape{n, h})
      throw DataError("projection: inconsistent parameter shapes");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("projection: dropout_rate must lie in [0, 1)");
    for (T s : std().values())
      if (!(s > T(0))) throw DataError("projection: normalizer std must be strictly positive");
    for (const auto& [name, p] : params)
      for (T v : p.value.values())
        if (!std::isfinite(static_cast<double>(v))) throw NumericalError("projection: non-finite value in '" + name + "'");
  }

  template <class U>
  ProjectionParams<U> cast() const {
    return {params.template cast<U>(), dropout_rate};
  }
};

template <class T>
ProjectionParams<T> init_projection(std::size_t m, std::size_t n, Rng& rng, std::size_t hidden = 1024,
                                    double dropout_rate = 0.2) {
  if (m == 0 || n == 0 || hidden == 0) throw ConfigError("projection: dimensions must be positive");
  ProjectionParams<T> p;
  p.dropout_rate = dropout_rate;
  p.params.add("norm.mean", Tensor<T>({m}), false);
  p.params.add("norm.std", Tensor<T>({m}, T(1)), false);
  p.params.add("fc1.weight", init_fan_in<T>(rng, {hidden, m}, m));
  p.params.add("fc1.bias", Tensor<T>({hidden}));
  p.params.add("fc2.weight", init_fan_in<T>(rng, {n, hidden}, hidden));
  p.params.add("fc2.bias", Tensor<T>({n}));
  p.validate();
  return p;
}

// Intermediate values of a batched forward pass, kept for backprop.
template <class T>
struct ProjectionCache {
  Tensor<T> input;   // [B, m]
  Tensor<T> z;       // normalized input
  Tensor<T> pre;     // W1 z + b1, [B, H]
  Tensor<T> hidden;  // GELU(pre) after dropout
  Tensor<T> keep;    // dropout scale per hidden unit (0 or 1/(1-rate)); empty in eval mode
  Tensor<T> out;     // [B, n]
};

template <class T>
Tensor<T> project_batch(const ProjectionParams<T>& p, const Tensor<T>& a, Mode mode, Rng* rng,
                        ProjectionCache<T>* cache = nullptr) {
  const std::size_t m = p.input_dim(), H = p.hidden_dim(), n = p.output_dim();
  if (a.rank() != 2 || a.cols() != m)
    throw DataError("project: embedding shape " + shape_str(a.shape()) + ", expected [B, " + std::to_string(m) + "]");
  for (T v : a.values())
    if (!std::isfinite(static_cast<double>(v))) throw NumericalError("project: non-finite input embedding");
  const std::size_t B = a.rows();
  const auto& mu = p.mean();
  const auto& sd = p.std();
  Tensor<T> z({B, m});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < m; ++i) z(b, i) = (a(b, i) - mu[i]) / sd[i];
  Tensor<T> pre({B, H});
  gemm_nt(z.data(), p.w1().data(), pre.data(), B, m, H, false);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < H; ++j) pre(b, j) += p.b1()[j];
  Tensor<T> hid({B, H});
  for (std::size_t i = 0; i < hid.size(); ++i) hid[i] = ops::gelu_value(pre[i]);
  Tensor<T> keep;
  if (mode == Mode::train && p.dropout_rate > 0.0) {
    if (!rng) throw ConfigError("project: train mode with dropout needs an rng");
    keep = Tensor<T>({B, H});
    const T s = static_cast<T>(1.0 / (1.0 - p.dropout_rate));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      keep[i] = rng->bernoulli(p.dropout_rate) ? T(0) : s;
      hid[i] *= keep[i];
    }
  }
  Tensor<T> out({B, n});
  gemm_nt(hid.data(), p.w2().data(), out.data(), B, H, n, false);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < n; ++k) out(b, k) += p.b2()[k];
  if (cache) *cache = {a, std::move(z), std::move(pre), std::move(hid), std::move(keep), out};
  return out;
}

template <class T>
std::vector<T> project(const ProjectionParams<T>& p, std::span<const T> a, Mode mode = Mode::eval,
                       Rng* rng = nullptr) {
  Tensor<T> x({1, a.size()}, std::vector<T>(a.begin(), a.end()));
  return project_batch(p, x, mode, rng).storage();
}

// Gradients of a scalar loss with respect to every projection tensor and the
// input, given dLoss/dOut.
template <class T>
struct ProjectionGrads {
  Tensor<T> w1, b1, w2, b2, mean, std, input;
};

template <class T>
ProjectionGrads<T> project_backward(const ProjectionParams<T>& p, const ProjectionCache<T>& c, const Tensor<T>& dout) {
  const std::size_t m = p.input_dim(), H = p.hidden_dim(), n = p.output_dim(), B = c.out.rows();
  if (dout.shape() != c.out.shape()) throw DataError("project_backward: gradient shape mismatch");
  ProjectionGrads<T> g;
  g.w2 = Tensor<T>({n, H});
  gemm_tn(dout.data(), c.hidden.data(), g.w2.data(), B, n, H, false);
  g.b2 = Tensor<T>({n});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < n; ++k) g.b2[k] += dout(b, k);
  Tensor<T> dpre({B, H});
  gemm_nn(dout.data(), p.w2().data(), dpre.data(), B, n, H, false);
  for (std::size_t i = 0; i < dpre.size(); ++i) {
    if (!c.keep.empty()) dpre[i] *= c.keep[i];
    dpre[i] *= ops::gelu_derivative(c.pre[i]);
  }
  g.w1 = Tensor<T>({H, m});
  gemm_tn(dpre.data(), c.z.data(), g.w1.data(), B, H, m, false);
  g.b1 = Tensor<T>({H});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < H; ++j) g.b1[j] += dpre(b, j);
  Tensor<T> dz({B, m});
  gemm_nn(dpre.data(), p.w1().data(), dz.data(), B, H, m, false);
  g.input = Tensor<T>({B, m});
  g.mean = Tensor<T>({m});
  g.std = Tensor<T>({m});
  const auto& sd = p.std();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < m; ++i) {
      const T d = dz(b, i) / sd[i];
      g.input(b, i) = d;
      g.mean[i] -= d;
      g.std[i] -= d * c.z(b, i);
    }
  return g;
}

struct ScorePair {
  double logit = 0.0;
  double probability = 0.5;
};

inline double sigmoid(double x) { return ops::sigmoid(x); }

template <class T>
ScorePair score(std::span<const T> a, std::span<const float> e, const ProjectionParams<T>& p) {
  if (e.size() != p.output_dim())
    throw DataError("score: semantic embedding has dimension " + std::to_string(e.size()) + ", projection emits " +
                    std::to_string(p.output_dim()));
  const auto z = project(p, a);
  double l = 0;
  for (std::size_t k = 0; k < z.size(); ++k) l += static_cast<double>(z[k]) * static_cast<double>(e[k]);
  return {l, sigmoid(l)};
}

// Logits of every candidate for each row of `z` (already projected).
template <class T>
Tensor<T> candidate_logits(const Tensor<T>& z, const std::vector<semantics::SemanticEmbedding>& candidates) {
  const std::size_t n = z.cols();
  Tensor<T> E({candidates.size(), n});
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (candidates[c].vector.size() != n)
      throw DataError("semantic embedding of '" + candidates[c].class_id + "' has dimension " +
                      std::to_string(candidates[c].vector.size()) + ", projection emits " + std::to_string(n));
    for (std::size_t k = 0; k < n; ++k) E(c, k) = static_cast<T>(candidates[c].vector[k]);
  }
  Tensor<T> L({z.rows(), candidates.size()});
  gemm_nt(z.data(), E.data(), L.data(), z.rows(), n, candidates.size(), false);
  return L;
}

// Index of the largest logit; ties go to the lowest class id.
inline std::size_t argmax_candidate(std::span<const double> logits,
                                    const std::vector<semantics::SemanticEmbedding>& candidates) {
  if (candidates.empty()) throw ConfigError("classify: empty candidate set");
  std::size_t best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c)
    if (logits[c] > logits[best] || (logits[c] == logits[best] && candidates[c].class_id < candidates[best].class_id))
      best = c;
  return best;
}

template <class T>
std::string classify(std::span<const T> a, const std::vector<semantics::SemanticEmbedding>& candidates,
                     const ProjectionParams<T>& p) {
  if (candidates.empty()) throw ConfigError("classify: empty candidate set");
  std::vector<double> logits;
  for (const auto& c : candidates) logits.push_back(score(a, c.vector, p).logit);
  return candidates[argmax_candidate(logits, candidates)].class_id;
}

// Mean over all entries of the stable binary cross-entropy.
inline double bce_loss(std::span<const double> logits, std::span<const double> targets) {
  if (logits.size() != targets.size()) throw DataError("bce_loss: length mismatch");
  if (logits.empty()) throw DataError("bce_loss: empty input");
  double s = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += ops::bce_term(logits[i], targets[i]);
  return s / static_cast<double>(logits.size());
}

}  // namespace zsa::crossmodal
