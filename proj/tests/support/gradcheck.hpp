#pragma once

// Central finite-difference oracles for the hand-written backprop in the
// projection network and the autograd tape behind the transformer.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "zsa/backbones/convnets.hpp"
#include "zsa/backbones/transformer.hpp"
#include "zsa/crossmodal/projection.hpp"

namespace zsa::oracle {

struct GradCheck {
  double max_rel = 0.0;
  std::size_t coords = 0;
  std::string worst;
};

// Gradients below the floor are compared absolutely.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct Coordinate {
  std::string tensor;
  std::size_t index;
};

inline void record(GradCheck& r, const Coordinate& c, double analytic, double numeric) {
  const double e = rel_error(analytic, numeric);
  ++r.coords;
  if (e > r.max_rel || r.worst.empty()) {
    r.max_rel = std::max(r.max_rel, e);
    r.worst = c.tensor + "[" + std::to_string(c.index) + "] analytic " + std::to_string(analytic) + " numeric " +
              std::to_string(numeric);
  }
}

inline double central_difference(double& x, double h, const std::function<double()>& f) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

// Compares the tape gradients of `forward` (a scalar root built on a fresh
// graph) with central differences on random trainable coordinates. Every
// trainable tensor is probed at least once when `coords` allows.
inline GradCheck check_tape_gradients(ParameterSet<double>& ps,
                                      const std::function<Var<double>(Graph<double>&)>& forward,
                                      std::uint64_t seed, std::size_t coords, double h = 1e-5) {
  auto loss = [&] {
    Graph<double> g(false);
    return forward(g).value()[0];
  };
  ps.zero_grad();
  {
    Graph<double> g;
    g.backward(forward(g));
  }
  std::vector<std::string> names;
  for (const auto& [name, p] : ps)
    if (p.trainable) names.push_back(name);
  GradCheck r;
  Rng pick(seed + 7);
  for (std::size_t i = 0; i < coords; ++i) {
    const auto& name = names[i < names.size() ? i : pick.index(names.size())];
    auto& p = ps.at(name);
    const std::size_t k = pick.index(p.value.size());
    const double numeric = central_difference(p.value[k], h, loss);
    record(r, {name, k}, p.grad[k], numeric);
  }
  return r;
}

// Loss = mean BCE of candidate logits z E^T against multi-hot targets, the
// objective used for projection training. A dropout mask is replayed from
// `dropout_seed` for every evaluation so the loss is a smooth function.
inline GradCheck check_projection_gradients(std::uint64_t seed, std::size_t coords, bool with_dropout) {
  const std::size_t B = 3, m = 5, H = 7, n = 4, C = 6;
  const double h = 1e-5;
  Rng rng(seed);
  auto p = crossmodal::init_projection<double>(m, n, rng, H, with_dropout ? 0.3 : 0.0);
  for (auto& v : p.b1().values()) v = rng.uniform(-0.5, 0.5);
  for (auto& v : p.b2().values()) v = rng.uniform(-0.5, 0.5);
  for (auto& v : p.mean().values()) v = rng.uniform(-1, 1);
  for (auto& v : p.std().values()) v = rng.uniform(0.5, 2);
  Tensor<double> a({B, m});
  for (auto& v : a.values()) v = rng.normal();
  std::vector<semantics::SemanticEmbedding> E;
  for (std::size_t c = 0; c < C; ++c) {
    semantics::SemanticEmbedding e{"c" + std::to_string(c), {}};
    for (std::size_t k = 0; k < n; ++k) e.vector.push_back(static_cast<float>(rng.normal()));
    E.push_back(e);
  }
  std::vector<double> targets(B * C);
  for (auto& t : targets) t = rng.bernoulli(0.4) ? 1.0 : 0.0;
  const std::uint64_t dropout_seed = seed + 1000;
  const Mode mode = with_dropout ? Mode::train : Mode::eval;

  auto loss = [&] {
    Rng dr(dropout_seed);
    auto z = crossmodal::project_batch(p, a, mode, &dr);
    auto L = crossmodal::candidate_logits(z, E);
    return crossmodal::bce_loss(L.storage(), targets);
  };

  Rng dr(dropout_seed);
  crossmodal::ProjectionCache<double> cache;
  auto z = crossmodal::project_batch(p, a, mode, &dr, &cache);
  auto L = crossmodal::candidate_logits(z, E);
  // dLoss/dz = sum_c (sigmoid(l) - y) / (B C) * e_c
  Tensor<double> dz({B, n});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double d = (crossmodal::sigmoid(L(b, c)) - targets[b * C + c]) / static_cast<double>(B * C);
      for (std::size_t k = 0; k < n; ++k) dz(b, k) += d * E[c].vector[k];
    }
  auto g = crossmodal::project_backward(p, cache, dz);

  struct Target {
    std::string name;
    Tensor<double>* value;
    const Tensor<double>* grad;
  };
  std::vector<Target> targets_list{{"fc1.weight", &p.w1(), &g.w1}, {"fc1.bias", &p.b1(), &g.b1},
                                   {"fc2.weight", &p.w2(), &g.w2}, {"fc2.bias", &p.b2(), &g.b2},
                                   {"norm.mean", &p.mean(), &g.mean}, {"norm.std", &p.std(), &g.std},
                                   {"input", &a, &g.input}};
  GradCheck r;
  Rng pick(seed + 7);
  for (std::size_t i = 0; i < coords; ++i) {
    auto& t = targets_list[i < targets_list.size() ? i : pick.index(targets_list.size())];
    const std::size_t k = pick.index(t.value->size());
    const double numeric = central_difference((*t.value)[k], h, loss);
    record(r, {t.name, k}, (*t.grad)[k], numeric);
  }
  return r;
}

// Tiny transformer (d=8, h=2, L=1) on a 2x3 patch grid; the scalar loss is a
// fixed random linear readout of the embedding. With `patchout` one row and
// one column are dropped, replaying the same selection on every evaluation.
inline GradCheck check_transformer_gradients(std::uint64_t seed, std::size_t coords, bool patchout = false) {
  backbones::TransformerConfig c;
  c.patch_freq = 4;
  c.patch_time = 4;
  c.dim = 8;
  c.heads = 2;
  c.layers = 1;
  c.max_freq_patches = 2;
  c.max_time_patches = 3;
  const std::size_t m = 5;
  Rng rng(seed);
  auto ps = backbones::init_transformer<double>(c, m, rng);
  // Non-trivial norms and biases so every path carries gradient.
  for (auto& [name, p] : ps)
    if (name.find("gamma") != std::string::npos || name.find("beta") != std::string::npos ||
        name.find("bias") != std::string::npos)
      for (auto& v : p.value.values()) v += rng.uniform(-0.3, 0.3);
  Tensor<double> x({8, 12});
  for (auto& v : x.values()) v = rng.normal();
  std::vector<double> readout(m);
  for (auto& v : readout) v = rng.normal();

  auto forward = [&](Graph<double>& g) {
    Rng po(seed + 99);
    auto y = patchout ? backbones::transformer_embed(g, ps, c, backbones::PatchoutConfig{1, 1}, x, Mode::train, &po)
                      : backbones::transformer_embed(g, ps, c, backbones::PatchoutConfig{0, 0}, x, Mode::eval, nullptr);
    Tensor<double> w({m, 1}, readout);
    return ops::matmul(y, g.constant(w));
  };

  return check_tape_gradients(ps, forward, seed, coords);
}

}  // namespace zsa::oracle
