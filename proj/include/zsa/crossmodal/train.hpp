#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsa/core/checkpoint.hpp"
#include "zsa/crossmodal/optim.hpp"
#include "zsa/crossmodal/projection.hpp"
#include "zsa/eval/metrics.hpp"
#include "zsa/protocol/manifest.hpp"

namespace zsa::crossmodal {

struct ProjectionSetup {
  std::size_t hidden = 1024;
  double dropout = 0.2;
  double std_floor = 1e-6;
};

// One audio embedding per manifest record (empty when not computed).
using ClipEmbeddings = std::vector<std::vector<float>>;

struct ProjectionTrainResult {
  ProjectionParams<float> projection;
  std::vector<std::string> fitting_classes;
  std::vector<std::string> validation_classes;
  std::vector<double> train_loss;
  std::vector<double> validation_map;
  std::size_t best_epoch = 0;
  double best_map = 0.0;

  nlohmann::json selection_report() const {
    nlohmann::json j;
    j["fitting_classes"] = fitting_classes;
    j["validation_classes"] = validation_classes;
    j["train_loss"] = train_loss;
    j["validation_map"] = validation_map;
    j["best_epoch"] = best_epoch;
    j["best_validation_map"] = best_map;
    return j;
  }
};

// Deterministic choice of round(fraction * |classes|) validation classes,
// returned sorted.
inline std::vector<std::string> choose_validation_classes(const std::vector<std::string>& classes, double fraction,
                                                          std::uint64_t seed) {
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(classes.size())));
  if (k == 0)
    throw ConfigError("projection: validation fraction " + std::to_string(fraction) + " of " +
                      std::to_string(classes.size()) + " training classes selects no validation class");
  if (k >= classes.size()) throw ConfigError("projection: validation classes would leave nothing to fit");
  auto ids = classes;
  std::sort(ids.begin(), ids.end());
  Rng rng(mix_seed(seed, hash_name("validation-classes")));
  rng.shuffle(ids.begin(), ids.end());
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace detail {
inline Tensor<float> gather_rows(const ClipEmbeddings& emb, const std::vector<std::size_t>& idx, std::size_t m) {
  Tensor<float> a({idx.size(), m});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& v = emb[idx[r]];
    if (v.size() != m) throw DataError("projection: clip embedding has dimension " + std::to_string(v.size()) +
                                       ", expected " + std::to_string(m));
    std::copy(v.begin(), v.end(), a.data() + r * m);
  }
  return a;
}

inline std::vector<semantics::SemanticEmbedding> select(const std::vector<semantics::SemanticEmbedding>& all,
                                                       const std::vector<std::string>& ids) {
  std::vector<semantics::SemanticEmbedding> out;
  for (const auto& id : ids) {
    auto it = std::find_if(all.begin(), all.end(), [&](const auto& e) { return e.class_id == id; });
    if (it == all.end()) throw DataError("projection: no semantic embedding for class '" + id + "'");
    out.push_back(*it);
  }
  return out;
}
}  // namespace detail

// Mean AP of the given classes over the clips of one split; classes without
// positives are skipped.
inline eval::MeanAp split_map(const ProjectionParams<float>& p, const protocol::DatasetManifest& manifest,
                              const ClipEmbeddings& emb, const std::vector<semantics::SemanticEmbedding>& classes,
                              protocol::Split split) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    if (manifest.records[i].split == split) idx.push_back(i);
  if (idx.empty()) throw DataError("no clips in the " + protocol::to_string(split) + " split");
  const auto z = project_batch(p, detail::gather_rows(emb, idx, p.input_dim()), Mode::eval, nullptr);
  const auto L = candidate_logits(z, classes);
  std::vector<std::optional<double>> aps;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<double> s(idx.size());
    std::vector<int> y(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      s[r] = L(r, c);
      const auto& tags = manifest.records[idx[r]].tags;
      y[r] = std::find(tags.begin(), tags.end(), classes[c].class_id) != tags.end();
    }
    aps.push_back(eval::average_precision(s, y));
  }
  return eval::mean_ap(aps);
}

// Fits the projection on frozen audio embeddings of the training split with
// BCE over the fitting classes. A seeded subset of the training classes is
// held out; training clips tagged with any of them are dropped, and the
// epoch with the best validation-split mAP over the held-out classes is kept
// (ties to the earliest).
inline ProjectionTrainResult train_projection(const protocol::DatasetManifest& manifest, const ClipEmbeddings& emb,
                                              const std::vector<std::string>& train_classes,
                                              const std::vector<semantics::SemanticEmbedding>& class_embeddings,
                                              const TrainConfig& cfg, const ProjectionSetup& setup,
                                              const std::function<void(std::size_t, double, double)>& on_epoch = {}) {
  cfg.validate();
  if (cfg.epochs == 0) throw ConfigError("projection: need at least one epoch");
  if (emb.size() != manifest.records.size()) throw DataError("projection: embedding count differs from manifest");
  ProjectionTrainResult res;
  res.validation_classes = choose_validation_classes(train_classes, cfg.val_class_fraction, cfg.seed);
  const std::set<std::string> held(res.validation_classes.begin(), res.validation_classes.end());
  for (const auto& c : train_classes)
    if (!held.count(c)) res.fitting_classes.push_back(c);
  std::sort(res.fitting_classes.begin(), res.fitting_classes.end());
  const auto fit_e = detail::select(class_embeddings, res.fitting_classes);
  const auto val_e = detail::select(class_embeddings, res.validation_classes);
  const std::set<std::string> fitting(res.fitting_classes.begin(), res.fitting_classes.end());

  std::vector<std::size_t> clips;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.split == protocol::Split::train && r.tagged_with_any(fitting) && !r.tagged_with_any(held)) clips.push_back(i);
  }
  if (clips.empty()) throw DataError("projection: no training clips for the fitting classes");
  if (emb[clips.front()].empty()) throw DataError("projection: training clips have no embeddings");
  const std::size_t m = emb[clips.front()].size();
  const std::size_t n = fit_e.front().vector.size();
  const std::size_t C = fit_e.size();

  Rng init_rng(mix_seed(cfg.seed, hash_name("projection-init")));
  auto p = init_projection<float>(m, n, init_rng, setup.hidden, setup.dropout);
  {
    const auto A = detail::gather_rows(emb, clips, m);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0, sq = 0;
      for (std::size_t r = 0; r < A.rows(); ++r) {
        s += A(r, i);
        sq += static_cast<double>(A(r, i)) * A(r, i);
      }
      const double mu = s / static_cast<double>(A.rows());
      const double var = std::max(sq / static_cast<double>(A.rows()) - mu * mu, 0.0);
      p.mean()[i] = static_cast<float>(mu);
      p.std()[i] = static_cast<float>(std::max(std::sqrt(var), setup.std_floor));
    }
  }
  Tensor<float> E({C, n});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < n; ++k) E(c, k) = fit_e[c].vector[k];

  OptimizerState<float> opt;
  res.projection = p;
  res.best_map = -1.0;
  const std::size_t B = cfg.batch_size;
  const std::size_t steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : (clips.size() + B - 1) / B;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng(mix_seed(cfg.seed, 5000 + epoch));
    Rng drop_rng(mix_seed(cfg.seed, 6000 + epoch));
    auto order = clips;
    order_rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<std::size_t> batch;
      for (std::size_t b = 0; b < B && batch.size() < order.size(); ++b) batch.push_back(order[(step * B + b) % order.size()]);
      const std::size_t nb = batch.size();
      ProjectionCache<float> cache;
      const auto z = project_batch(p, detail::gather_rows(emb, batch, m), Mode::train, &drop_rng, &cache);
      const auto L = candidate_logits(z, fit_e);
      Tensor<float> dlogit({nb, C});
      double loss = 0.0;
      for (std::size_t r = 0; r < nb; ++r) {
        const auto& tags = manifest.records[batch[r]].tags;
        for (std::size_t c = 0; c < C; ++c) {
          const double y = std::find(tags.begin(), tags.end(), res.fitting_classes[c]) != tags.end() ? 1.0 : 0.0;
          loss += ops::bce_term(static_cast<double>(L(r, c)), y);
          dlogit(r, c) = static_cast<float>((sigmoid(L(r, c)) - y) / static_cast<double>(nb * C));
        }
      }
      loss /= static_cast<double>(nb * C);
      if (!std::isfinite(loss))
        throw NumericalError("projection training diverged: non-finite loss at epoch " + std::to_string(epoch));
      Tensor<float> dz({nb, n});
      gemm_nn(dlogit.data(), E.data(), dz.data(), nb, C, n, false);
      auto g = project_backward(p, cache, dz);
      p.params.at("fc1.weight").grad = std::move(g.w1);
      p.params.at("fc1.bias").grad = std::move(g.b1);
      p.params.at("fc2.weight").grad = std::move(g.w2);
      p.params.at("fc2.bias").grad = std::move(g.b2);
      const double lr = lr_at(static_cast<double>(epoch) + static_cast<double>(step) / steps, cfg);
      adamw_step(p.params, opt, lr, cfg);
      total += loss;
    }
    res.train_loss.push_back(total / static_cast<double>(steps));
    const double v = split_map(p, manifest, emb, val_e, protocol::Split::val).value;
    res.validation_map.push_back(v);
    if (v > res.best_map) {
      res.best_map = v;
      res.best_epoch = epoch;
      res.projection = p;
    }
    if (on_epoch) on_epoch(epoch, res.train_loss.back(), v);
  }
  return res;
}

inline Checkpoint projection_checkpoint(const ProjectionParams<float>& p, nlohmann::json extra = nlohmann::json::object()) {
  p.validate();
  Checkpoint ck;
  ck.kind = "projection";
  ck.hyper = std::move(extra);
  ck.hyper["dropout"] = p.dropout_rate;
  ck.hyper["dims"] = {{"input", p.input_dim()}, {"hidden", p.hidden_dim()}, {"output", p.output_dim()}};
  store_params(ck, p.params, "projection.");
  return ck;
}

inline ProjectionParams<float> projection_from_checkpoint(const Checkpoint& ck) {
  ck.expect_kind("projection");
  ProjectionParams<float> p;
  try {
    const auto& d = ck.hyper.at("dims");
    Rng unused(0);
    p = init_projection<float>(d.at("input").get<std::size_t>(), d.at("output").get<std::size_t>(), unused,
                               d.at("hidden").get<std::size_t>(), ck.hyper.at("dropout").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("projection checkpoint has no usable dimensions: ") + e.what());
  }
  restore_params(ck, p.params, "projection.");
  p.validate();
  return p;
}

}  // namespace zsa::crossmodal
