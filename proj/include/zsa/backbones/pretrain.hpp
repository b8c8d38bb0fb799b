#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsa/backbones/backbone.hpp"
#include "zsa/crossmodal/optim.hpp"
#include "zsa/dsp/augment.hpp"
#include "zsa/protocol/sampler.hpp"

namespace zsa::backbones {

// Everything needed to continue supervised pretraining bit-for-bit after an
// interruption: weights, classifier head, optimizer moments and history.
struct PretrainState {
  Backbone<float> backbone;
  ParameterSet<float> head;
  crossmodal::OptimizerState<float> backbone_opt;
  crossmodal::OptimizerState<float> head_opt;
  std::vector<std::string> classes;
  std::uint64_t seed = 0;
  std::size_t epochs_done = 0;
  std::vector<double> history;  // mean training loss per finished epoch
};

inline PretrainState init_pretrain(const BackboneConfig& cfg, const std::vector<std::string>& classes,
                                   std::uint64_t seed) {
  PretrainState s;
  Rng rng(mix_seed(seed, hash_name("init")));
  s.backbone = make_backbone<float>(cfg, rng);
  s.head = init_classifier<float>(classes.size(), cfg.embed_dim, rng);
  s.classes = classes;
  s.seed = seed;
  return s;
}

// Mean and standard deviation over every value of the selected spectrograms.
inline std::pair<double, double> spectrogram_stats(const std::vector<Tensor<float>>& specs,
                                                   const std::vector<bool>& selected) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!selected[i]) continue;
    for (float v : specs[i].values()) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
    n += specs[i].size();
  }
  if (n == 0) throw DataError("no spectrogram values to standardize");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(sq / static_cast<double>(n) - mean * mean, 0.0);
  return {mean, std::max(std::sqrt(var), 1e-6)};
}

namespace detail {
inline Tensor<float> crop_time(const Tensor<float>& x, std::size_t t) {
  if (x.cols() == t) return x;
  Tensor<float> out({x.rows(), t});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < t; ++j) out(i, j) = x(i, j);
  return out;
}
}  // namespace detail

// Runs epochs [state.epochs_done, cfg.epochs) of multi-label training on the
// training split: class-balanced sampling, spectrogram augmentation, mixup
// with a shuffled partner, BCE on a linear head and AdamW on every weight.
// Each epoch draws from its own seeded streams so a resumed run repeats the
// uninterrupted one exactly.
inline void pretrain_epochs(PretrainState& s, const protocol::DatasetManifest& manifest,
                            const std::vector<Tensor<float>>& specs, const crossmodal::TrainConfig& cfg,
                            const dsp::AugmentConfig& aug,
                            const std::function<void(std::size_t, double)>& on_epoch = {}) {
  cfg.validate();
  aug.validate();
  if (specs.size() != manifest.records.size()) throw DataError("pretrain: spectrogram count differs from manifest");
  const std::size_t C = s.classes.size();
  std::map<std::string, std::size_t> class_index;
  for (std::size_t c = 0; c < C; ++c) class_index[s.classes[c]] = c;

  for (std::size_t epoch = s.epochs_done; epoch < cfg.epochs; ++epoch) {
    protocol::BalancedSampler sampler(manifest, s.classes, mix_seed(s.seed, 1000 + epoch));
    Rng aug_rng(mix_seed(s.seed, 2000 + epoch));
    Rng patch_rng(mix_seed(s.seed, 3000 + epoch));
    const std::size_t B = cfg.batch_size;
    const std::size_t steps =
        cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : (sampler.eligible_clips() + B - 1) / B;
    double total = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<Tensor<float>> xs;
      std::vector<std::vector<float>> ys;
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t i = sampler.next();
        if (specs[i].empty()) throw DataError("pretrain: clip '" + manifest.records[i].id + "' has no spectrogram");
        xs.push_back(dsp::apply_spec_augmentations(specs[i], aug, aug_rng));
        std::vector<float> y(C, 0.0f);
        for (const auto& t : manifest.records[i].tags) {
          auto it = class_index.find(t);
          if (it != class_index.end()) y[it->second] = 1.0f;
        }
        ys.push_back(std::move(y));
      }
      if (aug.mixup && B > 1) {
        std::vector<std::size_t> partner(B);
        for (std::size_t b = 0; b < B; ++b) partner[b] = b;
        aug_rng.shuffle(partner.begin(), partner.end());
        std::vector<Tensor<float>> mixed;
        std::vector<std::vector<float>> mixed_y;
        for (std::size_t b = 0; b < B; ++b) {
          const auto& o = xs[partner[b]];
          const std::size_t t = std::min(xs[b].cols(), o.cols());
          const auto lambda = static_cast<float>(aug_rng.beta(aug.mixup_alpha, aug.mixup_alpha));
          auto [x, y] = dsp::mixup(detail::crop_time(xs[b], t), detail::crop_time(o, t), ys[b], ys[partner[b]], lambda);
          mixed.push_back(std::move(x));
          mixed_y.push_back(std::move(y));
        }
        xs = std::move(mixed);
        ys = std::move(mixed_y);
      }
      Tensor<float> targets({B, C});
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) targets(b, c) = ys[b][c];
      std::vector<const Tensor<float>*> ptrs;
      for (const auto& x : xs) ptrs.push_back(&x);

      s.backbone.params.zero_grad();
      s.head.zero_grad();
      Graph<float> g;
      auto emb = embed_batch(g, s.backbone, ptrs, Mode::train, &patch_rng);
      auto logits = ops::linear(emb, g.param(s.head.at("weight")), g.param(s.head.at("bias")));
      auto loss = ops::bce_with_logits(logits, targets);
      const double l = loss.value()[0];
      if (!std::isfinite(l))
        throw NumericalError("pretraining diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step));
      g.backward(loss);
      const double lr = crossmodal::lr_at(static_cast<double>(epoch) + static_cast<double>(step) / steps, cfg);
      crossmodal::adamw_step(s.backbone.params, s.backbone_opt, lr, cfg);
      crossmodal::adamw_step(s.head, s.head_opt, lr, cfg);
      total += l;
    }
    s.history.push_back(total / static_cast<double>(steps));
    s.epochs_done = epoch + 1;
    if (on_epoch) on_epoch(epoch, s.history.back());
  }
}

namespace detail {
inline void store_optimizer(Checkpoint& ck, const crossmodal::OptimizerState<float>& st, const std::string& prefix) {
  for (const auto& [name, mv] : st.moments) {
    ck.tensors[prefix + "m." + name] = mv.first;
    ck.tensors[prefix + "v." + name] = mv.second;
  }
  ck.hyper["optimizer_steps"][prefix] = st.step;
}

inline void restore_optimizer(const Checkpoint& ck, crossmodal::OptimizerState<float>& st, const std::string& prefix) {
  st = {};
  const std::string m_prefix = prefix + "m.";
  for (const auto& [key, t] : ck.tensors) {
    if (key.rfind(m_prefix, 0) != 0) continue;
    const std::string name = key.substr(m_prefix.size());
    st.moments[name] = {t, ck.tensor(prefix + "v." + name)};
  }
  st.step = ck.hyper.at("optimizer_steps").at(prefix).get<std::uint64_t>();
}
}  // namespace detail

inline Checkpoint pretrain_checkpoint(const PretrainState& s, nlohmann::json extra = nlohmann::json::object()) {
  auto ck = backbone_checkpoint(s.backbone, std::move(extra));
  ck.hyper["pretrain"] = {{"classes", s.classes},
                          {"seed", s.seed},
                          {"epochs_done", s.epochs_done},
                          {"history", s.history}};
  store_params(ck, s.head, "head.");
  detail::store_optimizer(ck, s.backbone_opt, "opt.backbone.");
  detail::store_optimizer(ck, s.head_opt, "opt.head.");
  return ck;
}

inline PretrainState pretrain_from_checkpoint(const Checkpoint& ck) {
  PretrainState s;
  s.backbone = backbone_from_checkpoint(ck);
  try {
    const auto& p = ck.hyper.at("pretrain");
    s.classes = p.at("classes").get<std::vector<std::string>>();
    s.seed = p.at("seed").get<std::uint64_t>();
    s.epochs_done = p.at("epochs_done").get<std::size_t>();
    s.history = p.at("history").get<std::vector<double>>();
    Rng unused(0);
    s.head = init_classifier<float>(s.classes.size(), s.backbone.embed_dim(), unused);
    restore_params(ck, s.head, "head.");
    detail::restore_optimizer(ck, s.backbone_opt, "opt.backbone.");
    detail::restore_optimizer(ck, s.head_opt, "opt.head.");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint has no usable pretraining state: ") + e.what());
  }
  return s;
}

}  // namespace zsa::backbones
