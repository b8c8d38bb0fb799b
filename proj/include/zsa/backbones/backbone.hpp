#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "zsa/backbones/config.hpp"
#include "zsa/backbones/convnets.hpp"
#include "zsa/backbones/transformer.hpp"
#include "zsa/core/checkpoint.hpp"

namespace zsa::backbones {

template <class T>
struct Backbone {
  BackboneConfig config;
  ParameterSet<T> params;
  // Dataset-level log-mel standardization applied before the network.
  double input_mean = 0.0;
  double input_std = 1.0;

  std::size_t embed_dim() const { return config.embed_dim; }
};

template <class T>
Backbone<T> make_backbone(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  Backbone<T> b{cfg, {}};
  switch (cfg.kind) {
    case BackboneKind::transformer: b.params = init_transformer<T>(cfg.transformer, cfg.embed_dim, rng); break;
    case BackboneKind::cnn14: b.params = init_cnn14<T>(cfg.cnn14, cfg.embed_dim, rng); break;
    case BackboneKind::vggish: b.params = init_vggish<T>(cfg.vggish, cfg.embed_dim, rng); break;
  }
  return b;
}

namespace detail {
// Stacks equally sized [f, t] tensors into [B, 1, f, t].
template <class T>
Tensor<T> stack_images(const std::vector<const Tensor<T>*>& xs, std::size_t t) {
  const std::size_t f = xs.front()->rows();
  Tensor<T> out({xs.size(), 1, f, t});
  for (std::size_t b = 0; b < xs.size(); ++b) {
    if (xs[b]->rows() != f) throw DataError("batch mixes spectrograms with different bin counts");
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < t; ++j) out[(b * f + i) * t + j] = (*xs[b])(i, j);
  }
  return out;
}

template <class T>
Var<T> embed_standardized(Graph<T>& g, Backbone<T>& bb, const std::vector<const Tensor<T>*>& xs, Mode mode,
                          Rng* rng) {
  const auto& c = bb.config;
  switch (c.kind) {
    case BackboneKind::transformer: {
      std::vector<Var<T>> rows;
      for (const auto* x : xs) rows.push_back(transformer_embed(g, bb.params, c.transformer, c.patchout, *x, mode, rng));
      return rows.size() == 1 ? rows[0] : ops::concat_rows(rows);
    }
    case BackboneKind::cnn14: {
      std::size_t t = xs.front()->cols();
      for (const auto* x : xs) {
        if (x->rank() != 2) throw DataError("cnn14: expected [f, t] spectrogram, got " + shape_str(x->shape()));
        t = std::min(t, x->cols());
      }
      return cnn14_forward(g, bb.params, g.constant(detail::stack_images(xs, t)), mode);
    }
    case BackboneKind::vggish: {
      std::vector<Tensor<T>> chunks;
      std::vector<std::size_t> sizes;
      for (const auto* x : xs) {
        auto ch = vggish_chunks(*x, c.vggish);
        sizes.push_back(ch.size());
        for (auto& t : ch) chunks.push_back(std::move(t));
      }
      std::vector<const Tensor<T>*> ptrs;
      for (const auto& t : chunks) ptrs.push_back(&t);
      auto per_chunk = vggish_forward(g, bb.params, c.vggish,
                                      g.constant(detail::stack_images(ptrs, c.vggish.chunk_frames)), mode);
      return ops::segment_mean_rows(per_chunk, std::move(sizes));
    }
  }
  throw ConfigError("embed_batch: unknown backbone kind");
}
}  // namespace detail

// Embeds a batch of [f, t] spectrograms into [B, m]. CNN14 batches are
// cropped to the shortest clip; VGGish embeds the chunk mean per clip.
template <class T>
Var<T> embed_batch(Graph<T>& g, Backbone<T>& bb, const std::vector<const Tensor<T>*>& xs, Mode mode, Rng* rng) {
  if (xs.empty()) throw DataError("embed_batch: empty batch");
  if (bb.input_mean == 0.0 && bb.input_std == 1.0) return detail::embed_standardized(g, bb, xs, mode, rng);
  if (!(bb.input_std > 0.0)) throw DataError("backbone input std must be positive");
  std::vector<Tensor<T>> scaled;
  scaled.reserve(xs.size());
  for (const auto* x : xs) {
    Tensor<T> y = *x;
    for (auto& v : y.values()) v = static_cast<T>((v - bb.input_mean) / bb.input_std);
    scaled.push_back(std::move(y));
  }
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& y : scaled) ptrs.push_back(&y);
  return detail::embed_standardized(g, bb, ptrs, mode, rng);
}

// Inference embedding of one spectrogram (eval mode, no patchout).
template <class T>
std::vector<T> embed(const Backbone<T>& bb, const Tensor<T>& x) {
  Graph<T> g(false);
  // Eval mode never writes to the parameters (no gradients, frozen batch-norm
  // statistics), so the non-const graph API is safe here.
  auto& mut = const_cast<Backbone<T>&>(bb);
  auto out = embed_batch(g, mut, {&x}, Mode::eval, nullptr);
  if (out.value().size() != bb.embed_dim()) throw DataError("backbone emitted the wrong embedding size");
  return out.value().storage();
}

// Multi-label classification head used during pretraining: [C_trn, m].
template <class T>
ParameterSet<T> init_classifier(std::size_t classes, std::size_t embed_dim, Rng& rng) {
  if (classes == 0) throw ConfigError("classifier: empty class set");
  ParameterSet<T> ps;
  ps.add("weight", init_fan_in<T>(rng, {classes, embed_dim}, embed_dim));
  ps.add("bias", Tensor<T>({classes}));
  return ps;
}

inline Checkpoint backbone_checkpoint(const Backbone<float>& bb, nlohmann::json extra = nlohmann::json::object()) {
  Checkpoint ck;
  ck.kind = to_string(bb.config.kind);
  ck.hyper = std::move(extra);
  ck.hyper["backbone"] = bb.config;
  ck.hyper["input_norm"] = {{"mean", bb.input_mean}, {"std", bb.input_std}};
  store_params(ck, bb.params, "backbone.");
  return ck;
}

inline Backbone<float> backbone_from_checkpoint(const Checkpoint& ck,
                                                std::optional<BackboneKind> expected = std::nullopt) {
  if (ck.kind != "transformer" && ck.kind != "cnn14" && ck.kind != "vggish")
    throw DataError("checkpoint kind mismatch: file holds '" + ck.kind + "', expected a backbone");
  if (expected) ck.expect_kind(to_string(*expected));
  BackboneConfig cfg;
  try {
    cfg = ck.hyper.at("backbone").get<BackboneConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint has no usable backbone config: ") + e.what());
  }
  if (to_string(cfg.kind) != ck.kind) throw DataError("checkpoint kind tag disagrees with its backbone config");
  Rng rng(0);
  auto bb = make_backbone<float>(cfg, rng);
  restore_params(ck, bb.params, "backbone.");
  if (ck.hyper.contains("input_norm")) {
    bb.input_mean = ck.hyper["input_norm"].value("mean", 0.0);
    bb.input_std = ck.hyper["input_norm"].value("std", 1.0);
  }
  return bb;
}

}  // namespace zsa::backbones
