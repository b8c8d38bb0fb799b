#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "zsa/backbones/config.hpp"
#include "zsa/core/autograd.hpp"
#include "zsa/core/params.hpp"
#include "zsa/core/rng.hpp"

namespace zsa::backbones {

template <class T>
ParameterSet<T> init_transformer(const TransformerConfig& c, std::size_t embed_dim, Rng& rng) {
  c.validate();
  const std::size_t d = c.dim, P = c.patch_freq * c.patch_time, F = c.ffn_mult * d;
  ParameterSet<T> ps;
  ps.add("patch.weight", init_fan_in<T>(rng, {d, P}, P));
  ps.add("patch.bias", Tensor<T>({d}));
  ps.add("cls_token", init_uniform<T>(rng, {1, d}, 0.02));
  ps.add("pos.freq", init_uniform<T>(rng, {c.max_freq_patches, d}, 0.02));
  ps.add("pos.time", init_uniform<T>(rng, {c.max_time_patches, d}, 0.02));
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    ps.add(b + "ln1.gamma", Tensor<T>({d}, T(1)));
    ps.add(b + "ln1.beta", Tensor<T>({d}));
    ps.add(b + "attn.qkv.weight", init_fan_in<T>(rng, {3 * d, d}, d));
    ps.add(b + "attn.qkv.bias", Tensor<T>({3 * d}));
    ps.add(b + "attn.out.weight", init_fan_in<T>(rng, {d, d}, d));
    ps.add(b + "attn.out.bias", Tensor<T>({d}));
    ps.add(b + "ln2.gamma", Tensor<T>({d}, T(1)));
    ps.add(b + "ln2.beta", Tensor<T>({d}));
    ps.add(b + "ffn.fc1.weight", init_fan_in<T>(rng, {F, d}, d));
    ps.add(b + "ffn.fc1.bias", Tensor<T>({F}));
    ps.add(b + "ffn.fc2.weight", init_fan_in<T>(rng, {d, F}, F));
    ps.add(b + "ffn.fc2.bias", Tensor<T>({d}));
  }
  ps.add("final_ln.gamma", Tensor<T>({d}, T(1)));
  ps.add("final_ln.beta", Tensor<T>({d}));
  ps.add("head.weight", init_fan_in<T>(rng, {embed_dim, d}, d));
  ps.add("head.bias", Tensor<T>({embed_dim}));
  return ps;
}

// Tokens of a (possibly patched-out) grid. Token k sits at grid position
// (rows[k / cols.size()], cols[k % cols.size()]).
template <class T>
struct PatchGrid {
  Var<T> tokens;  // [rows.size() * cols.size(), d]
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  std::size_t patch_freq = 0;
  std::size_t patch_time = 0;

  std::size_t size() const { return rows.size() * cols.size(); }
};

// Flattens non-overlapping pf x pt patches of x [f, t] into rows of a
// [F*Tp, pf*pt] matrix, grid row-major. Remainder bins/frames are dropped.
template <class T>
Tensor<T> extract_patches(const Tensor<T>& x, std::size_t pf, std::size_t pt) {
  if (x.rank() != 2) throw DataError("patchify: expected a [f, t] spectrogram, got " + shape_str(x.shape()));
  const std::size_t f = x.rows(), t = x.cols();
  if (f < pf || t < pt)
    throw DataError("patchify: input " + shape_str(x.shape()) + " is smaller than one " + std::to_string(pf) + "x" +
                    std::to_string(pt) + " patch");
  const std::size_t F = f / pf, Tp = t / pt;
  Tensor<T> out({F * Tp, pf * pt});
  for (std::size_t r = 0; r < F; ++r)
    for (std::size_t c = 0; c < Tp; ++c) {
      T* dst = out.data() + (r * Tp + c) * pf * pt;
      for (std::size_t i = 0; i < pf; ++i)
        for (std::size_t j = 0; j < pt; ++j) dst[i * pt + j] = x(r * pf + i, c * pt + j);
    }
  return out;
}

// Projects every patch to d dims and adds freq_table[row] + time_table[col].
template <class T>
PatchGrid<T> patchify(Graph<T>& g, ParameterSet<T>& ps, const TransformerConfig& c, const Tensor<T>& x) {
  const std::size_t pf = c.patch_freq, pt = c.patch_time;
  auto raw = extract_patches(x, pf, pt);
  const std::size_t F = x.rows() / pf, Tp = x.cols() / pt;
  if (F > c.max_freq_patches || Tp > c.max_time_patches)
    throw DataError("patchify: grid " + std::to_string(F) + "x" + std::to_string(Tp) +
                    " exceeds the positional tables (" + std::to_string(c.max_freq_patches) + "x" +
                    std::to_string(c.max_time_patches) + ")");
  PatchGrid<T> grid;
  grid.patch_freq = pf;
  grid.patch_time = pt;
  grid.rows.resize(F);
  grid.cols.resize(Tp);
  std::iota(grid.rows.begin(), grid.rows.end(), std::size_t{0});
  std::iota(grid.cols.begin(), grid.cols.end(), std::size_t{0});
  std::vector<std::size_t> ri, ci;
  for (std::size_t r = 0; r < F; ++r)
    for (std::size_t col = 0; col < Tp; ++col) {
      ri.push_back(r);
      ci.push_back(col);
    }
  auto proj = ops::linear(g.constant(std::move(raw)), g.param(ps.at("patch.weight")), g.param(ps.at("patch.bias")));
  auto pos = ops::add(ops::take_rows(g.param(ps.at("pos.freq")), ri), ops::take_rows(g.param(ps.at("pos.time")), ci));
  grid.tokens = ops::add(proj, pos);
  return grid;
}

// Indices (row-major over the surviving grid) kept after dropping whole rows
// and columns. Eval mode keeps everything.
struct PatchoutSelection {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
};

inline PatchoutSelection patchout_select(std::size_t F, std::size_t Tp, const PatchoutConfig& cfg, Mode mode,
                                         Rng* rng) {
  PatchoutSelection s;
  s.rows.resize(F);
  s.cols.resize(Tp);
  std::iota(s.rows.begin(), s.rows.end(), std::size_t{0});
  std::iota(s.cols.begin(), s.cols.end(), std::size_t{0});
  if (mode == Mode::eval || (cfg.n_freq_drop == 0 && cfg.n_time_drop == 0)) return s;
  if (cfg.n_freq_drop >= F || cfg.n_time_drop >= Tp)
    throw ConfigError("patchout: dropping " + std::to_string(cfg.n_freq_drop) + " rows / " +
                      std::to_string(cfg.n_time_drop) + " columns from a " + std::to_string(F) + "x" +
                      std::to_string(Tp) + " grid");
  if (!rng) throw ConfigError("patchout: train mode needs an rng");
  auto drop = [&](std::vector<std::size_t>& v, std::size_t n) {
    if (n == 0) return;
    rng->shuffle(v.begin(), v.end());
    v.resize(v.size() - n);
    std::sort(v.begin(), v.end());
  };
  drop(s.rows, cfg.n_freq_drop);
  drop(s.cols, cfg.n_time_drop);
  return s;
}

template <class T>
PatchGrid<T> structured_patchout(const PatchGrid<T>& in, const PatchoutConfig& cfg, Mode mode, Rng* rng) {
  const auto sel = patchout_select(in.rows.size(), in.cols.size(), cfg, mode, rng);
  if (sel.rows.size() == in.rows.size() && sel.cols.size() == in.cols.size()) return in;
  std::vector<std::size_t> idx;
  for (auto r : sel.rows)
    for (auto c : sel.cols) idx.push_back(r * in.cols.size() + c);
  PatchGrid<T> out = in;
  out.rows.clear();
  out.cols.clear();
  for (auto r : sel.rows) out.rows.push_back(in.rows[r]);
  for (auto c : sel.cols) out.cols.push_back(in.cols[c]);
  out.tokens = ops::take_rows(in.tokens, std::move(idx));
  return out;
}

template <class T>
Var<T> attention(Graph<T>& g, ParameterSet<T>& ps, const std::string& b, Var<T> x, std::size_t d, std::size_t h) {
  auto qkv = ops::linear(x, g.param(ps.at(b + "attn.qkv.weight")), g.param(ps.at(b + "attn.qkv.bias")));
  const std::size_t dh = d / h;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Var<T>> heads;
  for (std::size_t i = 0; i < h; ++i) {
    auto q = ops::slice_cols(qkv, i * dh, (i + 1) * dh);
    auto k = ops::slice_cols(qkv, d + i * dh, d + (i + 1) * dh);
    auto v = ops::slice_cols(qkv, 2 * d + i * dh, 2 * d + (i + 1) * dh);
    auto a = ops::softmax_rows(ops::scale(ops::matmul_nt(q, k), scale));
    heads.push_back(ops::matmul(a, v));
  }
  auto cat = h == 1 ? heads[0] : ops::concat_cols(heads);
  return ops::linear(cat, g.param(ps.at(b + "attn.out.weight")), g.param(ps.at(b + "attn.out.bias")));
}

// Runs the encoder on patch tokens that already carry positional vectors and
// returns the [1, m] embedding read from the class token.
template <class T>
Var<T> encode_tokens(Graph<T>& g, ParameterSet<T>& ps, const TransformerConfig& c, Var<T> tokens) {
  auto x = ops::concat_rows(std::vector<Var<T>>{g.param(ps.at("cls_token")), tokens});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    auto n1 = ops::layer_norm(x, g.param(ps.at(b + "ln1.gamma")), g.param(ps.at(b + "ln1.beta")));
    x = ops::add(x, attention(g, ps, b, n1, c.dim, c.heads));
    auto n2 = ops::layer_norm(x, g.param(ps.at(b + "ln2.gamma")), g.param(ps.at(b + "ln2.beta")));
    auto f = ops::gelu(ops::linear(n2, g.param(ps.at(b + "ffn.fc1.weight")), g.param(ps.at(b + "ffn.fc1.bias"))));
    x = ops::add(x, ops::linear(f, g.param(ps.at(b + "ffn.fc2.weight")), g.param(ps.at(b + "ffn.fc2.bias"))));
  }
  auto cls = ops::take_rows(x, {0});
  cls = ops::layer_norm(cls, g.param(ps.at("final_ln.gamma")), g.param(ps.at("final_ln.beta")));
  return ops::linear(cls, g.param(ps.at("head.weight")), g.param(ps.at("head.bias")));
}

template <class T>
Var<T> transformer_embed(Graph<T>& g, ParameterSet<T>& ps, const TransformerConfig& c, const PatchoutConfig& po,
                         const Tensor<T>& x, Mode mode, Rng* rng) {
  auto grid = structured_patchout(patchify(g, ps, c, x), po, mode, rng);
  return encode_tokens(g, ps, c, grid.tokens);
}

}  // namespace zsa::backbones
