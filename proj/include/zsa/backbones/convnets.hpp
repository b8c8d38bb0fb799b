#pragma once

#include <string>
#include <vector>

#include "zsa/backbones/config.hpp"
#include "zsa/core/autograd.hpp"
#include "zsa/core/params.hpp"
#include "zsa/core/rng.hpp"

namespace zsa::backbones {

namespace detail {
template <class T>
void add_conv_bn(ParameterSet<T>& ps, const std::string& name, std::size_t ci, std::size_t co, Rng& rng) {
  ps.add(name + ".conv.weight", init_fan_in<T>(rng, {co, ci, 3, 3}, ci * 9));
  ps.add(name + ".bn.gamma", Tensor<T>({co}, T(1)));
  ps.add(name + ".bn.beta", Tensor<T>({co}));
  ps.add(name + ".bn.running_mean", Tensor<T>({co}), false);
  ps.add(name + ".bn.running_var", Tensor<T>({co}, T(1)), false);
}

template <class T>
Var<T> conv_bn_relu(Graph<T>& g, ParameterSet<T>& ps, const std::string& name, Var<T> x, Mode mode) {
  auto y = ops::conv3x3(x, g.param(ps.at(name + ".conv.weight")));
  y = ops::batch_norm2d(y, g.param(ps.at(name + ".bn.gamma")), g.param(ps.at(name + ".bn.beta")),
                        ps.at(name + ".bn.running_mean"), ps.at(name + ".bn.running_var"), mode == Mode::train);
  return ops::relu(y);
}

template <class T>
void add_dense(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  ps.add(name + ".weight", init_fan_in<T>(rng, {out, in}, in));
  ps.add(name + ".bias", Tensor<T>({out}));
}

template <class T>
Var<T> dense(Graph<T>& g, ParameterSet<T>& ps, const std::string& name, Var<T> x) {
  return ops::linear(x, g.param(ps.at(name + ".weight")), g.param(ps.at(name + ".bias")));
}
}  // namespace detail

template <class T>
ParameterSet<T> init_cnn14(const Cnn14Config& c, std::size_t embed_dim, Rng& rng) {
  c.validate();
  ParameterSet<T> ps;
  std::size_t in = 1;
  for (std::size_t b = 0; b < 6; ++b) {
    const std::string name = "block" + std::to_string(b);
    detail::add_conv_bn(ps, name + ".0", in, c.channels[b], rng);
    detail::add_conv_bn(ps, name + ".1", c.channels[b], c.channels[b], rng);
    in = c.channels[b];
  }
  detail::add_dense(ps, "fc", in, c.fc_dim, rng);
  detail::add_dense(ps, "head", c.fc_dim, embed_dim, rng);
  return ps;
}

// x: [B, 1, f, t] with f, t >= 32. Returns [B, m].
template <class T>
Var<T> cnn14_forward(Graph<T>& g, ParameterSet<T>& ps, Var<T> x, Mode mode) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 1) throw DataError("cnn14: expected [B, 1, f, t] input, got " + shape_str(s));
  if (s[2] < Cnn14Config::min_extent || s[3] < Cnn14Config::min_extent)
    throw DataError("cnn14: input " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                    " is smaller than the pooling footprint (" + std::to_string(Cnn14Config::min_extent) + ")");
  for (std::size_t b = 0; b < 6; ++b) {
    const std::string name = "block" + std::to_string(b);
    x = detail::conv_bn_relu(g, ps, name + ".0", x, mode);
    x = detail::conv_bn_relu(g, ps, name + ".1", x, mode);
    if (b < 5) x = ops::avg_pool2(x);
  }
  auto pooled = ops::time_mean_plus_max(ops::mean_over_freq(x));
  auto h = ops::relu(detail::dense(g, ps, "fc", pooled));
  return detail::dense(g, ps, "head", h);
}

template <class T>
ParameterSet<T> init_vggish(const VggishConfig& c, std::size_t embed_dim, Rng& rng) {
  c.validate();
  ParameterSet<T> ps;
  std::size_t in = 1;
  for (std::size_t i = 0; i < 6; ++i) {
    detail::add_conv_bn(ps, "conv" + std::to_string(i), in, c.channels[i], rng);
    in = c.channels[i];
  }
  const std::size_t flat = in * (c.mel_bins / 16) * (c.chunk_frames / 16);
  detail::add_dense(ps, "fc1", flat, c.fc_dim, rng);
  detail::add_dense(ps, "fc2", c.fc_dim, c.fc_dim, rng);
  detail::add_dense(ps, "head", c.fc_dim, embed_dim, rng);
  return ps;
}

// x: [B, 1, mel_bins, chunk_frames] chunks. Returns [B, m].
template <class T>
Var<T> vggish_forward(Graph<T>& g, ParameterSet<T>& ps, const VggishConfig& c, Var<T> x, Mode mode) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != c.mel_bins || s[3] != c.chunk_frames)
    throw DataError("vggish: expected [B, 1, " + std::to_string(c.mel_bins) + ", " + std::to_string(c.chunk_frames) +
                    "] chunks, got " + shape_str(s));
  static constexpr bool pool_after[6] = {true, true, false, true, false, true};
  for (std::size_t i = 0; i < 6; ++i) {
    x = detail::conv_bn_relu(g, ps, "conv" + std::to_string(i), x, mode);
    if (pool_after[i]) x = ops::max_pool2(x);
  }
  const std::size_t B = x.shape()[0];
  x = ops::reshape(x, {B, x.value().size() / B});
  x = ops::relu(detail::dense(g, ps, "fc1", x));
  x = ops::relu(detail::dense(g, ps, "fc2", x));
  return detail::dense(g, ps, "head", x);
}

// Splits [f, t] into consecutive non-overlapping chunks of chunk_frames,
// discarding the remainder.
template <class T>
std::vector<Tensor<T>> vggish_chunks(const Tensor<T>& x, const VggishConfig& c) {
  if (x.rank() != 2 || x.rows() != c.mel_bins)
    throw DataError("vggish: input must have " + std::to_string(c.mel_bins) + " mel bins, got " + shape_str(x.shape()));
  if (x.cols() < c.chunk_frames)
    throw DataError("vggish: input has " + std::to_string(x.cols()) + " frames, need at least " +
                    std::to_string(c.chunk_frames));
  std::vector<Tensor<T>> out;
  for (std::size_t k = 0; k + c.chunk_frames <= x.cols(); k += c.chunk_frames) {
    Tensor<T> chunk({c.mel_bins, c.chunk_frames});
    for (std::size_t i = 0; i < c.mel_bins; ++i)
      for (std::size_t j = 0; j < c.chunk_frames; ++j) chunk(i, j) = x(i, k + j);
    out.push_back(std::move(chunk));
  }
  return out;
}

}  // namespace zsa::backbones
