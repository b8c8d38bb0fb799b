#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "zsa/core/rng.hpp"
#include "zsa/core/tensor.hpp"

namespace zsa::dsp {

struct AugmentConfig {
  double mixup_alpha = 0.3;
  std::size_t n_time_masks = 2;
  std::size_t n_freq_masks = 2;
  std::size_t max_mask_width = 8;
  std::size_t max_time_shift = 10;
  std::size_t max_freq_shift = 2;
  double gain_range_db = 6.0;

  bool mixup = true;
  bool masks = true;
  bool time_shift = true;
  bool freq_shift = true;
  bool gain = true;

  void validate() const {
    require(mixup_alpha > 0.0, "augment: mixup_alpha must be positive");
    require(gain_range_db >= 0.0, "augment: gain_range_db must be >= 0");
  }

  static AugmentConfig none() {
    AugmentConfig c;
    c.mixup = c.masks = c.time_shift = c.freq_shift = c.gain = false;
    return c;
  }

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

// Convex combination of two equally shaped spectrograms and their targets.
template <class T>
std::pair<Tensor<T>, std::vector<T>> mixup(const Tensor<T>& a, const Tensor<T>& b,
                                           const std::vector<T>& ya, const std::vector<T>& yb,
                                           T lambda) {
  if (a.shape() != b.shape())
    throw DataError("mixup: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (ya.size() != yb.size()) throw DataError("mixup: target length mismatch");
  if (!(lambda >= T(0) && lambda <= T(1))) throw ConfigError("mixup: lambda must be in [0, 1]");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = lambda * a[i] + (T(1) - lambda) * b[i];
  std::vector<T> y(ya.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = lambda * ya[i] + (T(1) - lambda) * yb[i];
  return {std::move(out), std::move(y)};
}

// Circular roll along time (columns): out(:, (j + shift) mod t) = in(:, j).
template <class T>
Tensor<T> roll_time(const Tensor<T>& x, long shift) {
  const std::size_t f = x.rows(), t = x.cols();
  Tensor<T> out(x.shape());
  const long n = static_cast<long>(t);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      const long dst = ((static_cast<long>(j) + shift) % n + n) % n;
      out(i, static_cast<std::size_t>(dst)) = x(i, j);
    }
  return out;
}

// Circular roll along frequency (rows).
template <class T>
Tensor<T> roll_freq(const Tensor<T>& x, long shift) {
  const std::size_t f = x.rows(), t = x.cols();
  Tensor<T> out(x.shape());
  const long n = static_cast<long>(f);
  for (std::size_t i = 0; i < f; ++i) {
    const long dst = ((static_cast<long>(i) + shift) % n + n) % n;
    for (std::size_t j = 0; j < t; ++j) out(static_cast<std::size_t>(dst), j) = x(i, j);
  }
  return out;
}

// Time roll, frequency roll, SpecAugment-style stripes filled with the
// pre-mask mean, then a random gain offset in the log domain. Stripes have a
// fixed width of max_mask_width and uniformly drawn positions.
template <class T>
Tensor<T> apply_spec_augmentations(const Tensor<T>& x, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t f = x.rows(), t = x.cols();
  Tensor<T> out = x;
  if (cfg.time_shift && cfg.max_time_shift > 0) {
    const auto m = static_cast<long long>(cfg.max_time_shift);
    out = roll_time(out, static_cast<long>(rng.uniform_int(-m, m)));
  }
  if (cfg.freq_shift && cfg.max_freq_shift > 0) {
    const auto m = static_cast<long long>(cfg.max_freq_shift);
    out = roll_freq(out, static_cast<long>(rng.uniform_int(-m, m)));
  }
  if (cfg.masks && cfg.max_mask_width > 0 && (cfg.n_time_masks > 0 || cfg.n_freq_masks > 0)) {
    const std::size_t w = cfg.max_mask_width;
    if (cfg.n_time_masks > 0 && w >= t)
      throw ConfigError("augment: mask width " + std::to_string(w) + " >= " + std::to_string(t) + " frames");
    if (cfg.n_freq_masks > 0 && w >= f)
      throw ConfigError("augment: mask width " + std::to_string(w) + " >= " + std::to_string(f) + " bins");
    double sum = 0.0;
    for (T v : out.values()) sum += static_cast<double>(v);
    const T fill = static_cast<T>(sum / static_cast<double>(out.size()));
    for (std::size_t k = 0; k < cfg.n_time_masks; ++k) {
      const auto t0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(t - w)));
      for (std::size_t i = 0; i < f; ++i)
        for (std::size_t j = t0; j < t0 + w; ++j) out(i, j) = fill;
    }
    for (std::size_t k = 0; k < cfg.n_freq_masks; ++k) {
      const auto f0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(f - w)));
      for (std::size_t i = f0; i < f0 + w; ++i)
        for (std::size_t j = 0; j < t; ++j) out(i, j) = fill;
    }
  }
  if (cfg.gain && cfg.gain_range_db > 0.0) {
    const double db = rng.uniform(-cfg.gain_range_db, cfg.gain_range_db);
    // dB of power to natural-log units.
    const T offset = static_cast<T>(db * std::numbers::ln10 / 10.0);
    for (auto& v : out.values()) v += offset;
  }
  return out;
}

}  // namespace zsa::dsp
