#pragma once

#include <fftw3.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "zsa/core/binary_io.hpp"
#include "zsa/core/tensor.hpp"
#include "zsa/dsp/wav.hpp"

namespace zsa::dsp {

struct MelConfig {
  int sample_rate = 32000;
  std::size_t window_len = 800;  // samples (25 ms at 32 kHz)
  std::size_t hop_len = 320;     // samples (10 ms at 32 kHz)
  std::size_t n_mels = 128;
  double fmin = 0.0;
  double fmax = 16000.0;
  double log_floor = 1e-5;

  // FFT length: the window zero-padded to the next power of two.
  std::size_t n_fft() const {
    std::size_t n = 1;
    while (n < window_len) n <<= 1;
    return n;
  }

  void validate() const {
    require(sample_rate > 0, "mel: sample_rate must be positive");
    require(hop_len > 0, "mel: hop_len must be positive");
    require(window_len >= hop_len, "mel: window_len must be >= hop_len");
    require(n_mels > 0, "mel: n_mels must be positive");
    require(fmin >= 0.0 && fmin < fmax, "mel: need 0 <= fmin < fmax");
    require(fmax <= sample_rate / 2.0, "mel: fmax must not exceed the Nyquist frequency");
    require(log_floor > 0.0, "mel: log_floor must be positive");
  }

  friend bool operator==(const MelConfig&, const MelConfig&) = default;
};

// Log-mel energies, frequency-major: values(f, t).
struct MelSpectrogram {
  Tensor<float> values;
  MelConfig config;

  std::size_t bins() const { return values.rows(); }
  std::size_t frames() const { return values.cols(); }
};

inline std::size_t frame_count(std::size_t n_samples, std::size_t window_len, std::size_t hop_len) {
  if (n_samples < window_len) return 0;
  return (n_samples - window_len) / hop_len + 1;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Centre frequencies (Hz) of the n_mels triangles, equally spaced on the mel
// scale strictly between fmin and fmax.
inline std::vector<double> mel_centers(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> c(cfg.n_mels);
  for (std::size_t i = 0; i < cfg.n_mels; ++i)
    c[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(cfg.n_mels + 1));
  return c;
}

// Triangular filters with unit peak: n_mels x (n_fft/2 + 1).
inline Tensor<double> mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t n_fft = cfg.n_fft(), n_bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  Tensor<double> fb({cfg.n_mels, n_bins});
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > left && f <= center) w = (f - left) / (center - left);
      else if (f > center && f < right) w = (right - f) / (right - center);
      fb(m, k) = w;
    }
  }
  return fb;
}

// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

namespace detail {

// FFTW planning is not thread-safe; execution on distinct buffers is.
inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    std::lock_guard lock(fftw_plan_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_plan_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  // Power spectrum |X_k|^2 for k in [0, n/2].
  void power(std::vector<double>& out) {
    fftw_execute(plan_);
    out.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_{};
};

}  // namespace detail

// Hann-windowed power STFT -> triangular mel filterbank -> log(x + floor).
// Frames are not centred: frame i covers samples [i*hop, i*hop + window).
inline MelSpectrogram compute_logmel(const Waveform& w, const MelConfig& cfg) {
  cfg.validate();
  w.validate();
  if (w.sample_rate != cfg.sample_rate)
    throw DataError("compute_logmel: waveform at " + std::to_string(w.sample_rate) +
                    " Hz, configured " + std::to_string(cfg.sample_rate) + " Hz");
  if (w.samples.size() < cfg.window_len)
    throw DataError("compute_logmel: input of " + std::to_string(w.samples.size()) +
                    " samples is shorter than one window (" + std::to_string(cfg.window_len) + ")");
  const std::size_t frames = frame_count(w.samples.size(), cfg.window_len, cfg.hop_len);
  const std::size_t n_fft = cfg.n_fft();
  const auto fb = mel_filterbank(cfg);
  const auto window = hann_window(cfg.window_len);
  const std::size_t n_bins = n_fft / 2 + 1;

  // Sparse row extents of each triangle.
  std::vector<std::pair<std::size_t, std::size_t>> support(cfg.n_mels, {0, 0});
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    std::size_t a = n_bins, b = 0;
    for (std::size_t k = 0; k < n_bins; ++k)
      if (fb(m, k) > 0.0) {
        a = std::min(a, k);
        b = k + 1;
      }
    support[m] = a < b ? std::make_pair(a, b) : std::make_pair(std::size_t{0}, std::size_t{0});
  }

  detail::RealFft fft(n_fft);
  std::vector<double> power;
  MelSpectrogram out{Tensor<float>({cfg.n_mels, frames}), cfg};
  for (std::size_t t = 0; t < frames; ++t) {
    double* in = fft.input();
    const float* src = w.samples.data() + t * cfg.hop_len;
    for (std::size_t i = 0; i < cfg.window_len; ++i) in[i] = static_cast<double>(src[i]) * window[i];
    for (std::size_t i = cfg.window_len; i < n_fft; ++i) in[i] = 0.0;
    fft.power(power);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = support[m].first; k < support[m].second; ++k) e += fb(m, k) * power[k];
      out.values(m, t) = static_cast<float>(std::log(e + cfg.log_floor));
    }
  }
  return out;
}

// Spectrogram cache file: "ZSMS", u32 version, u32 f, u32 t, f*t f32 values
// (frequency-major), all little-endian.
inline constexpr std::uint32_t kSpectrogramCacheVersion = 1;

inline void save_spectrogram(const std::filesystem::path& path, const Tensor<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write spectrogram cache " + path.string());
  out.write("ZSMS", 4);
  io::write_u32(out, kSpectrogramCacheVersion);
  io::write_u32(out, static_cast<std::uint32_t>(values.rows()));
  io::write_u32(out, static_cast<std::uint32_t>(values.cols()));
  for (float v : values.values()) io::write_f32(out, v);
  if (!out) throw DataError("failed writing spectrogram cache " + path.string());
}

inline Tensor<float> load_spectrogram(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open spectrogram cache " + path.string());
  io::expect_magic(in, "ZSMS", "spectrogram cache");
  const auto version = io::read_u32(in, "version");
  if (version != kSpectrogramCacheVersion)
    throw DataError("spectrogram cache version " + std::to_string(version) + " is not supported");
  const auto f = io::read_u32(in, "bins"), t = io::read_u32(in, "frames");
  Tensor<float> values({f, t});
  for (auto& v : values.values()) v = io::read_f32(in, "values");
  return values;
}

}  // namespace zsa::dsp
