#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "zsa/core/parallel.hpp"
#include "zsa/dsp/mel.hpp"
#include "zsa/protocol/manifest.hpp"

namespace zsa::dsp {

// Log-mel spectrograms of the selected manifest records, indexed like
// manifest.records; unselected slots stay empty. With a cache directory the
// spectrogram of clip <id> is stored as <cache>/<id>.zsms keyed by the clip id
// and the mel settings, and reused on later runs.
inline std::vector<Tensor<float>> manifest_logmels(const protocol::DatasetManifest& manifest,
                                                   const MelConfig& cfg, const std::vector<bool>& selected,
                                                   std::size_t threads = 1,
                                                   const std::filesystem::path& cache_dir = {}) {
  if (selected.size() != manifest.records.size()) throw ConfigError("manifest_logmels: selection size mismatch");
  std::filesystem::path cache;
  if (!cache_dir.empty()) {
    const std::string key = std::to_string(cfg.sample_rate) + "_" + std::to_string(cfg.window_len) + "_" +
                            std::to_string(cfg.hop_len) + "_" + std::to_string(cfg.n_mels) + "_" +
                            std::to_string(hash_name(std::to_string(cfg.fmin) + "/" + std::to_string(cfg.fmax) + "/" +
                                                     std::to_string(cfg.log_floor)));
    cache = cache_dir / key;
    std::filesystem::create_directories(cache);
  }
  std::vector<Tensor<float>> out(manifest.records.size());
  parallel_for(manifest.records.size(), threads, [&](std::size_t i) {
    if (!selected[i]) return;
    const auto& r = manifest.records[i];
    const auto cached = cache.empty() ? std::filesystem::path{} : cache / (r.id + ".zsms");
    if (!cached.empty() && std::filesystem::exists(cached)) {
      out[i] = load_spectrogram(cached);
      if (out[i].rows() == cfg.n_mels) return;
    }
    out[i] = compute_logmel(load_wav(manifest.audio_path(r), cfg.sample_rate), cfg).values;
    if (!cached.empty()) {
      auto tmp = cached;
      tmp += ".tmp";
      save_spectrogram(tmp, out[i]);
      std::filesystem::rename(tmp, cached);
    }
  });
  return out;
}

}  // namespace zsa::dsp
