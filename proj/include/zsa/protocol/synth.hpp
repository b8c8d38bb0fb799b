#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsa/core/rng.hpp"
#include "zsa/dsp/mel.hpp"
#include "zsa/dsp/wav.hpp"
#include "zsa/protocol/classes.hpp"
#include "zsa/protocol/manifest.hpp"
#include "zsa/semantics/vectors.hpp"

namespace zsa::protocol {

// Tone-mixture corpus with word vectors whose geometry follows the acoustics.
// Classes are ordered by fundamental (uniform on the mel scale) and split
// into contiguous timbre groups, each with its own harmonic pattern.
struct SynthConfig {
  std::size_t n_classes = 12;
  std::size_t clips_per_class = 20;
  std::size_t multi_label_clips = 0;
  int sample_rate = 16000;
  std::size_t clip_samples = 10240;
  double f_low = 150.0;
  double f_high = 1400.0;
  std::size_t n_groups = 4;
  double detune = 0.01;     // relative fundamental jitter per clip
  double noise_level = 0.02;
  std::vector<std::size_t> test_classes{1, 4, 7, 10};
  // Alignment of each test class's vector with its acoustic code, graded
  // linearly from max (first test class) to min (last).
  double alignment_max = 1.0;
  double alignment_min = 0.4;
  std::size_t vector_dim = 32;
  double rbf_width = 1.0;  // in class-index units
  std::uint64_t seed = 0;

  void validate(const dsp::MelConfig& mel) const {
    require(n_classes >= 2, "synth: need at least two classes");
    require(clips_per_class >= 1, "synth: clips_per_class must be >= 1");
    require(n_groups >= 1 && n_groups <= n_classes, "synth: need 1 <= n_groups <= n_classes");
    require(f_low > 0 && f_high > f_low && f_high < sample_rate / 2.0, "synth: need 0 < f_low < f_high < Nyquist");
    require(clip_samples > 0, "synth: clip_samples must be positive");
    require(alignment_min >= 0 && alignment_min <= alignment_max && alignment_max <= 1,
            "synth: need 0 <= alignment_min <= alignment_max <= 1");
    require(vector_dim >= n_classes + 5, "synth: vector_dim must hold the pitch code and harmonic flags");
    for (auto t : test_classes) require(t < n_classes, "synth: test class index out of range");
    require(test_classes.size() < n_classes, "synth: every class is a test class");
    require(multi_label_clips == 0 || n_classes >= 2, "synth: multi-label clips need two classes");
    const double spacing = (dsp::hz_to_mel(f_high) - dsp::hz_to_mel(f_low)) / static_cast<double>(n_classes - 1);
    const double bin = (dsp::hz_to_mel(mel.fmax) - dsp::hz_to_mel(mel.fmin)) / static_cast<double>(mel.n_mels + 1);
    if (spacing < bin)
      throw ConfigError("synth: fundamentals are " + std::to_string(spacing) + " mel apart, closer than one mel bin (" +
                        std::to_string(bin) + " mel)");
  }
};

struct SynthCorpus {
  DatasetManifest manifest;
  TagCountTable classes;
  std::vector<std::string> words;
  std::vector<std::vector<float>> vectors;
  std::vector<std::string> test_classes;
  // Label of the semantically nearest training class of each test class.
  std::vector<std::string> near_labels;
  std::map<std::string, std::vector<std::string>> categories;
  std::vector<double> fundamentals;
};

inline std::string synth_class_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%02zu", i);
  return buf;
}

inline std::string synth_class_label(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth%02zu", i);
  return buf;
}

namespace detail {
// Amplitudes of harmonics 1..6 per timbre group.
inline std::vector<double> harmonic_pattern(std::size_t group) {
  static const std::vector<std::vector<double>> patterns{
      {1, 0, 0, 0, 0, 0}, {1, 0.7, 0.5, 0, 0, 0}, {1, 0, 0.6, 0, 0.4, 0}, {1, 0.6, 0, 0.5, 0, 0}};
  return patterns[group % patterns.size()];
}

inline std::size_t group_of(std::size_t cls, const SynthConfig& c) { return cls * c.n_groups / c.n_classes; }

inline std::vector<float> synth_tone(double f0, std::size_t group, const SynthConfig& c, Rng& rng) {
  const auto pattern = harmonic_pattern(group);
  const double f = f0 * (1.0 + rng.uniform(-c.detune, c.detune));
  const double gain = rng.uniform(0.3, 0.9);
  std::vector<double> phase(pattern.size());
  for (auto& p : phase) p = rng.uniform(0.0, 2 * std::numbers::pi);
  std::vector<float> out(c.clip_samples);
  double norm = 0;
  for (std::size_t h = 0; h < pattern.size(); ++h)
    if ((h + 1) * f < 0.45 * c.sample_rate) norm += pattern[h];
  for (std::size_t n = 0; n < out.size(); ++n) {
    const double t = static_cast<double>(n) / c.sample_rate;
    double s = 0;
    for (std::size_t h = 0; h < pattern.size(); ++h) {
      if (pattern[h] == 0.0 || (h + 1) * f >= 0.45 * c.sample_rate) continue;
      s += pattern[h] * std::sin(2 * std::numbers::pi * (h + 1) * f * t + phase[h]);
    }
    out[n] = static_cast<float>(gain * s / norm);
  }
  return out;
}

inline dsp::Waveform finish_clip(std::vector<float> x, const SynthConfig& c, Rng& rng) {
  for (auto& v : x) v += static_cast<float>(rng.normal(0.0, c.noise_level));
  float peak = 0;
  for (float v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.95f)
    for (auto& v : x) v *= 0.95f / peak;
  return {std::move(x), c.sample_rate};
}

// Split sequence for n items: round(0.7 n) train, round(0.15 n) val, rest test,
// shuffled by `rng`.
inline std::vector<Split> split_sequence(std::size_t n, Rng& rng) {
  const auto n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n))));
  std::vector<Split> s(n, Split::test);
  std::fill(s.begin(), s.begin() + static_cast<long>(n_train), Split::train);
  std::fill(s.begin() + static_cast<long>(n_train), s.begin() + static_cast<long>(n_train + n_val), Split::val);
  rng.shuffle(s.begin(), s.end());
  return s;
}

inline std::vector<float> normalized(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(n > 0 ? v[i] / n : 0.0);
  return out;
}
}  // namespace detail

namespace detail {
inline std::vector<double> raw_code(std::size_t cls, const SynthConfig& c) {
  std::vector<double> v(c.vector_dim, 0.0);
  for (std::size_t j = 0; j < c.n_classes; ++j) {
    const double d = (static_cast<double>(cls) - static_cast<double>(j)) / c.rbf_width;
    v[j] = std::exp(-0.5 * d * d);
  }
  const auto pattern = harmonic_pattern(group_of(cls, c));
  for (std::size_t h = 1; h < pattern.size(); ++h) v[c.n_classes + h - 1] = pattern[h] > 0 ? 1.0 : 0.0;
  return v;
}
}  // namespace detail

// Acoustic code of a class: Gaussian bumps over class-index pitch centres
// plus flags for the harmonics its timbre group contains, centred over all
// classes so the codes share no common direction, then unit length.
inline std::vector<double> synth_acoustic_code(std::size_t cls, const SynthConfig& c) {
  std::vector<double> mean(c.vector_dim, 0.0);
  for (std::size_t j = 0; j < c.n_classes; ++j) {
    const auto v = detail::raw_code(j, c);
    for (std::size_t k = 0; k < v.size(); ++k) mean[k] += v[k] / static_cast<double>(c.n_classes);
  }
  auto v = detail::raw_code(cls, c);
  for (std::size_t k = 0; k < v.size(); ++k) v[k] -= mean[k];
  const auto u = detail::normalized(v);
  return {u.begin(), u.end()};
}

// Builds the corpus in memory; write_synthetic_corpus() puts it on disk.
// Waveforms are returned alongside the manifest records, in order.
inline SynthCorpus generate_synthetic_corpus(const SynthConfig& c, const dsp::MelConfig& mel,
                                             std::vector<dsp::Waveform>* audio) {
  c.validate(mel);
  if (c.sample_rate != mel.sample_rate) throw ConfigError("synth: sample rate differs from the mel configuration");
  SynthCorpus corpus;
  const double m0 = dsp::hz_to_mel(c.f_low), m1 = dsp::hz_to_mel(c.f_high);
  for (std::size_t i = 0; i < c.n_classes; ++i)
    corpus.fundamentals.push_back(dsp::mel_to_hz(m0 + (m1 - m0) * static_cast<double>(i) / (c.n_classes - 1)));

  std::vector<bool> is_test(c.n_classes, false);
  for (auto t : c.test_classes) is_test[t] = true;
  for (std::size_t i = 0; i < c.n_classes; ++i)
    corpus.classes.classes.push_back({synth_class_id(i), synth_class_label(i), 0});
  for (auto t : c.test_classes) corpus.test_classes.push_back(synth_class_id(t));

  // Word vectors.
  Rng vec_rng(mix_seed(c.seed, hash_name("vectors")));
  for (std::size_t i = 0; i < c.n_classes; ++i) {
    auto code = synth_acoustic_code(i, c);
    double alpha = 1.0;
    auto pos = std::find(c.test_classes.begin(), c.test_classes.end(), i);
    if (pos != c.test_classes.end() && c.test_classes.size() > 1) {
      const double w = static_cast<double>(pos - c.test_classes.begin()) / (c.test_classes.size() - 1);
      alpha = (1 - w) * c.alignment_max + w * c.alignment_min;
    } else if (pos != c.test_classes.end()) {
      alpha = c.alignment_max;
    }
    std::vector<double> noise(c.vector_dim);
    for (auto& x : noise) x = vec_rng.normal();
    // Noise is made orthogonal to the code so cos(vector, code) is exactly alpha.
    double along = 0;
    for (std::size_t k = 0; k < c.vector_dim; ++k) along += noise[k] * code[k];
    for (std::size_t k = 0; k < c.vector_dim; ++k) noise[k] -= along * code[k];
    const auto r = detail::normalized(noise);
    const double beta = std::sqrt(std::max(0.0, 1 - alpha * alpha));
    std::vector<double> e(c.vector_dim);
    for (std::size_t k = 0; k < c.vector_dim; ++k) e[k] = alpha * code[k] + beta * r[k];
    corpus.words.push_back(synth_class_label(i));
    corpus.vectors.push_back(detail::normalized(e));
  }
  std::vector<semantics::SemanticEmbedding> train_e;
  for (std::size_t i = 0; i < c.n_classes; ++i)
    if (!is_test[i]) train_e.push_back({synth_class_id(i), corpus.vectors[i]});
  for (auto t : c.test_classes) {
    const auto nn = semantics::nearest_neighbor({synth_class_id(t), corpus.vectors[t]}, train_e);
    const auto label = corpus.classes.find(nn.class_id).label;
    if (std::find(corpus.near_labels.begin(), corpus.near_labels.end(), label) == corpus.near_labels.end())
      corpus.near_labels.push_back(label);
  }
  for (std::size_t i = 0; i < c.n_classes; ++i)
    corpus.categories[i < c.n_classes / 2 ? "low" : "high"].push_back(synth_class_id(i));

  // Clips.
  auto add = [&](std::string id, std::vector<std::string> tags, Split split, dsp::Waveform w) {
    corpus.manifest.records.push_back({id, "audio/" + id + ".wav", std::move(tags), split});
    if (audio) audio->push_back(std::move(w));
  };
  for (std::size_t i = 0; i < c.n_classes; ++i) {
    Rng rng(mix_seed(c.seed, 100 + i));
    const auto splits = detail::split_sequence(c.clips_per_class, rng);
    for (std::size_t k = 0; k < c.clips_per_class; ++k) {
      auto x = detail::synth_tone(corpus.fundamentals[i], detail::group_of(i, c), c, rng);
      char id[32];
      std::snprintf(id, sizeof id, "%s_%03zu", synth_class_id(i).c_str(), k);
      add(id, {synth_class_id(i)}, splits[k], detail::finish_clip(std::move(x), c, rng));
    }
  }
  Rng multi(mix_seed(c.seed, hash_name("multi-label")));
  const auto splits = detail::split_sequence(c.multi_label_clips, multi);
  for (std::size_t k = 0; k < c.multi_label_clips; ++k) {
    const std::size_t a = multi.index(c.n_classes);
    std::size_t b = multi.index(c.n_classes - 1);
    if (b >= a) ++b;
    auto x = detail::synth_tone(corpus.fundamentals[a], detail::group_of(a, c), c, multi);
    const auto y = detail::synth_tone(corpus.fundamentals[b], detail::group_of(b, c), c, multi);
    for (std::size_t n = 0; n < x.size(); ++n) x[n] += y[n];
    char id[32];
    std::snprintf(id, sizeof id, "mix_%03zu", k);
    add(id, {synth_class_id(std::min(a, b)), synth_class_id(std::max(a, b))}, splits[k],
        detail::finish_clip(std::move(x), c, multi));
  }
  for (auto& info : corpus.classes.classes)
    for (const auto& r : corpus.manifest.records)
      if (r.split == Split::train && std::find(r.tags.begin(), r.tags.end(), info.id) != r.tags.end()) ++info.count;
  return corpus;
}

inline nlohmann::json to_json(const SynthConfig& c) {
  nlohmann::json j;
  j["n_classes"] = c.n_classes;
  j["clips_per_class"] = c.clips_per_class;
  j["multi_label_clips"] = c.multi_label_clips;
  j["sample_rate"] = c.sample_rate;
  j["clip_samples"] = c.clip_samples;
  j["f_low"] = c.f_low;
  j["f_high"] = c.f_high;
  j["n_groups"] = c.n_groups;
  j["detune"] = c.detune;
  j["noise_level"] = c.noise_level;
  j["test_classes"] = c.test_classes;
  j["alignment_max"] = c.alignment_max;
  j["alignment_min"] = c.alignment_min;
  j["vector_dim"] = c.vector_dim;
  j["rbf_width"] = c.rbf_width;
  j["seed"] = c.seed;
  return j;
}

// Writes audio/<id>.wav, manifest.jsonl, classes.csv (training-split tag
// counts), vectors.txt, test_classes.txt, near_classes.txt, categories.json,
// synonyms.json and corpus.json into `dir`.
inline SynthCorpus write_synthetic_corpus(const SynthConfig& c, const dsp::MelConfig& mel,
                                          const std::filesystem::path& dir,
                                          const nlohmann::json& provenance = nlohmann::json::object()) {
  std::vector<dsp::Waveform> audio;
  auto corpus = generate_synthetic_corpus(c, mel, &audio);
  std::filesystem::create_directories(dir / "audio");
  corpus.manifest.base_dir = dir;
  for (std::size_t i = 0; i < audio.size(); ++i) dsp::save_wav(dir / corpus.manifest.records[i].path, audio[i]);
  write_manifest(dir / "manifest.jsonl", corpus.manifest);
  write_class_table(dir / "classes.csv", corpus.classes);
  semantics::save_word_vectors(dir / "vectors.txt", corpus.words, corpus.vectors);
  auto write_lines = [&](const std::string& name, const std::vector<std::string>& lines) {
    std::ofstream out(dir / name);
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw DataError("cannot write " + (dir / name).string());
  };
  write_lines("test_classes.txt", corpus.test_classes);
  write_lines("near_classes.txt", corpus.near_labels);
  auto write_json = [&](const std::string& name, const nlohmann::json& j) {
    std::ofstream out(dir / name);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("cannot write " + (dir / name).string());
  };
  write_json("categories.json", corpus.categories);
  std::map<std::string, std::vector<std::string>> synonyms;
  for (std::size_t i = 0; i < c.n_classes; ++i)
    synonyms["group" + std::to_string(detail::group_of(i, c))].push_back(synth_class_id(i));
  write_json("synonyms.json", synonyms);
  nlohmann::json meta{{"config", to_json(c)}, {"fundamentals_hz", corpus.fundamentals}};
  meta["provenance"] = provenance;
  write_json("corpus.json", meta);
  return corpus;
}

}  // namespace zsa::protocol
