#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "zsa/backbones/config.hpp"
#include "zsa/crossmodal/optim.hpp"
#include "zsa/crossmodal/train.hpp"
#include "zsa/dsp/augment.hpp"
#include "zsa/dsp/mel.hpp"
#include "zsa/protocol/synth.hpp"

namespace zsa::experiment {

namespace fs = std::filesystem;

struct PathsConfig {
  fs::path root;            // base for every relative path below
  fs::path manifest;        // training / validation / test clips
  fs::path eval_manifest;   // optional: clips scored at evaluation (all treated as test)
  fs::path vectors;         // word vectors
  std::string vector_source = "word2vec";
  fs::path classes;         // class table with training tag counts
  fs::path test_classes;    // list of test class ids or labels
  fs::path fold_split;      // alternative to test_classes: fold file + fold index
  std::optional<std::size_t> fold;
  fs::path exclude;         // labels removed from the training classes
  fs::path synonyms;
  fs::path categories;      // JSON {category: [class ids]}
  fs::path cache;           // spectrogram cache directory
  fs::path out = "runs";
};

struct FoldConfig {
  std::size_t k = 5;
  std::vector<std::string> pinned;  // labels or ids kept out of every fold
  std::string output = "folds.json";
};

struct ExperimentConfig {
  std::string preset;
  std::string task = "tagging";  // tagging | classification
  std::string condition;
  PathsConfig paths;
  dsp::MelConfig mel;
  dsp::AugmentConfig augment;
  backbones::BackboneConfig backbone;
  crossmodal::TrainConfig pretrain;
  crossmodal::TrainConfig projection;
  crossmodal::ProjectionSetup projection_setup;
  std::size_t semantic_dim = 0;  // 0: whatever the vector file holds
  FoldConfig folds;
  protocol::SynthConfig synth;
  fs::path synth_dir = "corpus";
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t threads = 1;

  fs::path resolve(const fs::path& p) const {
    if (p.empty() || p.is_absolute()) return p;
    return paths.root / p;
  }

  void validate() const {
    require(task == "tagging" || task == "classification", "config: task must be tagging or classification");
    mel.validate();
    augment.validate();
    backbone.validate();
    pretrain.validate();
    projection.validate();
    require(!seeds.empty(), "config: empty seed list");
    require(threads >= 1, "config: threads must be >= 1");
    require(folds.k >= 1, "config: folds.k must be >= 1");
    require(projection_setup.hidden > 0, "config: projection hidden size must be positive");
    require(projection_setup.dropout >= 0 && projection_setup.dropout < 1, "config: projection dropout must lie in [0, 1)");
  }
};

// Resolved configuration, embedded in every artifact.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["preset"] = c.preset;
  j["task"] = c.task;
  j["condition"] = c.condition;
  auto s = [&](const fs::path& p) { return c.resolve(p).generic_string(); };
  auto& jp = j["paths"];
  jp["manifest"] = s(c.paths.manifest);
  jp["eval_manifest"] = s(c.paths.eval_manifest);
  jp["vectors"] = s(c.paths.vectors);
  jp["vector_source"] = c.paths.vector_source;
  jp["classes"] = s(c.paths.classes);
  jp["test_classes"] = s(c.paths.test_classes);
  jp["fold_split"] = s(c.paths.fold_split);
  jp["fold"] = c.paths.fold ? nlohmann::json(*c.paths.fold) : nlohmann::json(nullptr);
  jp["exclude"] = s(c.paths.exclude);
  jp["synonyms"] = s(c.paths.synonyms);
  jp["categories"] = s(c.paths.categories);
  auto& jm = j["mel"];
  jm["sample_rate"] = c.mel.sample_rate;
  jm["window_len"] = c.mel.window_len;
  jm["hop_len"] = c.mel.hop_len;
  jm["n_mels"] = c.mel.n_mels;
  jm["fmin"] = c.mel.fmin;
  jm["fmax"] = c.mel.fmax;
  jm["log_floor"] = c.mel.log_floor;
  const auto& a = c.augment;
  auto& ja = j["augment"];
  ja["mixup"] = a.mixup;
  ja["mixup_alpha"] = a.mixup_alpha;
  ja["masks"] = a.masks;
  ja["n_time_masks"] = a.n_time_masks;
  ja["n_freq_masks"] = a.n_freq_masks;
  ja["mask_width"] = a.max_mask_width;
  ja["time_shift"] = a.time_shift;
  ja["max_time_shift"] = a.max_time_shift;
  ja["freq_shift"] = a.freq_shift;
  ja["max_freq_shift"] = a.max_freq_shift;
  ja["gain"] = a.gain;
  ja["gain_range_db"] = a.gain_range_db;
  j["backbone"] = c.backbone;
  j["pretrain"] = c.pretrain;
  j["projection"] = c.projection;
  j["projection"]["hidden"] = c.projection_setup.hidden;
  j["projection"]["dropout"] = c.projection_setup.dropout;
  j["projection"]["semantic_dim"] = c.semantic_dim;
  j["folds"] = {{"k", c.folds.k}, {"pinned", c.folds.pinned}, {"output", c.folds.output}};
  j["synth"] = protocol::to_json(c.synth);
  j["seeds"] = c.seeds;
  return j;
}

// Named profiles; every hyperparameter is resolved here so a bare preset is
// a complete configuration.
inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  c.projection.epochs = 130;
  if (name == "audioset-fold") {
    c.condition = "fold";
    c.paths.manifest = "audioset/manifest.jsonl";
    c.paths.vectors = "vectors/word2vec.txt";
    c.paths.classes = "audioset/classes.csv";
    c.paths.fold_split = "audioset/folds.json";
    c.paths.fold = 0;
    c.folds.pinned = {"Speech", "Music"};
  } else if (name == "esc50") {
    c.task = "classification";
    c.condition = "esc50";
    c.paths.manifest = "audioset/manifest.jsonl";
    c.paths.eval_manifest = "esc50/manifest.jsonl";
    c.paths.vectors = "vectors/word2vec.txt";
    c.paths.classes = "esc50/classes.csv";
    c.paths.test_classes = "esc50/test_classes.txt";
    c.paths.exclude = "esc50/exclude.txt";
    c.paths.synonyms = "esc50/synonyms.json";
    c.paths.categories = "esc50/categories.json";
  } else if (name == "openmic-inst" || name == "openmic-mic") {
    c.condition = name == "openmic-inst" ? "no instrument classes" : "no openmic classes";
    c.paths.manifest = "audioset/manifest.jsonl";
    c.paths.eval_manifest = "openmic/manifest.jsonl";
    c.paths.vectors = "vectors/word2vec.txt";
    c.paths.classes = "openmic/classes.csv";
    c.paths.test_classes = "openmic/test_classes.txt";
    c.paths.exclude = name == "openmic-inst" ? "openmic/exclude_instruments.txt" : "openmic/exclude_openmic.txt";
    c.paths.synonyms = "openmic/synonyms.json";
  } else if (name == "toy") {
    c.condition = "synthetic";
    c.paths.manifest = "corpus/manifest.jsonl";
    c.paths.vectors = "corpus/vectors.txt";
    c.paths.vector_source = "synthetic";
    c.paths.classes = "corpus/classes.csv";
    c.paths.test_classes = "corpus/test_classes.txt";
    c.paths.categories = "corpus/categories.json";
    c.synth_dir = "corpus";
    c.synth.clips_per_class = 60;
    c.synth.multi_label_clips = 48;
    c.synth.detune = 0.06;  // spreads each class over its neighbours' mel bins
    c.mel = {16000, 400, 160, 32, 50.0, 8000.0, 1e-5};
    c.augment.max_mask_width = 4;
    c.augment.n_time_masks = 1;
    c.augment.n_freq_masks = 1;
    c.augment.max_time_shift = 8;
    c.augment.freq_shift = false;  // a one-bin roll is close to a class step
    c.augment.gain_range_db = 3.0;
    c.backbone.embed_dim = 32;
    c.backbone.transformer = {4, 4, 32, 4, 2, 4, 8, 16};
    c.backbone.patchout = {1, 2};
    c.backbone.cnn14 = {{8, 8, 16, 16, 32, 32}, 32};
    c.backbone.vggish = {{8, 8, 16, 16, 32, 32}, 64, 48, 32};
    c.pretrain.initial_lr = 1e-3;
    c.pretrain.final_lr = 1e-5;
    c.pretrain.warmup_epochs = 2;
    c.pretrain.decay_start_epoch = 15;
    c.pretrain.decay_end_epoch = 28;
    c.pretrain.epochs = 30;
    c.pretrain.batch_size = 16;
    c.pretrain.weight_decay = 1e-4;
    c.projection.initial_lr = 1e-3;
    c.projection.final_lr = 1e-3;
    c.projection.warmup_epochs = 0;
    c.projection.decay_start_epoch = 1000;
    c.projection.decay_end_epoch = 1001;
    c.projection.epochs = 10;
    c.projection.batch_size = 16;
    c.projection.val_class_fraction = 0.125;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected audioset-fold, esc50, openmic-inst, openmic-mic or toy)");
  }
  return c;
}

namespace detail {
namespace pt = boost::property_tree;

// Typed access to an INI tree that remembers which keys were consumed so
// that misspelled keys are reported instead of silently ignored.
class IniReader {
 public:
  explicit IniReader(pt::ptree tree) : tree_(std::move(tree)) {}

  template <class T>
  void get(const std::string& key, T& out) {
    auto node = tree_.get_child_optional(pt::ptree::path_type(key, '.'));
    if (!node) return;
    used_.insert(key);
    const auto text = node->data();
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes" || text == "on") out = true;
      else if (text == "false" || text == "0" || text == "no" || text == "off") out = false;
      else throw ConfigError("config key " + key + ": expected a boolean, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      out = text;
    } else if constexpr (std::is_same_v<T, fs::path>) {
      out = fs::path(text);
    } else {
      std::istringstream is(text);
      T v{};
      if (!(is >> v) || !(is >> std::ws).eof() || (std::is_unsigned_v<T> && text.find('-') != std::string::npos))
        throw ConfigError("config key " + key + ": cannot parse '" + text + "'");
      out = v;
    }
  }

  bool has(const std::string& key) const {
    return static_cast<bool>(tree_.get_child_optional(pt::ptree::path_type(key, '.')));
  }

  template <class T>
  void get_list(const std::string& key, std::vector<T>& out) {
    if (!has(key)) return;
    std::string text;
    get(key, text);
    out.clear();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto a = item.find_first_not_of(" \t");
      if (a == std::string::npos) continue;
      item = item.substr(a, item.find_last_not_of(" \t") - a + 1);
      if constexpr (std::is_same_v<T, std::string>) {
        out.push_back(item);
      } else {
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !(is >> std::ws).eof() || item.find('-') != std::string::npos)
          throw ConfigError("config key " + key + ": cannot parse list item '" + item + "'");
        out.push_back(v);
      }
    }
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty()) {
        if (!used_.count(section)) throw ConfigError("config: unknown top-level key '" + section + "'");
        continue;
      }
      for (const auto& [key, _] : body)
        if (!used_.count(section + "." + key)) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
    }
  }

 private:
  pt::ptree tree_;
  std::set<std::string> used_;
};

inline void read_train(IniReader& r, const std::string& s, crossmodal::TrainConfig& t) {
  r.get(s + ".initial_lr", t.initial_lr);
  r.get(s + ".warmup_epochs", t.warmup_epochs);
  r.get(s + ".decay_start_epoch", t.decay_start_epoch);
  r.get(s + ".decay_end_epoch", t.decay_end_epoch);
  r.get(s + ".final_lr", t.final_lr);
  r.get(s + ".epochs", t.epochs);
  r.get(s + ".batch_size", t.batch_size);
  r.get(s + ".steps_per_epoch", t.steps_per_epoch);
  r.get(s + ".beta1", t.beta1);
  r.get(s + ".beta2", t.beta2);
  r.get(s + ".epsilon", t.epsilon);
  r.get(s + ".weight_decay", t.weight_decay);
  r.get(s + ".val_class_fraction", t.val_class_fraction);
}

inline void apply(IniReader& r, ExperimentConfig& c) {
  r.get("run.task", c.task);
  r.get("run.condition", c.condition);
  r.get_list("run.seeds", c.seeds);
  r.get("run.threads", c.threads);

  auto& p = c.paths;
  r.get("paths.root", p.root);
  r.get("paths.manifest", p.manifest);
  r.get("paths.eval_manifest", p.eval_manifest);
  r.get("paths.vectors", p.vectors);
  r.get("paths.vector_source", p.vector_source);
  r.get("paths.classes", p.classes);
  r.get("paths.test_classes", p.test_classes);
  r.get("paths.fold_split", p.fold_split);
  if (r.has("paths.fold")) {
    std::size_t fold = 0;
    r.get("paths.fold", fold);
    p.fold = fold;
  }
  r.get("paths.exclude", p.exclude);
  r.get("paths.synonyms", p.synonyms);
  r.get("paths.categories", p.categories);
  r.get("paths.cache", p.cache);
  r.get("paths.out", p.out);

  auto& m = c.mel;
  r.get("mel.sample_rate", m.sample_rate);
  r.get("mel.window_len", m.window_len);
  r.get("mel.hop_len", m.hop_len);
  r.get("mel.n_mels", m.n_mels);
  r.get("mel.fmin", m.fmin);
  r.get("mel.fmax", m.fmax);
  r.get("mel.log_floor", m.log_floor);

  auto& a = c.augment;
  r.get("augment.mixup", a.mixup);
  r.get("augment.mixup_alpha", a.mixup_alpha);
  r.get("augment.masks", a.masks);
  r.get("augment.n_time_masks", a.n_time_masks);
  r.get("augment.n_freq_masks", a.n_freq_masks);
  r.get("augment.mask_width", a.max_mask_width);
  r.get("augment.time_shift", a.time_shift);
  r.get("augment.max_time_shift", a.max_time_shift);
  r.get("augment.freq_shift", a.freq_shift);
  r.get("augment.max_freq_shift", a.max_freq_shift);
  r.get("augment.gain", a.gain);
  r.get("augment.gain_range_db", a.gain_range_db);

  auto& b = c.backbone;
  std::string kind;
  r.get("backbone.kind", kind);
  if (!kind.empty()) b.kind = backbones::parse_backbone_kind(kind);
  r.get("backbone.embed_dim", b.embed_dim);
  r.get("transformer.patch_freq", b.transformer.patch_freq);
  r.get("transformer.patch_time", b.transformer.patch_time);
  r.get("transformer.dim", b.transformer.dim);
  r.get("transformer.heads", b.transformer.heads);
  r.get("transformer.layers", b.transformer.layers);
  r.get("transformer.ffn_mult", b.transformer.ffn_mult);
  r.get("transformer.max_freq_patches", b.transformer.max_freq_patches);
  r.get("transformer.max_time_patches", b.transformer.max_time_patches);
  r.get("patchout.n_freq_drop", b.patchout.n_freq_drop);
  r.get("patchout.n_time_drop", b.patchout.n_time_drop);
  r.get_list("cnn14.channels", b.cnn14.channels);
  r.get("cnn14.fc_dim", b.cnn14.fc_dim);
  r.get_list("vggish.channels", b.vggish.channels);
  r.get("vggish.fc_dim", b.vggish.fc_dim);
  r.get("vggish.chunk_frames", b.vggish.chunk_frames);
  r.get("vggish.mel_bins", b.vggish.mel_bins);

  read_train(r, "pretrain", c.pretrain);
  read_train(r, "projection", c.projection);
  r.get("projection.hidden", c.projection_setup.hidden);
  r.get("projection.dropout", c.projection_setup.dropout);
  r.get("projection.semantic_dim", c.semantic_dim);

  r.get("folds.k", c.folds.k);
  r.get_list("folds.pinned", c.folds.pinned);
  r.get("folds.output", c.folds.output);

  auto& s = c.synth;
  r.get("synth.dir", c.synth_dir);
  r.get("synth.n_classes", s.n_classes);
  r.get("synth.clips_per_class", s.clips_per_class);
  r.get("synth.multi_label_clips", s.multi_label_clips);
  r.get("synth.clip_samples", s.clip_samples);
  r.get("synth.f_low", s.f_low);
  r.get("synth.f_high", s.f_high);
  r.get("synth.n_groups", s.n_groups);
  r.get("synth.detune", s.detune);
  r.get("synth.noise_level", s.noise_level);
  r.get_list("synth.test_classes", s.test_classes);
  r.get("synth.alignment_max", s.alignment_max);
  r.get("synth.alignment_min", s.alignment_min);
  r.get("synth.vector_dim", s.vector_dim);
  r.get("synth.rbf_width", s.rbf_width);
  r.get("synth.seed", s.seed);
}
}  // namespace detail

struct LoadOptions {
  std::optional<fs::path> config_file;
  std::optional<std::string> preset;
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool deterministic = false;
};

// Preset (from the command line, else the file's [run] preset, else toy),
// overridden by the INI file, overridden by command-line flags. Relative
// paths resolve against paths.root, which defaults to the config file's
// directory, or to the output directory when no file is given.
inline ExperimentConfig load_config(const LoadOptions& o) {
  detail::pt::ptree tree;
  if (o.config_file) {
    if (!fs::exists(*o.config_file)) throw ConfigError("config file " + o.config_file->string() + " does not exist");
    try {
      detail::pt::ini_parser::read_ini(o.config_file->string(), tree);
    } catch (const detail::pt::ini_parser_error& e) {
      throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
  }
  detail::IniReader reader(tree);
  std::string preset = "toy";
  reader.get("run.preset", preset);
  if (o.preset) preset = *o.preset;
  auto c = preset_config(preset);
  detail::apply(reader, c);
  reader.reject_unknown();
  c.preset = preset;
  if (o.out) c.paths.out = *o.out;
  if (c.paths.root.empty()) c.paths.root = o.config_file ? o.config_file->parent_path() : c.paths.out;
  if (c.paths.root.empty()) c.paths.root = ".";
  if (o.config_file && c.paths.out.is_relative() && !o.out) c.paths.out = c.paths.root / c.paths.out;
  if (o.seed) c.seeds = {*o.seed};
  if (o.threads) c.threads = *o.threads;
  if (o.deterministic) c.threads = 1;
  c.synth.sample_rate = c.mel.sample_rate;
  c.pretrain.seed = c.seeds.front();
  c.projection.seed = c.seeds.front();
  c.validate();
  return c;
}

}  // namespace zsa::experiment
