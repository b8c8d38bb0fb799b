#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsa/backbones/pretrain.hpp"
#include "zsa/core/parallel.hpp"
#include "zsa/crossmodal/train.hpp"
#include "zsa/dsp/features.hpp"
#include "zsa/eval/zeroshot.hpp"
#include "zsa/experiment/config.hpp"
#include "zsa/protocol/classes.hpp"
#include "zsa/protocol/synth.hpp"
#include "zsa/semantics/vectors.hpp"

#ifndef ZSA_VERSION
#define ZSA_VERSION "unknown"
#endif

namespace zsa::experiment {

struct CommandContext {
  ExperimentConfig config;
  bool deterministic = false;
  std::ostream* log = &std::cerr;
};

inline fs::path seed_dir(const ExperimentConfig& c, std::uint64_t seed) {
  return c.paths.out / ("seed" + std::to_string(seed));
}

inline nlohmann::json provenance(const CommandContext& ctx, const std::string& command,
                                 std::optional<std::uint64_t> seed = std::nullopt) {
  nlohmann::json j;
  j["version"] = ZSA_VERSION;
  j["command"] = command;
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  j["config"] = to_json(ctx.config);
  return j;
}

namespace detail {
inline void log(const CommandContext& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << std::endl;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

inline nlohmann::json read_json(const fs::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + what + " " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed " + what + " " + path.string() + ": " + e.what());
  }
}

inline fs::path existing(const ExperimentConfig& c, const fs::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError("config: no " + what + " path");
  const auto r = c.resolve(p);
  if (!fs::exists(r)) throw DataError(what + " " + r.string() + " does not exist");
  return r;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Matches a list entry against class ids first, then labels.
inline std::string resolve_class(const protocol::ClassSet& all, const std::string& entry) {
  for (const auto& c : all.classes)
    if (c.id == entry) return c.id;
  for (const auto& c : all.classes)
    if (c.label == entry) return c.id;
  throw DataError("class '" + entry + "' is not in the class table");
}
}  // namespace detail

struct ClassSelection {
  protocol::ClassSet all;
  protocol::ClassSet train;
  protocol::ClassSet test;
  nlohmann::json audit = nlohmann::json::object();
};

// Test classes come from a fold of a fold-split file or from a class list;
// training classes are the rest, minus any exclusion-list matches.
inline ClassSelection select_classes(const ExperimentConfig& c) {
  ClassSelection s;
  s.all = protocol::read_class_table(detail::existing(c, c.paths.classes, "class table"));
  s.all.validate();
  std::vector<std::string> test_ids;
  if (!c.paths.fold_split.empty()) {
    if (!c.paths.fold) throw ConfigError("config: fold_split given without a fold index");
    const auto split =
        protocol::FoldSplit::from_json(detail::read_json(detail::existing(c, c.paths.fold_split, "fold split"), "fold split"));
    if (*c.paths.fold >= split.folds.size())
      throw ConfigError("fold " + std::to_string(*c.paths.fold) + " is out of range (the split has " +
                        std::to_string(split.folds.size()) + " folds)");
    test_ids = split.folds[*c.paths.fold].class_ids;
    s.audit["fold"] = *c.paths.fold;
  } else if (!c.paths.test_classes.empty()) {
    for (const auto& e : protocol::read_label_list(detail::existing(c, c.paths.test_classes, "test class list")))
      test_ids.push_back(detail::resolve_class(s.all, e));
  } else {
    throw ConfigError("config: need either paths.test_classes or paths.fold_split with paths.fold");
  }
  if (test_ids.empty()) throw DataError("the test class set is empty");
  s.test = s.all.subset(test_ids, protocol::ClassRole::test);
  auto train = s.all.without(test_ids, protocol::ClassRole::train);
  if (!c.paths.exclude.empty()) {
    protocol::SynonymMap syn;
    if (!c.paths.synonyms.empty()) syn = protocol::read_synonym_map(detail::existing(c, c.paths.synonyms, "synonym map"));
    const auto entries = protocol::read_label_list(detail::existing(c, c.paths.exclude, "exclusion list"));
    const auto ex = protocol::exclude_overlap(s.all, entries, syn);
    train = train.without(ex.removed_ids(), protocol::ClassRole::train);
    s.audit["excluded"] = ex.audit();
  }
  if (train.empty()) throw DataError("no training classes remain after exclusion");
  s.train = train;
  s.audit["train"] = s.train.ids();
  s.audit["test"] = s.test.ids();
  return s;
}

struct SemanticTable {
  std::string source;
  std::size_t dim = 0;
  std::map<std::string, semantics::SemanticEmbedding> by_id;

  std::vector<semantics::SemanticEmbedding> of(const protocol::ClassSet& set) const {
    std::vector<semantics::SemanticEmbedding> out;
    for (const auto& c : set.classes) out.push_back(by_id.at(c.id));
    return out;
  }
};

inline SemanticTable load_semantics(const CommandContext& ctx, const protocol::ClassSet& classes) {
  const auto& c = ctx.config;
  const auto store = semantics::load_word_vectors(detail::existing(c, c.paths.vectors, "word vectors"),
                                                  c.paths.vector_source);
  if (c.semantic_dim != 0 && c.semantic_dim != store.dim())
    throw ConfigError("dimension mismatch: config expects " + std::to_string(c.semantic_dim) +
                      "-dimensional semantic embeddings, the vector file holds " + std::to_string(store.dim()));
  SemanticTable t{c.paths.vector_source, store.dim(), {}};
  for (const auto& info : classes.classes) {
    auto e = semantics::embed_label(semantics::ClassDescriptor::from_label(info.id, info.label), store);
    for (const auto& w : e.oov) detail::log(ctx, "warning: '" + w + "' of class '" + info.label + "' has no vector");
    t.by_id[info.id] = std::move(e.embedding);
  }
  return t;
}

inline protocol::DatasetManifest load_manifest(const ExperimentConfig& c, const protocol::ClassSet& all) {
  auto m = protocol::read_manifest(detail::existing(c, c.paths.manifest, "manifest"));
  m.validate(all);
  return m;
}

// Eval-mode embeddings of the selected records.
inline crossmodal::ClipEmbeddings embed_clips(const backbones::Backbone<float>& bb,
                                              const std::vector<Tensor<float>>& specs,
                                              const std::vector<bool>& selected, std::size_t threads) {
  crossmodal::ClipEmbeddings out(specs.size());
  parallel_for(specs.size(), threads, [&](std::size_t i) {
    if (selected[i]) out[i] = backbones::embed(bb, specs[i]);
  });
  return out;
}

inline void cmd_synth(const CommandContext& ctx) {
  const auto& c = ctx.config;
  const auto dir = c.resolve(c.synth_dir);
  const auto corpus = protocol::write_synthetic_corpus(c.synth, c.mel, dir, provenance(ctx, "synth"));
  detail::log(ctx, "synth: wrote " + std::to_string(corpus.manifest.records.size()) + " clips to " + dir.string());
}

inline void cmd_fold_split(const CommandContext& ctx) {
  const auto& c = ctx.config;
  const auto counts = protocol::read_class_table(detail::existing(c, c.paths.classes, "class table"));
  std::vector<std::string> pinned;
  for (const auto& p : c.folds.pinned) {
    bool found = false;
    for (const auto& info : counts.classes)
      if (info.id == p || info.label == p) {
        pinned.push_back(info.id);
        found = true;
      }
    if (!found) throw ConfigError("pinned class '" + p + "' is not in the class table");
  }
  const auto split = protocol::balance_folds(counts, c.folds.k, pinned);
  auto j = split.to_json();
  j["provenance"] = provenance(ctx, "fold-split");
  fs::create_directories(c.paths.out);
  const auto path = c.paths.out / c.folds.output;
  detail::write_json(path, j);
  detail::log(ctx, "fold-split: wrote " + std::to_string(c.folds.k) + " folds to " + path.string());
}

inline std::vector<bool> select_records(const protocol::DatasetManifest& m, const std::vector<protocol::Split>& splits,
                                        const std::optional<protocol::ClassSet>& tagged = std::nullopt) {
  std::set<std::string> ids;
  if (tagged)
    for (const auto& c : tagged->classes) ids.insert(c.id);
  std::vector<bool> sel(m.records.size(), false);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (std::find(splits.begin(), splits.end(), r.split) == splits.end()) continue;
    if (tagged && !r.tagged_with_any(ids)) continue;
    sel[i] = true;
  }
  return sel;
}

// Pretrains one seed's backbone on the training classes. The checkpoint is
// rewritten after every epoch; with `resume` an existing checkpoint is
// continued from its epoch counter.
inline void cmd_pretrain(const CommandContext& ctx, std::uint64_t seed, bool resume) {
  const auto& c = ctx.config;
  detail::Stopwatch clock;
  const auto sel = select_classes(c);
  const auto manifest = load_manifest(c, sel.all);
  const auto records = select_records(manifest, {protocol::Split::train}, sel.train);
  const auto specs = dsp::manifest_logmels(manifest, c.mel, records, c.threads, c.resolve(c.paths.cache));
  const auto dir = seed_dir(c, seed);
  fs::create_directories(dir);
  const auto ck_path = dir / "backbone.ck";

  backbones::PretrainState state;
  if (resume && fs::exists(ck_path)) {
    state = backbones::pretrain_from_checkpoint(load_checkpoint(ck_path));
    if (state.classes != sel.train.ids())
      throw ConfigError("resume: checkpoint was trained on a different class set");
    if (!(state.backbone.config == c.backbone)) throw ConfigError("resume: checkpoint backbone differs from the config");
    if (state.seed != seed) throw ConfigError("resume: checkpoint belongs to seed " + std::to_string(state.seed));
    detail::log(ctx, "pretrain: resuming seed " + std::to_string(seed) + " at epoch " + std::to_string(state.epochs_done));
  } else {
    state = backbones::init_pretrain(c.backbone, sel.train.ids(), seed);
    const auto [mean, sd] = backbones::spectrogram_stats(specs, records);
    state.backbone.input_mean = mean;
    state.backbone.input_std = sd;
  }
  auto train_cfg = c.pretrain;
  train_cfg.seed = seed;
  auto extra = [&] {
    nlohmann::json j;
    j["provenance"] = provenance(ctx, "pretrain", seed);
    j["classes"] = sel.audit;
    return j;
  };
  auto save = [&] {
    auto tmp = ck_path;
    tmp += ".tmp";
    save_checkpoint(backbones::pretrain_checkpoint(state, extra()), tmp);
    fs::rename(tmp, ck_path);
    nlohmann::json h;
    h["loss"] = state.history;
    h["epochs_done"] = state.epochs_done;
    h["provenance"] = provenance(ctx, "pretrain", seed);
    if (!ctx.deterministic) h["elapsed_seconds"] = clock.seconds();
    detail::write_json(dir / "pretrain_history.json", h);
  };
  backbones::pretrain_epochs(state, manifest, specs, train_cfg, c.augment, [&](std::size_t epoch, double loss) {
    detail::log(ctx, "pretrain seed " + std::to_string(seed) + " epoch " + std::to_string(epoch) + " loss " +
                         std::to_string(loss));
    save();
  });
  save();
}

inline backbones::Backbone<float> load_backbone(const CommandContext& ctx, std::uint64_t seed) {
  const auto path = seed_dir(ctx.config, seed) / "backbone.ck";
  if (!fs::exists(path)) throw DataError("no backbone checkpoint at " + path.string() + " (run pretrain first)");
  auto bb = backbones::backbone_from_checkpoint(load_checkpoint(path));
  if (bb.embed_dim() != ctx.config.backbone.embed_dim)
    throw ConfigError("dimension mismatch: backbone checkpoint emits m = " + std::to_string(bb.embed_dim()) +
                      ", config sets backbone.embed_dim = " + std::to_string(ctx.config.backbone.embed_dim));
  return bb;
}

inline void cmd_train_projection(const CommandContext& ctx, std::uint64_t seed) {
  const auto& c = ctx.config;
  detail::Stopwatch clock;
  const auto sel = select_classes(c);
  const auto sem = load_semantics(ctx, sel.all);
  const auto bb = load_backbone(ctx, seed);
  const auto manifest = load_manifest(c, sel.all);
  const auto records = select_records(manifest, {protocol::Split::train, protocol::Split::val});
  const auto specs = dsp::manifest_logmels(manifest, c.mel, records, c.threads, c.resolve(c.paths.cache));
  const auto emb = embed_clips(bb, specs, records, c.threads);

  auto cfg = c.projection;
  cfg.seed = seed;
  auto res = crossmodal::train_projection(manifest, emb, sel.train.ids(), sem.of(sel.train), cfg, c.projection_setup,
                                          [&](std::size_t epoch, double loss, double val) {
                                            detail::log(ctx, "projection seed " + std::to_string(seed) + " epoch " +
                                                                 std::to_string(epoch) + " loss " + std::to_string(loss) +
                                                                 " val mAP " + std::to_string(val));
                                          });
  const auto dir = seed_dir(c, seed);
  nlohmann::json extra;
  extra["provenance"] = provenance(ctx, "train-projection", seed);
  extra["selection"] = res.selection_report();
  extra["semantic_source"] = sem.source;
  save_checkpoint(crossmodal::projection_checkpoint(res.projection, extra), dir / "projection.ck");
  auto report = res.selection_report();
  report["provenance"] = provenance(ctx, "train-projection", seed);
  if (!ctx.deterministic) report["elapsed_seconds"] = clock.seconds();
  detail::write_json(dir / "selection.json", report);
  detail::log(ctx, "projection seed " + std::to_string(seed) + ": best epoch " + std::to_string(res.best_epoch) +
                       " (validation mAP " + std::to_string(res.best_map) + ")");
}

// Scores the test clips of every seed against the test classes and writes
// <out>/report-<task>.json plus its table.
inline eval::EvalReport cmd_evaluate(const CommandContext& ctx) {
  const auto& c = ctx.config;
  detail::Stopwatch clock;
  const auto sel = select_classes(c);
  const auto sem = load_semantics(ctx, sel.all);
  protocol::DatasetManifest manifest;
  if (!c.paths.eval_manifest.empty()) {
    manifest = protocol::read_manifest(detail::existing(c, c.paths.eval_manifest, "evaluation manifest"));
    manifest.validate(sel.all);
    for (auto& r : manifest.records) r.split = protocol::Split::test;
  } else {
    manifest = load_manifest(c, sel.all);
  }
  const auto records = select_records(manifest, {protocol::Split::test});
  if (std::none_of(records.begin(), records.end(), [](bool b) { return b; })) throw DataError("the test split is empty");
  const auto specs = dsp::manifest_logmels(manifest, c.mel, records, c.threads, c.resolve(c.paths.cache));
  const auto candidates = sem.of(sel.test);

  std::map<std::string, std::vector<std::string>> categories;
  if (!c.paths.categories.empty())
    categories = detail::read_json(detail::existing(c, c.paths.categories, "category map"), "category map")
                     .get<std::map<std::string, std::vector<std::string>>>();

  eval::EvalReport report;
  report.task = c.task;
  report.condition = c.condition;
  report.backbone = backbones::to_string(c.backbone.kind);
  report.semantic_source = sem.source;
  report.candidate_classes = sel.test.ids();
  if (c.task == "tagging") {
    std::vector<std::vector<int>> labels;
    for (const auto& cand : candidates) {
      std::vector<int> y;
      for (std::size_t i = 0; i < manifest.records.size(); ++i)
        if (records[i]) y.push_back(eval::detail::has_tag(manifest.records[i], cand.class_id));
      labels.push_back(std::move(y));
    }
    report.random_baseline = eval::random_baseline_tagging(labels);
  } else {
    report.random_baseline = eval::random_baseline_classification(candidates.size());
  }

  for (auto seed : c.seeds) {
    const auto bb = load_backbone(ctx, seed);
    const auto ppath = seed_dir(c, seed) / "projection.ck";
    if (!fs::exists(ppath)) throw DataError("no projection checkpoint at " + ppath.string() + " (run train-projection first)");
    const auto proj = crossmodal::projection_from_checkpoint(load_checkpoint(ppath));
    if (proj.input_dim() != bb.embed_dim())
      throw ConfigError("dimension mismatch: projection expects m = " + std::to_string(proj.input_dim()) +
                        ", backbone emits " + std::to_string(bb.embed_dim()));
    if (proj.output_dim() != sem.dim)
      throw ConfigError("dimension mismatch: projection emits n = " + std::to_string(proj.output_dim()) +
                        ", semantic embeddings have " + std::to_string(sem.dim));
    const auto emb = embed_clips(bb, specs, records, c.threads);
    report.runs.push_back(c.task == "tagging"
                              ? eval::evaluate_tagging(proj, manifest, emb, candidates, seed)
                              : eval::evaluate_classification(proj, manifest, emb, candidates, categories, seed));
    detail::log(ctx, "evaluate seed " + std::to_string(seed) + " done");
  }
  report.finalize();

  if (c.task == "tagging" && candidates.size() >= 3) {
    std::vector<std::string> ids;
    std::vector<double> aps, rnd;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      if (!report.runs.front().per_class[k].ap) continue;
      double s = 0;
      for (const auto& run : report.runs) s += *run.per_class[k].ap;
      ids.push_back(candidates[k].class_id);
      aps.push_back(s / static_cast<double>(report.runs.size()));
      rnd.push_back(*report.runs.front().per_class[k].random_ap);
    }
    if (ids.size() >= 3) report.proximity = eval::proximity_correlation(ids, aps, rnd, sem.of(sel.train), candidates);
  }
  report.provenance = provenance(ctx, "evaluate");
  report.provenance["classes"] = sel.audit;
  if (!ctx.deterministic) report.provenance["elapsed_seconds"] = clock.seconds();
  fs::create_directories(c.paths.out);
  eval::emit_report(report, c.paths.out / ("report-" + c.task + ".json"));
  return report;
}

}  // namespace zsa::experiment
