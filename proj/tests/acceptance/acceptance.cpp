// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 0
// only when every criterion passes.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/uuid/detail/sha1.hpp>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "zsa/backbones/backbone.hpp"
#include "zsa/crossmodal/optim.hpp"
#include "zsa/eval/metrics.hpp"
#include "zsa/experiment/commands.hpp"
#include "zsa/protocol/classes.hpp"

namespace fs = std::filesystem;
using namespace zsa;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

// 1. Metric oracles.
Outcome metric_oracles() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst_ap = 0, worst_r = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(64);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 4 == 0 ? double(rng.index(4)) : rng.normal();
      l[i] = rng.bernoulli(0.35);
    }
    l[rng.index(n)] = 1;
    worst_ap = std::max(worst_ap, std::abs(*eval::average_precision(s, l) - oracle::pr_walk_ap(s, l)));
  }
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng.index(62);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.normal();
      b[i] = rng.uniform(-1, 1) * a[i] + rng.normal();
    }
    worst_r = std::max(worst_r, std::abs(*eval::pearson(a, b) - oracle::direct_pearson(a, b)));
  }
  const double secs = seconds_since(t0);
  o.require(worst_ap <= 1e-12, "AP deviates from the PR-walk oracle by " + fmt(worst_ap));
  o.require(worst_r <= 1e-12, "Pearson r deviates from the covariance oracle by " + fmt(worst_r));
  o.require(secs < 5, "took " + fmt(secs) + " s");
  if (o.pass) o.detail = "max |dAP| " + fmt(worst_ap) + ", max |dr| " + fmt(worst_r) + ", " + fmt(secs, 2) + " s";
  return o;
}

// 2. Gradients against central differences.
Outcome gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = oracle::check_projection_gradients(11, 100, false);
  const auto pd = oracle::check_projection_gradients(12, 100, true);
  const auto t = oracle::check_transformer_gradients(13, 100);
  const double secs = seconds_since(t0);
  o.require(p.coords == 100 && p.max_rel < 1e-4, "projection: " + p.worst);
  o.require(pd.coords == 100 && pd.max_rel < 1e-4, "projection with dropout: " + pd.worst);
  o.require(t.coords == 100 && t.max_rel < 1e-4, "transformer: " + t.worst);
  o.require(secs < 60, "took " + fmt(secs) + " s");
  if (o.pass)
    o.detail = "max rel error projection " + fmt(std::max(p.max_rel, pd.max_rel), 3) + ", transformer " +
               fmt(t.max_rel, 3) + ", " + fmt(secs, 2) + " s";
  return o;
}

// 3. Hand-computed optimizer, loss and schedule values.
Outcome hand_values() {
  Outcome o;
  auto adamw_once = [](double wd) {
    crossmodal::TrainConfig c;
    c.beta1 = 0.9;
    c.beta2 = 0.99;
    c.epsilon = 0;
    c.weight_decay = wd;
    ParameterSet<double> ps;
    ps.add("theta", Tensor<double>({1}, 1.0)).grad[0] = 1.0;
    crossmodal::OptimizerState<double> st;
    crossmodal::adamw_step(ps, st, 0.1, c);
    return ps.at("theta").value[0];
  };
  o.require(std::abs(adamw_once(0.0) - 0.9) <= 1e-12, "AdamW without decay gave " + fmt(adamw_once(0.0), 17));
  o.require(std::abs(adamw_once(0.1) - 0.89) <= 1e-12, "AdamW with decay gave " + fmt(adamw_once(0.1), 17));
  const double bce = crossmodal::bce_loss(std::vector<double>{0.0}, std::vector<double>{1.0});
  o.require(std::abs(bce - std::log(2.0)) <= 1e-12, "BCE(0, 1) = " + fmt(bce, 17));
  const crossmodal::TrainConfig preset;  // lr0 2e-5, warmup 5, decay 50..100, final 1e-7
  o.require(crossmodal::lr_at(5, preset) == preset.initial_lr, "lr at epoch 5");
  o.require(crossmodal::lr_at(75, preset) == (preset.initial_lr + preset.final_lr) / 2, "lr at epoch 75");
  for (double e : {100.0, 101.5, 129.0})
    o.require(crossmodal::lr_at(e, preset) == 1e-7, "lr at epoch " + fmt(e));
  if (o.pass) o.detail = "AdamW 0.9 / 0.89, BCE ln 2, lr checkpoints exact";
  return o;
}

// 4. Structural invariants over random configurations.
Outcome structure() {
  Outcome o;
  Rng rng(404);
  for (int trial = 0; trial < 1000 && o.pass; ++trial) {
    backbones::TransformerConfig c;
    c.patch_freq = 1 + rng.index(6);
    c.patch_time = 1 + rng.index(6);
    c.dim = 4;
    c.heads = 1;
    c.layers = 1;
    const std::size_t bins = c.patch_freq + rng.index(40), frames = c.patch_time + rng.index(60);
    const std::size_t F = bins / c.patch_freq, T = frames / c.patch_time;
    c.max_freq_patches = F;
    c.max_time_patches = T;
    Rng init(trial);
    auto ps = backbones::init_transformer<float>(c, 2, init);
    Graph<float> g(false);
    const auto grid = backbones::patchify(g, ps, c, Tensor<float>({bins, frames}));
    o.require(grid.rows.size() == F && grid.cols.size() == T && grid.tokens.value().rows() == F * T,
              "patch grid of " + std::to_string(bins) + "x" + std::to_string(frames));
    const backbones::PatchoutConfig po{rng.index(F), rng.index(T)};
    Rng sel(trial + 7);
    const auto kept = backbones::patchout_select(F, T, po, Mode::train, &sel);
    o.require(kept.rows.size() * kept.cols.size() == (F - po.n_freq_drop) * (T - po.n_time_drop),
              "patchout token count");
  }
  for (int trial = 0; trial < 1000 && o.pass; ++trial) {
    const std::size_t hop = 1 + rng.index(400), win = hop + rng.index(800), n = win + rng.index(20000);
    std::size_t brute = 0;
    for (std::size_t s = 0; s + win <= n; s += hop) ++brute;
    o.require(dsp::frame_count(n, win, hop) == brute, "frame count");
  }
  for (int trial = 0; trial < 1000 && o.pass; ++trial) {
    const std::size_t n = 2 + rng.index(60), k = 2 + rng.index(std::min<std::size_t>(n - 1, 8));
    protocol::TagCountTable t;
    std::uint64_t max_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t c = rng.bernoulli(0.2) ? rng.index(100000) : rng.index(50);
      t.classes.push_back({"c" + std::to_string(i), "c" + std::to_string(i), c});
      max_count = std::max(max_count, c);
    }
    const auto split = protocol::balance_folds(t, k, {});
    std::uint64_t lo = UINT64_MAX, hi = 0;
    for (const auto& f : split.folds) {
      lo = std::min(lo, f.total);
      hi = std::max(hi, f.total);
    }
    o.require(hi - lo <= max_count, "fold spread " + std::to_string(hi - lo) + " > " + std::to_string(max_count));
  }
  {
    protocol::TagCountTable t;
    for (auto [id, c] : std::vector<std::pair<std::string, std::uint64_t>>{{"A", 10}, {"B", 8}, {"C", 6}, {"D", 4}, {"E", 2}})
      t.classes.push_back({id, id, c});
    const auto split = protocol::balance_folds(t, 2, {});
    o.require(split.folds[0].total == 16 && split.folds[1].total == 14, "hand-derived {16, 14} fold example");
  }
  {
    backbones::BackboneConfig c;
    c.kind = backbones::BackboneKind::vggish;
    c.embed_dim = 6;
    c.vggish.channels = {2, 2, 3, 3, 4, 4};
    c.vggish.fc_dim = 8;
    Rng r(5);
    const auto bb = backbones::make_backbone<float>(c, r);
    Tensor<float> x({c.vggish.mel_bins, 2 * c.vggish.chunk_frames + 17});
    for (auto& v : x.values()) v = static_cast<float>(r.normal());
    const auto chunks = backbones::vggish_chunks(x, c.vggish);
    const auto whole = backbones::embed(bb, x);
    const auto a = backbones::embed(bb, chunks[0]), b = backbones::embed(bb, chunks[1]);
    double dev = 0;
    for (std::size_t k = 0; k < whole.size(); ++k) dev = std::max(dev, std::abs(whole[k] - (a[k] + b[k]) / 2.0));
    o.require(chunks.size() == 2 && dev < 1e-6, "VGGish chunk mean deviates by " + fmt(dev));
  }
  if (o.pass) o.detail = "patch/patchout, frame count, fold bound, VGGish chunk mean";
  return o;
}

fs::path write_file(const fs::path& p, const std::string& body) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << body;
  return p;
}

experiment::CommandContext context(const fs::path& ini) {
  experiment::LoadOptions lo;
  lo.config_file = ini;
  return {experiment::load_config(lo), false, nullptr};
}

void train_all(const experiment::CommandContext& ctx) {
  for (auto s : ctx.config.seeds) {
    std::cerr << "acceptance: pretraining seed " << s << '\n';
    experiment::cmd_pretrain(ctx, s, false);
    experiment::cmd_train_projection(ctx, s);
  }
}

struct ToyRun {
  eval::EvalReport tagging, classification;
  double seconds = 0;
};

// 5. Toy preset end to end.
Outcome synthetic_zero_shot(const fs::path& work, ToyRun& run) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  auto ctx = context(write_file(work / "toy.ini", "[run]\npreset = toy\nseeds = 0, 1, 2\n"));
  experiment::cmd_synth(ctx);
  train_all(ctx);
  run.tagging = experiment::cmd_evaluate(ctx);
  ctx.config.task = "classification";
  run.classification = experiment::cmd_evaluate(ctx);
  run.seconds = seconds_since(t0);

  const double acc = run.classification.mean_accuracy.value_or(0);
  const double map = run.tagging.mean_map.value_or(0), base = run.tagging.random_baseline;
  const bool has_r = run.tagging.proximity && run.tagging.proximity->r;
  const double r = has_r ? *run.tagging.proximity->r : 0.0;
  const std::string r_text = has_r ? fmt(r) : std::string("undefined");
  o.require(acc >= 0.5, "4-way accuracy " + fmt(acc) + " < 0.5");
  o.require(map >= 2 * base, "tagging mAP " + fmt(map) + " < 2 x baseline " + fmt(base));
  o.require(has_r && r > 0, "proximity r " + r_text + " not > 0");
  o.require(run.seconds < 900, "took " + fmt(run.seconds) + " s");
  const std::string summary = "accuracy " + fmt(acc) + ", mAP " + fmt(map) + " vs baseline " + fmt(base) + ", r " + r_text + ", " + fmt(run.seconds, 4) + " s";
  o.detail = o.pass ? summary : o.detail + " (" + summary + ")";
  return o;
}

// 6. Excluding the semantically nearest training classes does not help.
Outcome nearby_classes(const fs::path& work, const ToyRun& included) {
  Outcome o;
  const auto ctx = context(write_file(
      work / "toy-excluded.ini",
      "[run]\npreset = toy\nseeds = 0, 1, 2\n[paths]\nexclude = corpus/near_classes.txt\nout = runs-excluded\n"));
  train_all(ctx);
  const auto excluded = experiment::cmd_evaluate(ctx);
  const double with = included.tagging.mean_map.value_or(0), without = excluded.mean_map.value_or(0);
  o.require(with >= without, "mAP with nearby classes " + fmt(with) + " < without " + fmt(without));
  if (o.pass) o.detail = "mAP with nearby classes " + fmt(with) + " >= without " + fmt(without);
  return o;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ZSA_CLI_PATH) + " " + args + " >> " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string sha1_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  boost::uuids::detail::sha1 h;
  h.process_bytes(bytes.data(), bytes.size());
  boost::uuids::detail::sha1::digest_type d;
  h.get_digest(d);
  char buf[41];
  for (int i = 0; i < 5; ++i) std::snprintf(buf + 8 * i, 9, "%08x", d[i]);
  return buf;
}

std::map<std::string, std::string> hash_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "cli.log")
      out[fs::relative(e.path(), dir).generic_string()] = sha1_file(e.path());
  return out;
}

// 7. Every subcommand twice with --deterministic.
Outcome determinism(const fs::path& work) {
  Outcome o;
  const auto dir = work / "determinism";
  const std::string ini = "[run]\npreset = toy\nseeds = 0\n"
                          "[synth]\nclips_per_class = 10\nmulti_label_clips = 4\nclip_samples = 4800\n"
                          "[pretrain]\nepochs = 2\nsteps_per_epoch = 3\nbatch_size = 4\n"
                          "[projection]\nepochs = 2\n[folds]\nk = 3\n";
  const std::vector<std::string> steps{"synth", "fold-split", "pretrain", "train-projection", "evaluate"};
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2 && o.pass; ++pass) {
    fs::remove_all(dir);
    const auto cfg = write_file(dir / "det.ini", ini);
    for (const auto& s : steps) {
      const int rc = run_cli(s + " --deterministic --config " + cfg.string(), dir / "cli.log");
      o.require(rc == 0, s + " exited with " + std::to_string(rc));
    }
    const auto hashes = hash_tree(dir);
    if (pass == 0) {
      first = hashes;
      continue;
    }
    o.require(hashes.size() == first.size(), "artifact sets differ");
    for (const auto& [name, h] : hashes) {
      auto it = first.find(name);
      o.require(it != first.end() && it->second == h, name + " differs between runs");
    }
  }
  if (o.pass) o.detail = std::to_string(first.size()) + " artifacts hash-identical over 5 subcommands";
  return o;
}

}  // namespace

int main() {
  const auto work = fs::current_path() / "acceptance_work";
  fs::remove_all(work);
  fs::create_directories(work);

  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria;
  ToyRun toy;
  bool toy_ran = false;
  criteria.emplace_back("metric oracle equivalence", metric_oracles);
  criteria.emplace_back("gradient correctness", gradients);
  criteria.emplace_back("hand-computed optimizer and loss values", hand_values);
  criteria.emplace_back("structural invariants", structure);
  criteria.emplace_back("synthetic zero-shot end to end", [&] {
    toy_ran = true;
    return synthetic_zero_shot(work, toy);
  });
  criteria.emplace_back("nearby-class ablation direction", [&] {
    if (!toy_ran) return Outcome{false, "toy run missing"};
    return nearby_classes(work, toy);
  });
  criteria.emplace_back("CLI determinism", [&] { return determinism(work); });

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
