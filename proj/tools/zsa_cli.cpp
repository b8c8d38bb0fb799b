#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "zsa/experiment/commands.hpp"

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const zsa::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const zsa::DataError*>(&e)) return 3;
  if (dynamic_cast<const zsa::NumericalError*>(&e)) return 4;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot audio tagging and classification experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file, preset, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool deterministic = false;
  app.add_option("--config", config_file, "INI experiment configuration")->check(CLI::ExistingFile);
  app.add_option("--preset", preset, "named profile: audioset-fold, esc50, openmic-inst, openmic-mic, toy");
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", seed, "run a single seed instead of the configured list");
  app.add_option("--threads", threads, "worker threads for feature extraction and embedding")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", deterministic, "single thread, no timings in artifacts");

  auto* fold_split = app.add_subcommand("fold-split", "balance the class table into k folds");
  auto* pretrain = app.add_subcommand("pretrain", "supervised backbone pretraining on the training classes");
  bool resume = false;
  pretrain->add_flag("--resume", resume, "continue from an existing checkpoint");
  auto* train_projection = app.add_subcommand("train-projection", "fit the cross-modal projection");
  auto* evaluate = app.add_subcommand("evaluate", "zero-shot evaluation on the test classes");
  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    zsa::experiment::LoadOptions o;
    if (!config_file.empty()) o.config_file = config_file;
    if (!preset.empty()) o.preset = preset;
    if (!out.empty()) o.out = out;
    o.seed = seed;
    o.threads = threads;
    o.deterministic = deterministic;
    zsa::experiment::CommandContext ctx{zsa::experiment::load_config(o), deterministic, &std::cerr};
    const auto& c = ctx.config;
    if (fold_split->parsed()) {
      zsa::experiment::cmd_fold_split(ctx);
    } else if (pretrain->parsed()) {
      for (auto s : c.seeds) zsa::experiment::cmd_pretrain(ctx, s, resume);
    } else if (train_projection->parsed()) {
      for (auto s : c.seeds) zsa::experiment::cmd_train_projection(ctx, s);
    } else if (evaluate->parsed()) {
      const auto report = zsa::experiment::cmd_evaluate(ctx);
      std::cout << zsa::eval::results_table({report}).render();
    } else if (synth->parsed()) {
      zsa::experiment::cmd_synth(ctx);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
