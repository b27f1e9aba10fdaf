#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mdr/pipeline.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string workdir_override;
  std::string seed_override;
  bool force = false;
};

void add_global_flags(CLI::App* cmd, GlobalArgs& args) {
  cmd->add_option("--config", args.config_path, "pipeline configuration file")
      ->required();
  cmd->add_option("--workdir", args.workdir_override,
                  "override paths.workdir from the config");
  cmd->add_option("--seed", args.seed_override, "override the config seed");
  cmd->add_flag("--force", args.force,
                "use artifacts even if their config hash does not match");
}

mdr::CommandContext make_context(const GlobalArgs& args) {
  mdr::CommandContext ctx;
  ctx.config = mdr::load_config(args.config_path);
  ctx.force = args.force;
  if (!args.workdir_override.empty()) {
    ctx.config.paths.workdir = args.workdir_override;
  }
  if (!args.seed_override.empty()) {
    ctx.config.seed = std::stoull(args.seed_override);
  }
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked-diffusion generative document retrieval"};
  app.require_subcommand(1);

  GlobalArgs ingest_args, docids_args, train_args, eval_args, sweep_args;
  bool resume = false;
  std::string sweep_strategy;

  CLI::App* ingest = app.add_subcommand(
      "ingest", "load the corpus, build the vocabulary, generate pseudo "
                "queries, split, and write the dataset bundle");
  add_global_flags(ingest, ingest_args);

  CLI::App* docids = app.add_subcommand(
      "build-docids", "build document embeddings/codebooks or linguistic "
                      "DocIDs and write the registry");
  add_global_flags(docids, docids_args);

  CLI::App* train = app.add_subcommand("train", "train the denoiser");
  add_global_flags(train, train_args);
  train->add_flag("--resume", resume, "continue from checkpoint.bin");

  CLI::App* eval = app.add_subcommand("eval", "evaluate retrieval quality");
  add_global_flags(eval, eval_args);

  CLI::App* sweep = app.add_subcommand(
      "sweep", "quality-latency sweep over denoising step budgets");
  add_global_flags(sweep, sweep_args);
  sweep->add_option("--strategy", sweep_strategy,
                    "denoising strategy for the sweep, or \"all\" for the "
                    "four-strategy ablation");

  try {
    app.parse(argc, argv);
    if (ingest->parsed()) {
      mdr::cmd_ingest(make_context(ingest_args));
    } else if (docids->parsed()) {
      mdr::cmd_build_docids(make_context(docids_args));
    } else if (train->parsed()) {
      mdr::cmd_train(make_context(train_args), resume);
    } else if (eval->parsed()) {
      mdr::cmd_eval(make_context(eval_args));
    } else if (sweep->parsed()) {
      mdr::cmd_sweep(make_context(sweep_args), sweep_strategy);
    }
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
