// star: synthetic data generation, training, evaluation, ablations and sweeps.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "star/cli.hpp"

int main(int argc, char** argv) {
  using namespace star::cli;
  const std::vector<std::string> args(argv, argv + argc);

  CLI::App app{"Skeleton-guided cross-modality video re-identification (desk scale)"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors on stderr");

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Dataset seed");
  g->add_option("--identities", gen.identities, "Total identities (two thirds train)");
  g->add_option("--train-identities", gen.train_identities, "Train identities (-1: two thirds)");
  g->add_option("--tracks-per", gen.tracks_per, "Tracks per identity and modality");
  g->add_option("--frames", gen.frames, "Frames per track");
  g->add_flag("--force", gen.force, "Replace a non-empty output directory");

  TrainOptions tr;
  std::int64_t train_seed = -1;
  int train_epochs = 0;
  auto* t = app.add_subcommand("train", "Train one model and write a checkpoint and loss CSV");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--config", tr.config, "Experiment config JSON (default: desk preset)");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_flag("--no-frame-guidance", tr.no_frame_guidance, "Bypass skeleton-guided frame correction");
  t->add_flag("--no-sequence-guidance", tr.no_sequence_guidance, "Replace part-weighted aggregation by a temporal average");
  t->add_option("--seed", train_seed, "Training seed override (-1: from config)");
  t->add_option("--epochs", train_epochs, "Epoch count override (0: from config)");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  e->add_option("--protocol", ev.protocol, "i2v, v2i or both")->check(CLI::IsMember({"i2v", "v2i", "both"}));
  e->add_option("--out", ev.out, "Output directory (default: <checkpoint>/../eval)");

  AblateOptions ab;
  int ablate_epochs = 0;
  auto* a = app.add_subcommand("ablate", "Train and evaluate the guidance ablation grid over seeds");
  a->add_option("--data", ab.data, "Dataset directory")->required();
  a->add_option("--config", ab.config, "Experiment config JSON (default: desk preset)");
  a->add_option("--out", ab.out, "Output directory")->required();
  a->add_option("--seeds", ab.seeds, "Training seeds")->delimiter(',');
  a->add_option("--variants", ab.variants, "Subset of baseline,fg,sg,full")->delimiter(',');
  a->add_option("--epochs", ablate_epochs, "Epoch count override (0: from config)");

  SweepOptions sw;
  int sweep_epochs = 0;
  auto* s = app.add_subcommand("sweep", "Sequence-length or multi-p sweep");
  s->add_option("--axis", sw.axis, "seqlen or p")->required()->check(CLI::IsMember({"seqlen", "p"}));
  s->add_option("--values", sw.values, "Lengths, or the candidate pool of p values")->required()->delimiter(',');
  s->add_option("--data", sw.data, "Dataset directory")->required();
  s->add_option("--config", sw.config, "Experiment config JSON (default: desk preset)");
  s->add_option("--out", sw.out, "Output directory")->required();
  s->add_option("--seeds", sw.seeds, "Training seeds")->delimiter(',');
  s->add_option("--epochs", sweep_epochs, "Epoch count override (0: from config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*g) {
      cmd_generate(gen, args);
    } else if (*t) {
      if (train_seed >= 0) tr.seed = static_cast<std::uint64_t>(train_seed);
      if (train_epochs > 0) tr.epochs = train_epochs;
      const auto r = cmd_train(tr, args);
      std::cout << "checkpoint " << r.checkpoint.string() << "\nloss " << r.loss_csv.string() << "\n";
    } else if (*e) {
      cmd_eval(ev, args);
    } else if (*a) {
      if (ablate_epochs > 0) ab.epochs = ablate_epochs;
      cmd_ablate(ab, args);
    } else if (*s) {
      if (sweep_epochs > 0) sw.epochs = sweep_epochs;
      cmd_sweep(sw, args);
    }
  } catch (const star::Error& err) {
    spdlog::error("{}", err.what());
    return star::exit_code(err);
  } catch (const std::filesystem::filesystem_error& err) {
    spdlog::error("{}", err.what());
    return 3;
  } catch (const std::exception& err) {
    spdlog::error("{}", err.what());
    return 1;
  }
  return 0;
}
