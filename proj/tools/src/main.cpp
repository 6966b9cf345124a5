// unig: train desk models, evaluate defenses against query attacks, sweep
// hyperparameters and summarise reports.

#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "unig/error.hpp"

namespace {

using unig::cli::GlobalFlags;

void add_globals(CLI::App& app, GlobalFlags& g) {
  app.add_option("--config", g.config, "flat key = value config file");
  app.add_option("--seed", g.seed, "seed for model.seed and eval.seeds");
  app.add_option("--out", g.out, "output root (UNIG_OUT overrides)");
  app.add_option("--workers", g.workers, "parallel evaluation cells");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UniG defense workbench"};
  app.require_subcommand(1);
  GlobalFlags g;

  auto* train = app.add_subcommand("train", "train a desk classifier");
  auto* evaluate = app.add_subcommand("evaluate", "defenses x attacks x seeds");
  auto* sweep = app.add_subcommand("sweep", "evaluate along one hyperparameter axis");
  auto* report = app.add_subcommand("report", "summarise a report.json");
  for (auto* sub : {train, evaluate, sweep, report}) {
    add_globals(*sub, g);
    sub->allow_extras();
  }
  sweep->add_option("--axis", g.axis,
                    "delta|p|alpha|batch_size|square_size|update_step|rnd_sigma");
  sweep->add_option("--values", g.values, "comma-separated axis values");
  sweep->add_option("--seeds", g.seeds, "comma-separated seeds");
  evaluate->add_option("--seeds", g.seeds, "comma-separated seeds");
  report->add_option("--input", g.input, "report.json to summarise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    unig::cli::Config cfg = unig::cli::resolve_config(g, chosen->remaining());
    if (chosen == train) return unig::cli::cmd_train(cfg, std::cout, std::cerr);
    if (chosen == evaluate) return unig::cli::cmd_evaluate(cfg, std::cout, std::cerr);
    if (chosen == sweep) return unig::cli::cmd_sweep(cfg, std::cout, std::cerr);
    return unig::cli::cmd_report(cfg, std::cout, std::cerr);
  } catch (const unig::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return unig::cli::kExitConfig;
  } catch (const unig::TrainingFailure& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return unig::cli::kExitTraining;
  } catch (const unig::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return unig::cli::kExitIo;
  } catch (const unig::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return unig::cli::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return unig::cli::kExitConfig;
  }
}
