#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "unig/attacks.hpp"
#include "unig/dataset.hpp"
#include "unig/defenses.hpp"
#include "unig/harness.hpp"
#include "unig/model.hpp"

namespace unig::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCellErrors = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitTraining = 4;

struct GlobalFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<std::string> axis;
  std::optional<std::string> values;
  std::optional<std::string> seeds;
  std::optional<std::string> input;
};

// defaults <- config file <- global flags <- dotted flags <- UNIG_OUT.
// --seed sets both model.seed and eval.seeds.
Config resolve_config(const GlobalFlags& flags,
                      const std::vector<std::string>& dotted);

ArchConfig arch_from(const Config& cfg);
TrainConfig train_from(const Config& cfg);
UniGConfig unig_from(const Config& cfg);
DefenseSpec defense_from(const Config& cfg, DefenseKind kind);
std::vector<DefenseSpec> defenses_from(const Config& cfg);
std::vector<AttackConfig> attacks_from(const Config& cfg);
EvalOptions eval_from(const Config& cfg);

Dataset train_data(const Config& cfg);
Dataset test_data(const Config& cfg);
Dataset reservoir_data(const Config& cfg);

// out.dir/<run-id>; the id defaults to "<command>-<config hash>".
std::filesystem::path run_directory(Config& cfg, const std::string& command);

// Replaces defense.alpha = auto by the tuned value; no-op otherwise.
void resolve_alpha(Config& cfg, const ClassifierModel& model,
                   const Dataset& reservoir, std::ostream& log);

int cmd_train(Config cfg, std::ostream& out, std::ostream& err);
int cmd_evaluate(Config cfg, std::ostream& out, std::ostream& err);
int cmd_sweep(Config cfg, std::ostream& out, std::ostream& err);
int cmd_report(Config cfg, std::ostream& out, std::ostream& err);

}  // namespace unig::cli
