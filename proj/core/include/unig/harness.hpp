#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "unig/attacks.hpp"
#include "unig/dataset.hpp"
#include "unig/defenses.hpp"
#include "unig/model.hpp"

namespace unig {

// Procedural grayscale shapes, one pattern family per class (stripes,
// checker, disc, frame, ...) with seeded jitter and pixel noise. Labels cycle
// through the classes, so the histogram is balanced when classes divides n.
Dataset gen_synthetic_dataset(std::size_t classes, std::size_t n,
                              std::size_t image_side, std::uint64_t seed);

// IDX pair (0x00000803 images n x h x w, 0x00000801 labels), bytes scaled
// by 1/255.
Dataset load_idx_dataset(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path);
// Writes single-channel data, quantizing pixels to round(255 v).
void write_idx_dataset(const Dataset& data,
                       const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path);

// Splits off the last `test` images (after a seeded shuffle) as a test set.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::size_t test,
                                          std::uint64_t seed);

struct EvalOptions {
  std::vector<std::size_t> budgets{100, 2500};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  // Images per oracle call; both the attack batch and the defense batch.
  std::size_t batch_size = 128;
  // 0 evaluates the whole dataset.
  std::size_t max_images = 0;
  // 0 means one worker per hardware thread.
  std::size_t workers = 0;
  // Record elapsed seconds; off by default so reports are byte-reproducible.
  bool wall_time = false;
  bool freeze = true;
  // Padding images for single-sample mode.
  const Dataset* reservoir = nullptr;
  std::string model_id = "model";
};

/// One (defense, attack, budget, seed) cell.
struct EvalReport {
  std::string model_id;
  std::string defense;
  std::string defense_params;
  std::string attack;
  std::string norm;
  double epsilon = 0.0;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  double logit_diff = 0.0;
  // Mean pairwise cosine of the final perturbations x' - x; NaN if fewer than
  // two attacked images moved.
  double universality = 0.0;
  double wall_time_s = 0.0;
  // (checkpoint, robust accuracy) and (checkpoint, mean best margin over the
  // attacked images) for checkpoints within the budget.
  std::vector<std::pair<std::size_t, double>> robust_curve;
  std::vector<std::pair<std::size_t, double>> margin_curve;
  std::size_t n_images = 0;
  std::size_t n_attacked = 0;
  std::uint64_t oracle_queries = 0;
  std::size_t max_image_queries = 0;
  // Largest ball or box violation over the stored adversarial examples.
  double max_constraint_violation = 0.0;
  // Sweep bookkeeping; empty axis outside sweeps.
  std::string axis;
  double axis_value = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct CellError {
  std::string defense;
  std::string attack;
  std::uint64_t seed = 0;
  std::string message;
};

struct EvalResult {
  std::vector<EvalReport> reports;
  std::vector<CellError> errors;
};

// Every defense x attack x seed cell, each attacked once at the largest budget
// with the smaller budgets read off the same run. Cells run concurrently; the
// result order is fixed (defense, attack, seed, budget). Cell failures are
// collected instead of thrown.
EvalResult evaluate_grid(const ClassifierModel& model,
                         const std::vector<DefenseSpec>& defenses,
                         const std::vector<AttackConfig>& attacks,
                         const Dataset& data, const EvalOptions& opts);

// Single-defense form; throws the first cell error.
std::vector<EvalReport> eval_defense(const ClassifierModel& model,
                                     const DefenseSpec& defense,
                                     const std::vector<AttackConfig>& attacks,
                                     const Dataset& data,
                                     const EvalOptions& opts);

// Defended clean accuracy with one seeded draw per batch.
double defended_accuracy(const ClassifierModel& model, const DefenseSpec& spec,
                         const Dataset& data, std::uint64_t seed,
                         std::size_t batch_size,
                         const Dataset* reservoir = nullptr);

enum class SweepAxis {
  kDelta,
  kP,
  kAlpha,
  kBatchSize,
  kSquareSize,
  kUpdateStep,
  kRndSigma
};
std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& text);

struct SweepSpec {
  SweepAxis axis = SweepAxis::kDelta;
  std::vector<double> values;
  DefenseSpec defense;
  std::vector<AttackConfig> attacks;
  EvalOptions options;

  void validate() const;
};

// One report per (value, attack, budget, seed), tagged with the axis value.
EvalResult run_sweep(const ClassifierModel& model, const SweepSpec& spec,
                     const Dataset& data);

struct AlphaCandidate {
  double alpha = 0.0;
  // Fraction of images whose predicted class changes under the defense.
  double flip_rate = 0.0;
  // Fraction of batches whose unification loss strictly drops after the step.
  double descent_rate = 0.0;
  double mean_relative_drop = 0.0;
};

struct AlphaTuning {
  std::vector<AlphaCandidate> candidates;
  double chosen = 0.0;
};

// Among the candidates that keep the flip rate within `max_flip_rate` and
// descend on at least `min_descent_rate` of the batches, picks the one with
// the largest mean relative loss drop (the smallest candidate if none
// qualifies).
AlphaTuning tune_alpha(const ClassifierModel& model, const Dataset& data,
                       const UniGConfig& base, const std::vector<double>& alphas,
                       std::size_t batch_size, std::uint64_t seed,
                       double max_flip_rate = 0.005,
                       double min_descent_rate = 0.95);

// Fixed report columns: model, defense, defense_params, attack, norm,
// epsilon, budget, seed, clean_acc, robust_acc, logit_diff, universality,
// wall_time_s.
std::string report_csv(const std::vector<EvalReport>& reports);
// Long-format sweep table: axis and value columns in front of the report
// columns.
std::string sweep_csv(const std::vector<EvalReport>& reports);
std::string report_json(const std::vector<EvalReport>& reports);
std::vector<EvalReport> parse_report_json(const std::string& text);
// One block per report: a comment header, then "query margin" lines.
std::string report_curves(const std::vector<EvalReport>& reports);

enum class ReportFormat { kCsv, kJson, kCurves };

// Writes one file; throws IoError if the path is unwritable.
void write_report(const std::vector<EvalReport>& reports, ReportFormat format,
                  const std::filesystem::path& path);

}  // namespace unig
