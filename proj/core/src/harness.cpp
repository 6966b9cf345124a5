// Evaluation orchestration: grid cells, sweeps and learning-rate tuning.

#include "unig/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "unig/error.hpp"
#include "unig/numerics.hpp"
#include "unig/unig.hpp"

namespace unig {
namespace {

constexpr std::uint64_t kCleanTag = 0xC1EA;
constexpr std::uint64_t kLogitTag = 0x1D1F;
constexpr std::uint64_t kOracleTag = 0xDEF0;
constexpr std::uint64_t kAttackTag = 0xA77C;

double constraint_violation(std::span<const double> adv,
                            std::span<const double> x, Norm norm, double eps) {
  double worst = std::max(0.0, distance(adv, x, norm) - eps);
  for (double v : adv) worst = std::max({worst, -v, v - 1.0});
  return worst;
}

struct CellSpec {
  const DefenseSpec* defense;
  const AttackConfig* attack;
  std::uint64_t seed;
};

std::vector<EvalReport> run_cell(const ClassifierModel& model,
                                 const CellSpec& cell, const Dataset& data,
                                 const EvalOptions& opts) {
  const auto started = std::chrono::steady_clock::now();
  const DefenseSpec& spec = *cell.defense;
  const AttackConfig& base = *cell.attack;
  const std::size_t batch = std::max<std::size_t>(opts.batch_size, 1);
  std::vector<std::size_t> budgets = opts.budgets;
  std::sort(budgets.begin(), budgets.end());
  const std::size_t max_budget = budgets.empty() ? 0 : budgets.back();

  // Clean predictions under the defense, one draw per batch.
  std::vector<std::size_t> attacked;
  for (std::size_t start = 0, chunk = 0; start < data.size();
       start += batch, ++chunk) {
    const std::size_t end = std::min(data.size(), start + batch);
    const Tensor logits =
        defended_logits(model, spec, data.images.slice_rows(start, end),
                        derive_seed(cell.seed, {kCleanTag, chunk}), opts.reservoir);
    const auto pred = argmax_rows(logits);
    for (std::size_t i = start; i < end; ++i) {
      if (static_cast<int>(pred[i - start]) == data.labels[i]) attacked.push_back(i);
    }
  }
  const double n = static_cast<double>(data.size());
  const double clean_acc = static_cast<double>(attacked.size()) / n;
  const double ldiff = logit_diff(model, spec, data,
                                  derive_seed(cell.seed, {kLogitTag}), batch,
                                  opts.reservoir);

  std::vector<ImageResult> results;
  results.reserve(attacked.size());
  std::uint64_t oracle_queries = 0;
  for (std::size_t start = 0, chunk = 0; start < attacked.size();
       start += batch, ++chunk) {
    const std::size_t end = std::min(attacked.size(), start + batch);
    const std::span<const std::size_t> idx(attacked.data() + start, end - start);
    const Dataset part = data.subset(idx);
    AttackConfig cfg = base;
    cfg.budget = max_budget;
    cfg.freeze = opts.freeze;
    cfg.seed = derive_seed(cell.seed, {kAttackTag, base.seed, chunk});
    if (cfg.targeted && !base.target_labels.empty()) {
      cfg.target_labels.clear();
      for (std::size_t i : idx) cfg.target_labels.push_back(base.target_labels.at(i));
    }
    auto oracle = make_oracle(model, spec,
                              derive_seed(cell.seed, {kOracleTag, chunk}),
                              opts.reservoir);
    AttackRun run = run_attack(*oracle, part.images, part.labels, cfg);
    oracle_queries += run.oracle_queries;
    for (auto& r : run.images) results.push_back(std::move(r));
  }

  // Final perturbations and constraint check.
  const std::size_t dim = data.images.row_size();
  Tensor perturb({results.size(), dim});
  double violation = 0.0;
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto x = data.images.row(attacked[k]);
    const auto adv = results[k].x_adv.data();
    violation = std::max(violation,
                         constraint_violation(adv, x, base.norm, base.epsilon));
    for (std::size_t j = 0; j < dim; ++j) perturb.at(k, j) = adv[j] - x[j];
  }
  double universality = std::numeric_limits<double>::quiet_NaN();
  try {
    universality = pairwise_cosine(perturb);
  } catch (const UndefinedMetricError&) {
  }

  const double elapsed =
      opts.wall_time ? std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - started)
                           .count()
                     : 0.0;

  auto robust_at = [&](std::size_t b) {
    std::size_t robust = 0;
    for (const auto& r : results) {
      if (r.success_query == 0 || r.success_query > b) ++robust;
    }
    return static_cast<double>(robust) / n;
  };

  std::vector<EvalReport> out;
  for (std::size_t b : budgets) {
    EvalReport rep;
    rep.model_id = opts.model_id;
    rep.defense = to_string(spec.kind);
    rep.defense_params = spec.params_string();
    rep.attack = to_string(base.kind);
    rep.norm = std::string(to_string(base.norm));
    rep.epsilon = base.epsilon;
    rep.budget = b;
    rep.seed = cell.seed;
    rep.clean_acc = clean_acc;
    rep.robust_acc = robust_at(b);
    rep.logit_diff = ldiff;
    rep.universality = universality;
    rep.wall_time_s = elapsed;
    rep.n_images = data.size();
    rep.n_attacked = results.size();
    rep.oracle_queries = oracle_queries;
    rep.max_constraint_violation = violation;
    for (const auto& r : results) {
      rep.max_image_queries = std::max(rep.max_image_queries, std::min(r.queries, b));
    }
    for (std::size_t c : base.checkpoints) {
      if (c == 0 || c > b) continue;
      rep.robust_curve.emplace_back(c, robust_at(c));
      if (results.empty()) continue;
      double sum = 0.0;
      for (const auto& r : results) {
        for (const auto& [q, m] : r.trace) {
          if (q == c) sum += m;
        }
      }
      rep.margin_curve.emplace_back(c, sum / static_cast<double>(results.size()));
    }
    out.push_back(std::move(rep));
  }
  return out;
}

Dataset limit(const Dataset& data, std::size_t max_images) {
  if (max_images == 0 || max_images >= data.size()) return data;
  return data.head(max_images);
}

}  // namespace

double defended_accuracy(const ClassifierModel& model, const DefenseSpec& spec,
                         const Dataset& data, std::uint64_t seed,
                         std::size_t batch_size, const Dataset* reservoir) {
  if (data.size() == 0) throw InputDomainError("defended_accuracy: empty dataset");
  if (batch_size == 0) batch_size = data.size();
  std::size_t correct = 0;
  for (std::size_t start = 0, chunk = 0; start < data.size();
       start += batch_size, ++chunk) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    const auto pred = argmax_rows(
        defended_logits(model, spec, data.images.slice_rows(start, end),
                        derive_seed(seed, {chunk}), reservoir));
    for (std::size_t i = start; i < end; ++i) {
      if (static_cast<int>(pred[i - start]) == data.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

EvalResult evaluate_grid(const ClassifierModel& model,
                         const std::vector<DefenseSpec>& defenses,
                         const std::vector<AttackConfig>& attacks,
                         const Dataset& data, const EvalOptions& opts) {
  data.validate();
  if (data.size() == 0) throw InputDomainError("evaluate: empty dataset");
  for (const auto& a : attacks) a.validate();
  const Dataset eval_data = limit(data, opts.max_images);

  std::vector<CellSpec> cells;
  for (const auto& d : defenses) {
    for (const auto& a : attacks) {
      for (std::uint64_t s : opts.seeds) cells.push_back({&d, &a, s});
    }
  }
  std::vector<std::vector<EvalReport>> slots(cells.size());
  std::vector<std::string> failures(cells.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        slots[i] = run_cell(model, cells[i], eval_data, opts);
      } catch (const std::exception& e) {
        failures[i] = e.what();
        if (failures[i].empty()) failures[i] = "unknown error";
      }
    }
  };
  std::size_t workers = opts.workers != 0
                            ? opts.workers
                            : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(cells.size(), 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  EvalResult result;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!failures[i].empty()) {
      result.errors.push_back({to_string(cells[i].defense->kind),
                               to_string(cells[i].attack->kind), cells[i].seed,
                               failures[i]});
      continue;
    }
    for (auto& r : slots[i]) result.reports.push_back(std::move(r));
  }
  return result;
}

std::vector<EvalReport> eval_defense(const ClassifierModel& model,
                                     const DefenseSpec& defense,
                                     const std::vector<AttackConfig>& attacks,
                                     const Dataset& data,
                                     const EvalOptions& opts) {
  EvalResult res = evaluate_grid(model, {defense}, attacks, data, opts);
  if (!res.errors.empty()) {
    const CellError& e = res.errors.front();
    throw Error("evaluation cell " + e.defense + "/" + e.attack + "/seed " +
                std::to_string(e.seed) + " failed: " + e.message);
  }
  return std::move(res.reports);
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kDelta: return "delta";
    case SweepAxis::kP: return "p";
    case SweepAxis::kAlpha: return "alpha";
    case SweepAxis::kBatchSize: return "batch_size";
    case SweepAxis::kSquareSize: return "square_size";
    case SweepAxis::kUpdateStep: return "update_step";
    case SweepAxis::kRndSigma: return "rnd_sigma";
  }
  return "?";
}

SweepAxis parse_sweep_axis(const std::string& text) {
  for (SweepAxis a : {SweepAxis::kDelta, SweepAxis::kP, SweepAxis::kAlpha,
                      SweepAxis::kBatchSize, SweepAxis::kSquareSize,
                      SweepAxis::kUpdateStep, SweepAxis::kRndSigma}) {
    if (to_string(a) == text) return a;
  }
  throw ConfigError("unknown sweep axis '" + text +
                    "' (delta|p|alpha|batch_size|square_size|update_step|rnd_sigma)");
}

void SweepSpec::validate() const {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (attacks.empty()) throw ConfigError("sweep needs at least one attack");
  for (double v : values) {
    if (!std::isfinite(v)) throw ConfigError("sweep values must be finite");
    const bool integral = axis == SweepAxis::kP || axis == SweepAxis::kBatchSize;
    if (integral && (v < 1.0 || v != std::floor(v))) {
      throw ConfigError("sweep axis " + to_string(axis) +
                        " takes positive integers");
    }
  }
}

EvalResult run_sweep(const ClassifierModel& model, const SweepSpec& spec,
                     const Dataset& data) {
  spec.validate();
  EvalResult all;
  for (double v : spec.values) {
    DefenseSpec defense = spec.defense;
    std::vector<AttackConfig> attacks = spec.attacks;
    EvalOptions opts = spec.options;
    switch (spec.axis) {
      case SweepAxis::kDelta: defense.unig.delta = v; break;
      case SweepAxis::kP: defense.unig.iterations = static_cast<int>(v); break;
      case SweepAxis::kAlpha: defense.unig.alpha = v; break;
      case SweepAxis::kBatchSize: opts.batch_size = static_cast<std::size_t>(v); break;
      case SweepAxis::kSquareSize:
        for (auto& a : attacks) a.square.p_init = v;
        break;
      case SweepAxis::kUpdateStep:
        for (auto& a : attacks) {
          a.nes.step = v;
          a.bandits.step = v;
        }
        break;
      case SweepAxis::kRndSigma: defense.rnd_sigma = v; break;
    }
    defense.unig.validate();
    EvalResult part = evaluate_grid(model, {defense}, attacks, data, opts);
    for (auto& r : part.reports) {
      r.axis = to_string(spec.axis);
      r.axis_value = v;
      all.reports.push_back(std::move(r));
    }
    for (auto& e : part.errors) all.errors.push_back(std::move(e));
  }
  return all;
}

AlphaTuning tune_alpha(const ClassifierModel& model, const Dataset& data,
                       const UniGConfig& base, const std::vector<double>& alphas,
                       std::size_t batch_size, std::uint64_t seed,
                       double max_flip_rate, double min_descent_rate) {
  if (alphas.empty()) throw ConfigError("tune_alpha needs candidates");
  if (data.size() == 0) throw InputDomainError("tune_alpha: empty dataset");
  if (batch_size < 2) throw ConfigError("tune_alpha needs batches of >= 2 images");
  const Tensor features = model.forward_features(data.images);
  const auto vanilla = argmax_rows(model.head_logits(features));

  AlphaTuning out;
  for (double alpha : alphas) {
    UniGConfig cfg = base;
    cfg.alpha = alpha;
    cfg.validate();
    AlphaCandidate cand;
    cand.alpha = alpha;
    std::size_t flips = 0, batches = 0, descents = 0;
    double drop = 0.0;
    for (std::size_t start = 0, chunk = 0; start + 2 <= data.size();
         start += batch_size, ++chunk) {
      const std::size_t end = std::min(data.size(), start + batch_size);
      if (end - start < 2) break;
      cfg.seed = derive_seed(seed, {chunk});
      const UniGOutput res =
          unig_forward_features(model, features.slice_rows(start, end), cfg);
      const auto pred = argmax_rows(res.logits);
      for (std::size_t i = start; i < end; ++i) {
        if (pred[i - start] != vanilla[i]) ++flips;
      }
      const auto& trace = res.state.trace;
      ++batches;
      if (trace.size() >= 2) {
        if (trace.back() < trace.front()) ++descents;
        if (trace.front() > 0.0) drop += (trace.front() - trace.back()) / trace.front();
      }
    }
    if (batches == 0) throw InputDomainError("tune_alpha: dataset too small");
    cand.flip_rate = static_cast<double>(flips) / static_cast<double>(data.size());
    cand.descent_rate = static_cast<double>(descents) / static_cast<double>(batches);
    cand.mean_relative_drop = drop / static_cast<double>(batches);
    out.candidates.push_back(cand);
  }
  out.chosen = *std::min_element(alphas.begin(), alphas.end());
  double best_drop = -std::numeric_limits<double>::infinity();
  for (const auto& c : out.candidates) {
    if (c.flip_rate <= max_flip_rate && c.descent_rate >= min_descent_rate &&
        c.mean_relative_drop > best_drop) {
      best_drop = c.mean_relative_drop;
      out.chosen = c.alpha;
    }
  }
  return out;
}

}  // namespace unig
