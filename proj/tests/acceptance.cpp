// Acceptance suite: trains the desk model in-process, runs the shared attack
// grids once and prints one PASS/FAIL line per criterion. Exit status is
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "unig/harness.hpp"
#include "unig/rng.hpp"
#include "unig/unig.hpp"

using namespace unig;

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kTestImages = 256;
const std::vector<std::uint64_t> kSeeds{0, 1, 2};

int failures = 0;

void verdict(int id, bool pass, const std::string& detail, Clock::time_point t0) {
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  std::printf("criterion %2d: %s  %s  [%.1fs]\n", id, pass ? "PASS" : "FAIL",
              detail.c_str(), secs);
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Reports of one (defense, attack, budget) across seeds, in seed order.
std::vector<const EvalReport*> pick(const std::vector<EvalReport>& reps,
                                    const std::string& defense,
                                    const std::string& attack, std::size_t budget) {
  std::vector<const EvalReport*> out;
  for (const auto& r : reps) {
    if (r.defense == defense && r.attack == attack && r.budget == budget) out.push_back(&r);
  }
  return out;
}

double mean_of(const std::vector<const EvalReport*>& rs, double EvalReport::*field) {
  double s = 0;
  for (const auto* r : rs) s += r->*field;
  return rs.empty() ? NAN : s / static_cast<double>(rs.size());
}

double margin_at(const EvalReport& r, std::size_t q) {
  for (const auto& [c, m] : r.margin_curve) if (c == q) return m;
  return NAN;
}

AttackConfig attack(AttackKind kind) {
  AttackConfig a;
  a.kind = kind;
  a.norm = Norm::kLinf;
  a.epsilon = 0.15;
  return a;
}

EvalOptions options(std::vector<std::size_t> budgets) {
  EvalOptions o;
  o.budgets = std::move(budgets);
  o.seeds = kSeeds;
  o.batch_size = 128;
  o.workers = 0;
  o.model_id = "desk";
  return o;
}

// ---- criterion 1 ---------------------------------------------------------

void gradient_check() {
  const auto t0 = Clock::now();
  RngStream rng(20240101);
  int checked = 0, skipped = 0;
  double worst = 0;
  while (checked < 25) {
    const std::size_t b = 4, d = 8, k = 5;
    oracle::Mat W(k, oracle::Vec(d)), F(b, oracle::Vec(d)), A(b, oracle::Vec(d));
    oracle::Vec bias(k);
    for (auto& r : W) for (auto& v : r) v = rng.normal(0, 0.7);
    for (auto& v : bias) v = rng.normal(0, 0.3);
    for (auto& r : F) for (auto& v : r) v = rng.uniform(0, 2);
    for (auto& r : A) for (auto& v : r) v = std::clamp(rng.normal(1, 0.5), 0.5, 1.5);
    if (oracle::extreme_gap(W, bias, F, A) < 1e-3) {
      ++skipped;
      continue;
    }
    Layer head;
    head.out = k;
    head.in = d;
    for (const auto& r : W) head.weights.insert(head.weights.end(), r.begin(), r.end());
    head.bias = bias;
    const ClassifierModel m({1, 1, d}, {}, head);
    Tensor At(Shape{b, d}), Ft(Shape{b, d});
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        At.at(i, j) = A[i][j];
        Ft.at(i, j) = F[i][j];
      }
    }
    const Tensor g = grad_loss_wrt_A(m, At, feature_gradients(m, Ft, At), 1e-12);
    const oracle::Mat fd = oracle::fd_grad(W, bias, F, A, 1e-12, 1e-4);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        num = std::max(num, std::abs(g.at(i, j) - fd[i][j]));
        den = std::max(den, std::abs(fd[i][j]));
      }
    }
    worst = std::max(worst, num / den);
    ++checked;
  }
  verdict(1, worst <= 1e-4,
          "max rel err " + fmt("%.2e", worst) + " over " + std::to_string(checked) +
              " instances (" + std::to_string(skipped) + " ties skipped)",
          t0);
}

// ---- criterion 2 ---------------------------------------------------------

void identity_cases(const ClassifierModel& model, const Dataset& test, double alpha) {
  const auto t0 = Clock::now();
  const Tensor x = test.images;
  const Tensor vanilla = model.forward_probs(x);

  UniGConfig zero_delta;
  zero_delta.delta = 0.0;
  zero_delta.alpha = alpha;
  const UniGOutput z = unig_forward(model, x, zero_delta);
  double dev = 0;
  for (std::size_t i = 0; i < vanilla.size(); ++i) dev = std::max(dev, std::abs(z.probs[i] - vanilla[i]));

  UniGConfig zero_alpha;
  zero_alpha.alpha = 0.0;
  zero_alpha.iterations = 3;
  zero_alpha.seed = 5;
  const UniGOutput a = unig_forward(model, x, zero_alpha);
  const bool a_fixed = a.state.A == init_A(x.rows(), model.feature_dim(), 0.5, 5);

  double clip_excess = -INFINITY;
  for (double delta : {0.05, 0.1, 0.3, 0.5, 0.7}) {
    for (double step : {alpha, 10.0, 1e3}) {
      for (std::uint64_t s = 0; s < 3; ++s) {
        UniGConfig c;
        c.delta = delta;
        c.alpha = step;
        c.iterations = 2;
        c.seed = s;
        const UniGOutput o = unig_forward(model, x, c);
        for (double v : o.state.A.values()) clip_excess = std::max(clip_excess, std::abs(v - 1.0) - delta);
      }
    }
  }
  verdict(2, dev <= 1e-6 && a_fixed && clip_excess <= 0.0,
          "delta=0 max|p - p_vanilla| " + fmt("%.1e", dev) + ", alpha=0 A unchanged " +
              (a_fixed ? "yes" : "no") + ", max(|A-1| - delta) " + fmt("%.1e", clip_excess),
          t0);
}

// ---- criterion 3 ---------------------------------------------------------

void loss_descent(const ClassifierModel& model, double alpha) {
  const auto t0 = Clock::now();
  const Dataset pool = gen_synthetic_dataset(4, 2048, 16, 555);
  const Tensor features = model.forward_features(pool.images);
  RngStream rng(31);
  int descended = 0;
  const int batches = 100;
  for (int t = 0; t < batches; ++t) {
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(128);
    UniGConfig c;
    c.alpha = alpha;
    c.seed = static_cast<std::uint64_t>(t);
    const UniGOutput o = unig_forward_features(model, features.gather_rows(idx), c);
    descended += o.state.trace.back() < o.state.trace.front();
  }
  const double rate = descended / static_cast<double>(batches);
  verdict(3, rate >= 0.95, "descent on " + fmt("%.0f", rate * 100) + "% of 100 batches (b=128)", t0);
}

// ---- criterion 4 ---------------------------------------------------------

void clean_preservation(const ClassifierModel& model, const Dataset& test,
                        double heldout, const DefenseSpec& unig) {
  const auto t0 = Clock::now();
  const double vanilla = accuracy(model, test);
  double defended = 0;
  for (std::uint64_t s : kSeeds) defended += defended_accuracy(model, unig, test, s, 128);
  defended /= kSeeds.size();
  const double loss_pts = (vanilla - defended) * 100;
  verdict(4, heldout >= 0.97 && loss_pts <= 1.0,
          "held-out " + fmt("%.4f", heldout) + ", vanilla " + fmt("%.4f", vanilla) +
              ", unig " + fmt("%.4f", defended) + " (loss " + fmt("%.2f", loss_pts) + " pts)",
          t0);
}

// ---- criterion 5 ---------------------------------------------------------

void potency(const EvalResult& grid) {
  const auto t0 = Clock::now();
  bool pass = grid.errors.empty();
  std::string detail;
  for (const char* a : {"square", "simba", "signhunter", "nes", "bandits"}) {
    const auto rs = pick(grid.reports, "vanilla", a, 2500);
    const double clean = mean_of(rs, &EvalReport::clean_acc);
    const double robust = mean_of(rs, &EvalReport::robust_acc);
    const double drop = (clean - robust) * 100;
    pass = pass && rs.size() == kSeeds.size() && drop >= 30.0;
    if (std::string(a) == "square") pass = pass && robust <= 0.25;
    detail += std::string(a) + " " + fmt("%.1f%%", robust * 100) + " (-" + fmt("%.1f", drop) + ") ";
  }
  verdict(5, pass, detail + "at 2500 queries", t0);
}

// ---- criteria 6, 7, 8 ----------------------------------------------------

void robustness_gain(const EvalResult& grid) {
  const auto t0 = Clock::now();
  bool pass = grid.errors.empty();
  std::string detail;
  for (const char* a : {"square", "simba"}) {
    const double v = mean_of(pick(grid.reports, "vanilla", a, 1000), &EvalReport::robust_acc);
    const double u = mean_of(pick(grid.reports, "unig", a, 1000), &EvalReport::robust_acc);
    const double r = mean_of(pick(grid.reports, "rnd", a, 1000), &EvalReport::robust_acc);
    pass = pass && (u - v) * 100 >= 15.0;
    if (std::string(a) == "square") pass = pass && u > r;
    detail += std::string(a) + ": unig " + fmt("%.1f", u * 100) + " rnd " + fmt("%.1f", r * 100) +
              " vanilla " + fmt("%.1f", v * 100) + "; ";
  }
  verdict(6, pass, detail + "budget 1000", t0);
}

void universality(const EvalResult& grid) {
  const auto t0 = Clock::now();
  const auto u = pick(grid.reports, "unig", "square", 1000);
  const auto v = pick(grid.reports, "vanilla", "square", 1000);
  bool pass = u.size() == kSeeds.size() && v.size() == kSeeds.size();
  std::string detail;
  for (std::size_t i = 0; i < std::min(u.size(), v.size()); ++i) {
    const double ratio = u[i]->universality / v[i]->universality;
    pass = pass && u[i]->universality > v[i]->universality;
    detail += "seed " + std::to_string(u[i]->seed) + ": " + fmt("%.4f", u[i]->universality) +
              " vs " + fmt("%.4f", v[i]->universality) + " (ratio " + fmt("%.2f", ratio) + "); ";
  }
  verdict(7, pass, detail, t0);
}

void margin_ordering(const EvalResult& grid) {
  const auto t0 = Clock::now();
  const auto u = pick(grid.reports, "unig", "square", 1000);
  const auto r = pick(grid.reports, "rnd", "square", 1000);
  const auto v = pick(grid.reports, "vanilla", "square", 1000);
  int ordered = 0;
  std::string detail;
  for (std::size_t i = 0; i < std::min({u.size(), r.size(), v.size()}); ++i) {
    const double mu = margin_at(*u[i], 1000), mr = margin_at(*r[i], 1000), mv = margin_at(*v[i], 1000);
    ordered += mu > mr && mr > mv;
    detail += "seed " + std::to_string(u[i]->seed) + ": " + fmt("%.3f", mu) + " > " +
              fmt("%.3f", mr) + " > " + fmt("%.3f", mv) + "; ";
  }
  verdict(8, ordered >= 2, detail + std::to_string(ordered) + "/3 ordered", t0);
}

// ---- criterion 9 ---------------------------------------------------------

void sweeps(const ClassifierModel& model, const Dataset& test, const DefenseSpec& unig,
            std::vector<EvalReport>& all) {
  const auto t0 = Clock::now();
  SweepSpec delta;
  delta.axis = SweepAxis::kDelta;
  delta.values = {0.1, 0.3, 0.5};
  delta.defense = unig;
  AttackConfig none = attack(AttackKind::kSquare);
  none.budget = 0;
  delta.attacks = {none};
  delta.options = options({0});
  const EvalResult d = run_sweep(model, delta, test);

  SweepSpec size;
  size.axis = SweepAxis::kSquareSize;
  size.values = {0.05, 0.1, 0.2, 0.3};
  size.defense = unig;
  size.attacks = {attack(AttackKind::kSquare)};
  size.options = options({1000});
  const EvalResult s = run_sweep(model, size, test);

  auto mean_at = [](const EvalResult& r, double value, double EvalReport::*field) {
    double acc = 0;
    int n = 0;
    for (const auto& rep : r.reports) {
      if (rep.axis_value == value) {
        acc += rep.*field;
        ++n;
      }
    }
    return n ? acc / n : NAN;
  };
  std::vector<double> ld;
  for (double v : delta.values) ld.push_back(mean_at(d, v, &EvalReport::logit_diff));
  const bool monotone = std::is_sorted(ld.begin(), ld.end());
  const double first = mean_at(s, 0.05, &EvalReport::robust_acc);
  const double last = mean_at(s, 0.3, &EvalReport::robust_acc);
  const double drop = (first - last) * 100;
  std::string trail;
  for (double v : size.values) trail += fmt("%.1f ", mean_at(s, v, &EvalReport::robust_acc) * 100);
  verdict(9, d.errors.empty() && s.errors.empty() && monotone && drop < 15.0,
          "logit_diff " + fmt("%.3f", ld[0]) + " / " + fmt("%.3f", ld[1]) + " / " +
              fmt("%.3f", ld[2]) + "; unig square robust by size: " + trail + "(drop " +
              fmt("%.1f", drop) + " pts)",
          t0);
  all.insert(all.end(), d.reports.begin(), d.reports.end());
  all.insert(all.end(), s.reports.begin(), s.reports.end());
}

// ---- criterion 10 --------------------------------------------------------

void single_sample(const ClassifierModel& model, const Dataset& test,
                   const Dataset& reservoir, const DefenseSpec& unig,
                   std::vector<EvalReport>& all) {
  const auto t0 = Clock::now();
  DefenseSpec cascade = unig;
  cascade.unig.cascade_k = 10;
  double batch_clean = 0, cascade_clean = 0;
  for (std::uint64_t s : kSeeds) {
    batch_clean += defended_accuracy(model, unig, test, s, 128);
    cascade_clean += defended_accuracy(model, cascade, test, s, 128, &reservoir);
  }
  batch_clean /= kSeeds.size();
  cascade_clean /= kSeeds.size();

  EvalOptions o = options({100});
  o.reservoir = &reservoir;
  AttackConfig sq = attack(AttackKind::kSquare);
  const EvalResult r = evaluate_grid(model, {DefenseSpec{}, cascade}, {sq}, test, o);
  const double v = mean_of(pick(r.reports, "vanilla", "square", 100), &EvalReport::robust_acc);
  const double c = mean_of(pick(r.reports, "unig", "square", 100), &EvalReport::robust_acc);
  const double clean_gap = std::abs(batch_clean - cascade_clean) * 100;
  verdict(10, r.errors.empty() && clean_gap <= 1.0 && (c - v) * 100 >= 10.0,
          "clean batch " + fmt("%.4f", batch_clean) + " vs cascade " + fmt("%.4f", cascade_clean) +
              "; square@100 robust cascade " + fmt("%.1f", c * 100) + " vs vanilla " +
              fmt("%.1f", v * 100),
          t0);
  all.insert(all.end(), r.reports.begin(), r.reports.end());
}

// ---- criterion 11 --------------------------------------------------------

void bookkeeping(const ClassifierModel& model, const Dataset& test, const DefenseSpec& unig,
                 const std::vector<EvalReport>& all, const EvalResult& gain) {
  const auto t0 = Clock::now();
  std::size_t over = 0;
  double violation = 0;
  for (const auto& r : all) {
    over += r.max_image_queries > r.budget;
    violation = std::max(violation, r.max_constraint_violation);
  }
  // Re-run a slice of the gain grid and compare bytes.
  DefenseSpec rnd;
  rnd.kind = DefenseKind::kRnd;
  EvalOptions o = options({100, 1000});
  o.seeds = {0};
  const EvalResult again =
      evaluate_grid(model, {rnd, unig}, {attack(AttackKind::kSquare)}, test, o);
  std::vector<EvalReport> original;
  for (const auto& r : gain.reports) {
    if ((r.defense == "rnd" || r.defense == "unig") && r.attack == "square" && r.seed == 0) {
      original.push_back(r);
    }
  }
  const bool same = report_csv(original) == report_csv(again.reports) &&
                    report_json(original) == report_json(again.reports);
  verdict(11, same && over == 0 && violation <= 1e-6,
          std::string("rerun bytes ") + (same ? "identical" : "DIFFER") + ", over-budget images " +
              std::to_string(over) + ", max constraint violation " + fmt("%.1e", violation) +
              " across " + std::to_string(all.size()) + " reports",
          t0);
}

}  // namespace

int main() {
  const auto start = Clock::now();
  gradient_check();

  // Desk model and data, matching the CLI defaults.
  const Dataset train = gen_synthetic_dataset(4, 4000, 16, 7);
  const Dataset test = gen_synthetic_dataset(4, kTestImages, 16, 99);
  const Dataset reservoir = gen_synthetic_dataset(4, 256, 16, 1234);
  const TrainResult trained = train_classifier(train, ArchConfig{}, TrainConfig{});
  const ClassifierModel& model = trained.model;

  const AlphaTuning tuning =
      tune_alpha(model, reservoir, UniGConfig{}, {0.01, 0.03, 0.1, 0.3, 1, 3, 10}, 128, 0);
  std::printf("desk model: held-out %.4f, %zu parameters; tuned alpha %g\n",
              trained.heldout_accuracy, model.parameter_count(), tuning.chosen);
  DefenseSpec unig;
  unig.kind = DefenseKind::kUniG;
  unig.unig.alpha = tuning.chosen;
  DefenseSpec rnd;
  rnd.kind = DefenseKind::kRnd;
  rnd.rnd_sigma = 0.02;

  identity_cases(model, test, tuning.chosen);
  loss_descent(model, tuning.chosen);
  clean_preservation(model, test, trained.heldout_accuracy, unig);

  std::vector<EvalReport> all;
  const EvalResult pot = evaluate_grid(
      model, {DefenseSpec{}},
      {attack(AttackKind::kSquare), attack(AttackKind::kSimBA), attack(AttackKind::kSignHunter),
       attack(AttackKind::kNes), attack(AttackKind::kBandits)},
      test, options({100, 2500}));
  potency(pot);
  all.insert(all.end(), pot.reports.begin(), pot.reports.end());

  const EvalResult gain =
      evaluate_grid(model, {DefenseSpec{}, rnd, unig},
                    {attack(AttackKind::kSquare), attack(AttackKind::kSimBA)}, test,
                    options({100, 1000}));
  robustness_gain(gain);
  universality(gain);
  margin_ordering(gain);
  all.insert(all.end(), gain.reports.begin(), gain.reports.end());

  sweeps(model, test, unig, all);
  single_sample(model, test, reservoir, unig, all);
  bookkeeping(model, test, unig, all, gain);

  std::printf("total %.1fs, %d failing\n",
              std::chrono::duration<double>(Clock::now() - start).count(), failures);
  return failures == 0 ? 0 : 1;
}
