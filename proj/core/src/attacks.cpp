#include "unig/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unig/error.hpp"

namespace unig {

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kSquare: return "square";
    case AttackKind::kSimBA: return "simba";
    case AttackKind::kSignHunter: return "signhunter";
    case AttackKind::kNes: return "nes";
    case AttackKind::kBandits: return "bandits";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& text) {
  if (text == "square") return AttackKind::kSquare;
  if (text == "simba") return AttackKind::kSimBA;
  if (text == "signhunter" || text == "sign") return AttackKind::kSignHunter;
  if (text == "nes") return AttackKind::kNes;
  if (text == "bandits") return AttackKind::kBandits;
  throw ConfigError("unknown attack '" + text +
                    "' (square|simba|signhunter|nes|bandits)");
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("attack epsilon must be positive");
  }
  if (square.p_init <= 0.0 || square.p_init > 1.0) {
    throw ConfigError("square p_init must lie in (0, 1]");
  }
  if (simba.step < 0.0) throw ConfigError("simba step must be >= 0");
  if (nes.samples == 0) throw ConfigError("nes samples must be >= 1");
  if (!(nes.sigma > 0.0)) throw ConfigError("nes sigma must be positive");
  if (nes.step < 0.0) throw ConfigError("nes step must be >= 0");
  if (bandits.prior_lr < 0.0) throw ConfigError("bandits prior_lr must be >= 0");
  if (!(bandits.exploration > 0.0)) {
    throw ConfigError("bandits exploration must be positive");
  }
  if (!(bandits.fd_eta > 0.0)) throw ConfigError("bandits fd_eta must be positive");
  if (bandits.step < 0.0) throw ConfigError("bandits step must be >= 0");
  if (!std::is_sorted(checkpoints.begin(), checkpoints.end())) {
    throw ConfigError("attack checkpoints must be sorted");
  }
}

double margin_loss_row(std::span<const double> probs, int label,
                       bool targeted) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw InputDomainError("margin_loss: label " + std::to_string(label) +
                           " outside [0, " + std::to_string(probs.size()) + ")");
  }
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (static_cast<int>(j) != label) other = std::max(other, probs[j]);
  }
  if (probs.size() == 1) other = 0.0;
  const double own = probs[static_cast<std::size_t>(label)];
  return targeted ? other - own : own - other;
}

std::vector<double> margin_loss(const Tensor& probs, std::span<const int> labels,
                                bool targeted) {
  if (probs.rank() != 2 || probs.rows() != labels.size()) {
    throw InputDomainError("margin_loss: " + probs.shape_string() + " vs " +
                           std::to_string(labels.size()) + " labels");
  }
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = margin_loss_row(probs.row(i), labels[i], targeted);
  }
  return out;
}

namespace {

struct Slot {
  std::unique_ptr<ImageAttack> strategy;
  std::vector<double> best_x;
  double best_margin = std::numeric_limits<double>::infinity();
  std::size_t queries = 0;
  std::size_t success_query = 0;
  bool done = false;
  std::vector<double> history;  // best margin after each query
};

void record(Slot& s, std::span<const double> x, double margin) {
  ++s.queries;
  if (margin < s.best_margin) {
    s.best_margin = margin;
    s.best_x.assign(x.begin(), x.end());
  }
  s.history.push_back(s.best_margin);
  if (s.best_margin <= 0.0 && s.success_query == 0) s.success_query = s.queries;
}

}  // namespace

AttackRun run_attack(QueryOracle& oracle, const Tensor& x,
                     std::span<const int> labels, const AttackConfig& cfg) {
  cfg.validate();
  if (x.rank() != 4) {
    throw InputDomainError("run_attack: expected [b x c x h x w], got " +
                           x.shape_string());
  }
  const std::size_t n = x.rows();
  if (n == 0) throw InputDomainError("run_attack: empty batch");
  if (labels.size() != n) {
    throw InputDomainError("run_attack: label count does not match batch");
  }
  std::vector<int> scored(labels.begin(), labels.end());
  if (cfg.targeted) {
    if (cfg.target_labels.size() != n) {
      throw ConfigError("targeted attack needs one target label per image");
    }
    scored = cfg.target_labels;
  }
  const ImageGeometry geom{x.dim(1), x.dim(2), x.dim(3)};
  const std::uint64_t before_queries = oracle.query_count();
  const std::uint64_t before_calls = oracle.call_count();

  std::vector<Slot> slots(n);
  for (std::size_t i = 0; i < n; ++i) {
    slots[i].strategy =
        make_image_attack(cfg, x.row(i), geom, derive_seed(cfg.seed, {i}));
    slots[i].best_x.assign(x.row(i).begin(), x.row(i).end());
    slots[i].done = cfg.budget == 0;
  }

  const std::size_t row = geom.size();
  auto still_running = [&](const Slot& s) {
    return !s.done && s.queries < cfg.budget && s.success_query == 0;
  };

  if (cfg.budget > 0) {
    const QueryResult res = oracle.query(x);
    const auto m = margin_loss(res.probs, scored, cfg.targeted);
    for (std::size_t i = 0; i < n; ++i) {
      record(slots[i], x.row(i), m[i]);
      slots[i].strategy->start(m[i]);
    }
  }

  std::vector<std::size_t> members;
  std::vector<const std::vector<double>*> proposals(n);
  for (;;) {
    members.clear();
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      Slot& s = slots[i];
      proposals[i] = nullptr;
      if (still_running(s)) {
        const auto& cand = s.strategy->propose();
        if (s.strategy->exhausted()) {
          s.done = true;
        } else {
          proposals[i] = &cand;
          any = true;
        }
      }
      if (proposals[i] != nullptr || cfg.freeze) members.push_back(i);
    }
    if (!any) break;

    Tensor batch({members.size(), geom.channels, geom.height, geom.width});
    std::vector<int> batch_labels(members.size());
    for (std::size_t k = 0; k < members.size(); ++k) {
      const std::size_t i = members[k];
      const std::vector<double>& src =
          proposals[i] != nullptr ? *proposals[i] : slots[i].best_x;
      std::copy_n(src.begin(), row, batch.row(k).begin());
      batch_labels[k] = scored[i];
    }
    const QueryResult res = oracle.query(batch);
    const auto m = margin_loss(res.probs, batch_labels, cfg.targeted);
    for (std::size_t k = 0; k < members.size(); ++k) {
      const std::size_t i = members[k];
      if (proposals[i] == nullptr) continue;
      record(slots[i], batch.row(k), m[k]);
      slots[i].strategy->observe(m[k]);
    }
  }

  AttackRun run;
  run.images.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Slot& s = slots[i];
    ImageResult& r = run.images[i];
    r.x_adv = Tensor({geom.channels, geom.height, geom.width}, std::move(s.best_x));
    r.best_margin = s.best_margin;
    r.queries = s.queries;
    r.success_query = s.success_query;
    r.success = s.success_query != 0;
    for (std::size_t c : cfg.checkpoints) {
      if (c == 0 || c > cfg.budget || s.history.empty()) continue;
      r.trace.emplace_back(c, s.history[std::min(c, s.history.size()) - 1]);
    }
  }
  run.oracle_queries = oracle.query_count() - before_queries;
  run.oracle_calls = oracle.call_count() - before_calls;
  return run;
}

namespace {

AttackRun run_kind(AttackKind kind, QueryOracle& oracle, const Tensor& x,
                   std::span<const int> labels, const AttackConfig& cfg) {
  if (cfg.kind != kind) {
    throw ConfigError("attack config kind is " + to_string(cfg.kind) +
                      ", expected " + to_string(kind));
  }
  return run_attack(oracle, x, labels, cfg);
}

}  // namespace

AttackRun square_attack(QueryOracle& oracle, const Tensor& x,
                        std::span<const int> labels, const AttackConfig& cfg) {
  return run_kind(AttackKind::kSquare, oracle, x, labels, cfg);
}
AttackRun simba_attack(QueryOracle& oracle, const Tensor& x,
                       std::span<const int> labels, const AttackConfig& cfg) {
  return run_kind(AttackKind::kSimBA, oracle, x, labels, cfg);
}
AttackRun signhunter_attack(QueryOracle& oracle, const Tensor& x,
                            std::span<const int> labels, const AttackConfig& cfg) {
  return run_kind(AttackKind::kSignHunter, oracle, x, labels, cfg);
}
AttackRun nes_attack(QueryOracle& oracle, const Tensor& x,
                     std::span<const int> labels, const AttackConfig& cfg) {
  return run_kind(AttackKind::kNes, oracle, x, labels, cfg);
}
AttackRun bandits_attack(QueryOracle& oracle, const Tensor& x,
                         std::span<const int> labels, const AttackConfig& cfg) {
  return run_kind(AttackKind::kBandits, oracle, x, labels, cfg);
}

}  // namespace unig
