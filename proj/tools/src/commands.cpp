#include "commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "unig/error.hpp"

namespace unig::cli {
namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::string hex(std::uint64_t v, int digits) {
  std::ostringstream os;
  os << std::hex << std::setw(digits) << std::setfill('0')
     << (v >> (64 - 4 * digits));
  return os.str();
}

std::string shortest(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the short form when it round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char probe[32];
    std::snprintf(probe, sizeof probe, "%.*g", prec, v);
    if (std::strtod(probe, nullptr) == v) return probe;
  }
  return buf;
}

std::size_t positive(const Config& cfg, const std::string& key) {
  const std::size_t v = cfg.count(key);
  if (v == 0) throw ConfigError(key + ": must be >= 1");
  return v;
}

void write_eval_outputs(const fs::path& dir, const Config& cfg,
                        const std::vector<EvalReport>& reports) {
  write_text(dir / "config.resolved", cfg.resolved());
  if (reports.empty()) return;
  write_report(reports, ReportFormat::kCsv, dir / "report.csv");
  write_report(reports, ReportFormat::kJson, dir / "report.json");
  write_report(reports, ReportFormat::kCurves, dir / "curves.txt");
}

int report_errors(const std::vector<CellError>& errors, const fs::path& dir,
                  std::ostream& err) {
  if (errors.empty()) return kExitOk;
  std::ostringstream table;
  table << std::left << std::setw(10) << "defense" << std::setw(12) << "attack"
        << std::setw(8) << "seed" << "error\n";
  for (const auto& e : errors) {
    table << std::setw(10) << e.defense << std::setw(12) << e.attack
          << std::setw(8) << e.seed << e.message << "\n";
  }
  err << errors.size() << " evaluation cell(s) failed:\n" << table.str();
  write_text(dir / "errors.txt", table.str());
  return kExitCellErrors;
}

ClassifierModel load_configured_model(const Config& cfg) {
  const std::string& path = cfg.str("model.path");
  if (path.empty()) throw ConfigError("model.path is not set");
  return load_model(path);
}

}  // namespace

Config resolve_config(const GlobalFlags& flags,
                      const std::vector<std::string>& dotted) {
  Config cfg = Config::defaults();
  if (flags.config) cfg.merge_file(*flags.config);
  if (flags.seed) {
    cfg.set("model.seed", std::to_string(*flags.seed));
    cfg.set("eval.seeds", std::to_string(*flags.seed));
  }
  if (flags.out) cfg.set("out.dir", *flags.out);
  if (flags.workers) cfg.set("eval.workers", std::to_string(*flags.workers));
  if (flags.axis) cfg.set("sweep.axis", *flags.axis);
  if (flags.values) cfg.set("sweep.values", *flags.values);
  if (flags.seeds) cfg.set("eval.seeds", *flags.seeds);
  if (flags.input) cfg.set("report.input", *flags.input);
  apply_dotted_flags(cfg, dotted);
  if (const char* env = std::getenv("UNIG_OUT"); env != nullptr && *env != '\0') {
    cfg.set("out.dir", env);
  }
  return cfg;
}

ArchConfig arch_from(const Config& cfg) {
  ArchConfig a;
  a.conv_channels.clear();
  for (auto c : cfg.counts("model.conv_channels")) {
    a.conv_channels.push_back(static_cast<std::size_t>(c));
  }
  a.kernel = positive(cfg, "model.kernel");
  a.stride = positive(cfg, "model.stride");
  a.features = cfg.count("model.features");
  a.target_accuracy = cfg.real("model.target_accuracy");
  return a;
}

TrainConfig train_from(const Config& cfg) {
  TrainConfig t;
  t.seed = static_cast<std::uint64_t>(cfg.integer("model.seed"));
  t.epochs = cfg.count("model.epochs");
  t.learning_rate = cfg.real("model.lr");
  t.momentum = cfg.real("model.momentum");
  t.batch_size = positive(cfg, "model.batch_size");
  t.holdout_fraction = cfg.real("model.holdout");
  return t;
}

UniGConfig unig_from(const Config& cfg) {
  UniGConfig u;
  u.delta = cfg.real("defense.delta");
  u.iterations = static_cast<int>(cfg.integer("defense.p"));
  if (cfg.str("defense.alpha") != "auto") u.alpha = cfg.real("defense.alpha");
  u.eps_norm = cfg.real("defense.eps_norm");
  u.cascade_k = cfg.count("defense.cascade_k");
  u.frozen_softmax = cfg.flag("defense.frozen_softmax");
  u.validate();
  return u;
}

DefenseSpec defense_from(const Config& cfg, DefenseKind kind) {
  DefenseSpec d;
  d.kind = kind;
  d.rnd_sigma = cfg.real("defense.rnd_sigma");
  if (d.rnd_sigma < 0.0) throw ConfigError("defense.rnd_sigma must be >= 0");
  d.unig = unig_from(cfg);
  return d;
}

std::vector<DefenseSpec> defenses_from(const Config& cfg) {
  std::vector<DefenseSpec> out;
  for (const auto& k : cfg.list("defense.kinds")) {
    out.push_back(defense_from(cfg, parse_defense_kind(k)));
  }
  if (out.empty()) throw ConfigError("defense.kinds is empty");
  return out;
}

std::vector<AttackConfig> attacks_from(const Config& cfg) {
  AttackConfig base;
  base.norm = parse_norm(cfg.str("attack.norm"));
  base.epsilon = cfg.real("attack.epsilon");
  base.seed = static_cast<std::uint64_t>(cfg.integer("attack.seed"));
  base.freeze = cfg.flag("attack.freeze");
  base.square.p_init = cfg.real("attack.square.p_init");
  base.simba.step = cfg.real("attack.simba.step");
  base.nes.samples = positive(cfg, "attack.nes.samples");
  base.nes.sigma = cfg.real("attack.nes.sigma");
  base.nes.step = cfg.real("attack.nes.step");
  base.bandits.prior_lr = cfg.real("attack.bandits.prior_lr");
  base.bandits.exploration = cfg.real("attack.bandits.exploration");
  base.bandits.tile = cfg.count("attack.bandits.tile");
  base.bandits.fd_eta = cfg.real("attack.bandits.fd_eta");
  base.bandits.step = cfg.real("attack.bandits.step");
  std::vector<AttackConfig> out;
  for (const auto& k : cfg.list("attack.kinds")) {
    AttackConfig a = base;
    a.kind = parse_attack_kind(k);
    a.validate();
    out.push_back(a);
  }
  if (out.empty()) throw ConfigError("attack.kinds is empty");
  return out;
}

EvalOptions eval_from(const Config& cfg) {
  EvalOptions o;
  o.budgets.clear();
  for (auto b : cfg.counts("eval.budgets")) o.budgets.push_back(b);
  if (o.budgets.empty()) throw ConfigError("eval.budgets is empty");
  o.seeds = cfg.counts("eval.seeds");
  if (o.seeds.empty()) throw ConfigError("eval.seeds is empty");
  o.batch_size = positive(cfg, "eval.batch_size");
  o.max_images = cfg.count("eval.max_images");
  o.workers = cfg.count("eval.workers");
  o.wall_time = cfg.flag("out.wall_time");
  o.freeze = cfg.flag("attack.freeze");
  o.model_id = fs::path(cfg.str("model.path")).stem().string();
  if (o.model_id.empty()) o.model_id = "model";
  return o;
}

Dataset train_data(const Config& cfg) {
  const std::string& source = cfg.str("data.source");
  if (source == "synthetic") {
    return gen_synthetic_dataset(cfg.count("data.classes"),
                                 cfg.count("data.train_size"),
                                 cfg.count("data.side"),
                                 static_cast<std::uint64_t>(cfg.integer("data.train_seed")));
  }
  if (source == "idx") {
    return load_idx_dataset(cfg.str("data.train_images"),
                            cfg.str("data.train_labels"));
  }
  throw ConfigError("data.source must be synthetic or idx, got '" + source + "'");
}

Dataset test_data(const Config& cfg) {
  const std::string& source = cfg.str("data.source");
  if (source == "synthetic") {
    return gen_synthetic_dataset(cfg.count("data.classes"),
                                 cfg.count("data.test_size"),
                                 cfg.count("data.side"),
                                 static_cast<std::uint64_t>(cfg.integer("data.test_seed")));
  }
  if (source == "idx") {
    Dataset d = load_idx_dataset(cfg.str("data.test_images"),
                                 cfg.str("data.test_labels"));
    const std::size_t cap = cfg.count("data.test_size");
    return cap == 0 ? d : d.head(cap);
  }
  throw ConfigError("data.source must be synthetic or idx, got '" + source + "'");
}

Dataset reservoir_data(const Config& cfg) {
  const std::size_t n = cfg.count("data.reservoir_size");
  const auto seed = static_cast<std::uint64_t>(cfg.integer("data.reservoir_seed"));
  if (cfg.str("data.source") == "synthetic") {
    return gen_synthetic_dataset(cfg.count("data.classes"), n,
                                 cfg.count("data.side"), seed);
  }
  const Dataset train = train_data(cfg);
  return split_dataset(train, std::min(n, train.size()), seed).second;
}

fs::path run_directory(Config& cfg, const std::string& command) {
  if (cfg.str("out.run_id").empty()) {
    cfg.set("out.run_id", command + "-" + hex(cfg.fingerprint(), 12));
  }
  const fs::path dir = fs::path(cfg.str("out.dir")) / cfg.str("out.run_id");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

void resolve_alpha(Config& cfg, const ClassifierModel& model,
                   const Dataset& reservoir, std::ostream& log) {
  if (cfg.str("defense.alpha") != "auto") return;
  const AlphaTuning t = tune_alpha(
      model, reservoir, unig_from(cfg), cfg.reals("defense.alpha_grid"),
      positive(cfg, "eval.batch_size"),
      static_cast<std::uint64_t>(cfg.integer("data.reservoir_seed")));
  log << "alpha tuning (flip rate, descent rate, mean relative loss drop):\n";
  for (const auto& c : t.candidates) {
    log << "  alpha=" << c.alpha << "  flip=" << c.flip_rate
        << "  descent=" << c.descent_rate << "  drop=" << c.mean_relative_drop
        << "\n";
  }
  log << "  chosen alpha=" << t.chosen << "\n";
  cfg.set("defense.alpha", shortest(t.chosen));
}

int cmd_train(Config cfg, std::ostream& out, std::ostream&) {
  const Dataset data = train_data(cfg);
  const fs::path dir = run_directory(cfg, "train");
  fs::path model_path = cfg.str("model.path");
  if (model_path.empty()) model_path = dir / "model.ungw";
  cfg.set("model.path", model_path.string());
  const TrainResult res = train_classifier(data, arch_from(cfg), train_from(cfg));
  save_model(res.model, model_path);
  const nlohmann::json metrics = {
      {"model", model_path.string()},
      {"heldout_accuracy", res.heldout_accuracy},
      {"train_accuracy", res.train_accuracy},
      {"parameters", res.model.parameter_count()},
      {"feature_dim", res.model.feature_dim()},
      {"classes", res.model.classes()},
      {"dataset", data.name},
  };
  write_text(dir / "config.resolved", cfg.resolved());
  write_text(dir / "metrics.json", metrics.dump() + "\n");
  out << metrics.dump() << "\n";
  return kExitOk;
}

int cmd_evaluate(Config cfg, std::ostream& out, std::ostream& err) {
  const ClassifierModel model = load_configured_model(cfg);
  const Dataset test = test_data(cfg);
  const Dataset reservoir = reservoir_data(cfg);
  const fs::path dir = run_directory(cfg, "evaluate");
  resolve_alpha(cfg, model, reservoir, err);
  EvalOptions opts = eval_from(cfg);
  opts.reservoir = &reservoir;
  const EvalResult res =
      evaluate_grid(model, defenses_from(cfg), attacks_from(cfg), test, opts);
  write_eval_outputs(dir, cfg, res.reports);
  out << "wrote " << res.reports.size() << " report rows to " << dir.string()
      << "\n";
  return report_errors(res.errors, dir, err);
}

int cmd_sweep(Config cfg, std::ostream& out, std::ostream& err) {
  const ClassifierModel model = load_configured_model(cfg);
  const Dataset test = test_data(cfg);
  const Dataset reservoir = reservoir_data(cfg);
  const fs::path dir = run_directory(cfg, "sweep");
  resolve_alpha(cfg, model, reservoir, err);

  SweepSpec spec;
  spec.axis = parse_sweep_axis(cfg.str("sweep.axis"));
  spec.values = cfg.reals("sweep.values");
  spec.attacks = attacks_from(cfg);
  spec.options = eval_from(cfg);
  spec.options.reservoir = &reservoir;

  EvalResult all;
  for (const DefenseSpec& d : defenses_from(cfg)) {
    const bool unig_axis = spec.axis == SweepAxis::kDelta ||
                           spec.axis == SweepAxis::kP ||
                           spec.axis == SweepAxis::kAlpha;
    if (unig_axis && d.kind != DefenseKind::kUniG) continue;
    if (spec.axis == SweepAxis::kRndSigma && d.kind != DefenseKind::kRnd) continue;
    spec.defense = d;
    EvalResult part = run_sweep(model, spec, test);
    for (auto& r : part.reports) all.reports.push_back(std::move(r));
    for (auto& e : part.errors) all.errors.push_back(std::move(e));
  }
  if (all.reports.empty() && all.errors.empty()) {
    throw ConfigError("no configured defense is affected by sweep axis " +
                      to_string(spec.axis));
  }
  write_eval_outputs(dir, cfg, all.reports);
  if (!all.reports.empty()) write_text(dir / "sweep.csv", sweep_csv(all.reports));
  out << "wrote " << all.reports.size() << " sweep rows to " << dir.string()
      << "\n";
  return report_errors(all.errors, dir, err);
}

int cmd_report(Config cfg, std::ostream& out, std::ostream&) {
  const std::string& input = cfg.str("report.input");
  if (input.empty()) throw ConfigError("report needs --input (report.json)");
  std::ifstream in(input);
  if (!in) throw IoError("cannot read " + input);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto reports = parse_report_json(ss.str());

  struct Acc {
    double clean = 0, robust = 0, ldiff = 0, univ = 0;
    int n = 0, n_univ = 0;
  };
  using Key = std::tuple<std::string, std::string, std::string, std::size_t, std::string, double>;
  std::map<Key, Acc> groups;
  for (const auto& r : reports) {
    Acc& a = groups[{r.defense, r.defense_params, r.attack, r.budget, r.axis, r.axis_value}];
    a.clean += r.clean_acc;
    a.robust += r.robust_acc;
    a.ldiff += r.logit_diff;
    if (!std::isnan(r.universality)) {
      a.univ += r.universality;
      ++a.n_univ;
    }
    ++a.n;
  }
  std::ostringstream table;
  table << std::left << std::setw(9) << "defense" << std::setw(34) << "params"
        << std::setw(11) << "attack" << std::setw(8) << "budget"
        << std::setw(16) << "sweep" << std::right << std::setw(7) << "seeds"
        << std::setw(9) << "clean" << std::setw(9) << "robust" << std::setw(11)
        << "logitdiff" << std::setw(9) << "univ" << "\n";
  table << std::fixed;
  for (const auto& [k, a] : groups) {
    const auto& [defense, params, attack, budget, axis, value] = k;
    const std::string sweep = axis.empty() ? "-" : axis + "=" + shortest(value);
    table << std::left << std::setw(9) << defense << std::setw(34) << params
          << std::setw(11) << attack << std::setw(8) << budget << std::setw(16)
          << sweep << std::right << std::setw(7) << a.n << std::setprecision(4)
          << std::setw(9) << a.clean / a.n << std::setw(9) << a.robust / a.n
          << std::setw(11) << a.ldiff / a.n << std::setw(9)
          << (a.n_univ ? a.univ / a.n_univ : std::nan("")) << "\n";
  }
  out << table.str();
  const fs::path summary = fs::path(input).parent_path() / "summary.txt";
  write_text(summary, table.str());
  return kExitOk;
}

}  // namespace unig::cli
