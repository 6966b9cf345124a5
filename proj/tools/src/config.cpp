#include "config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "unig/error.hpp"

namespace unig::cli {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// key, default
const std::vector<std::pair<const char*, const char*>>& table() {
  static const std::vector<std::pair<const char*, const char*>> kTable = {
      {"model.path", ""},
      {"model.seed", "1"},
      {"model.epochs", "15"},
      {"model.lr", "0.05"},
      {"model.momentum", "0.9"},
      {"model.batch_size", "32"},
      {"model.holdout", "0.2"},
      {"model.target_accuracy", "0.97"},
      {"model.conv_channels", "8,16"},
      {"model.kernel", "3"},
      {"model.stride", "2"},
      {"model.features", "64"},
      {"data.source", "synthetic"},
      {"data.classes", "4"},
      {"data.side", "16"},
      {"data.train_size", "4000"},
      {"data.train_seed", "7"},
      {"data.test_size", "256"},
      {"data.test_seed", "99"},
      {"data.reservoir_size", "256"},
      {"data.reservoir_seed", "1234"},
      {"data.train_images", ""},
      {"data.train_labels", ""},
      {"data.test_images", ""},
      {"data.test_labels", ""},
      {"defense.kinds", "vanilla,rnd,unig"},
      {"defense.delta", "0.5"},
      {"defense.p", "1"},
      {"defense.alpha", "auto"},
      {"defense.alpha_grid", "0.01,0.03,0.1,0.3,1,3,10"},
      {"defense.eps_norm", "1e-12"},
      {"defense.cascade_k", "0"},
      {"defense.frozen_softmax", "false"},
      {"defense.rnd_sigma", "0.02"},
      {"attack.kinds", "square,simba,signhunter,nes,bandits"},
      {"attack.norm", "linf"},
      {"attack.epsilon", "0.15"},
      {"attack.seed", "0"},
      {"attack.freeze", "true"},
      {"attack.square.p_init", "0.05"},
      {"attack.simba.step", "0"},
      {"attack.nes.samples", "10"},
      {"attack.nes.sigma", "0.01"},
      {"attack.nes.step", "0.01"},
      {"attack.bandits.prior_lr", "0.1"},
      {"attack.bandits.exploration", "0.1"},
      {"attack.bandits.tile", "0"},
      {"attack.bandits.fd_eta", "0.1"},
      {"attack.bandits.step", "0.01"},
      {"eval.budgets", "100,2500"},
      {"eval.seeds", "0,1,2"},
      {"eval.batch_size", "128"},
      {"eval.max_images", "0"},
      {"eval.workers", "0"},
      {"out.dir", "out"},
      {"out.run_id", ""},
      {"out.wall_time", "false"},
      {"sweep.axis", "delta"},
      {"sweep.values", "0.1,0.3,0.5"},
      {"report.input", ""},
  };
  return kTable;
}

}  // namespace

Config Config::defaults() {
  Config c;
  for (const auto& [k, v] : table()) c.values_[k] = v;
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void Config::merge_text(std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    try {
      set(key, trim(std::string_view(body).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path.string());
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::real(const std::string& key) const {
  const std::string& s = str(key);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::int64_t Config::integer(const std::string& key) const {
  const std::string& s = str(key);
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key + ": expected an integer, got '" + s + "'");
  }
  return v;
}

std::size_t Config::count(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) throw ConfigError(key + ": must be >= 0");
  return static_cast<std::size_t>(v);
}

bool Config::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + s + "'");
}

std::vector<std::string> Config::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> Config::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : list(key)) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size() || !std::isfinite(v)) {
      throw ConfigError(key + ": bad number '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<std::uint64_t> Config::counts(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& item : list(key)) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) {
      throw ConfigError(key + ": bad nonnegative integer '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::string Config::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t Config::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : resolved()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void apply_dotted_flags(Config& cfg, const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos) {
      throw ConfigError("unexpected argument '" + a + "'");
    }
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      cfg.set(a.substr(2, eq - 2), a.substr(eq + 1));
      continue;
    }
    if (i + 1 >= args.size()) throw ConfigError("flag " + a + " needs a value");
    cfg.set(a.substr(2), args[++i]);
  }
}

}  // namespace unig::cli
