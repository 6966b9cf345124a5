// Report emission: CSV table, JSON superset and plain-text curves.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "unig/error.hpp"
#include "unig/harness.hpp"

namespace unig {
namespace {

using nlohmann::json;

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Quotes a CSV field when it carries a separator or quote.
std::string field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void csv_row(std::ostringstream& os, const EvalReport& r) {
  os << field(r.model_id) << ',' << field(r.defense) << ','
     << field(r.defense_params) << ',' << field(r.attack) << ',' << field(r.norm)
     << ',' << num(r.epsilon) << ',' << r.budget << ',' << r.seed << ','
     << num(r.clean_acc) << ',' << num(r.robust_acc) << ',' << num(r.logit_diff)
     << ',' << num(r.universality) << ',' << num(r.wall_time_s) << '\n';
}

constexpr const char* kCsvHeader =
    "model,defense,defense_params,attack,norm,epsilon,budget,seed,clean_acc,"
    "robust_acc,logit_diff,universality,wall_time_s";

json real(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double real_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json curve(const std::vector<std::pair<std::size_t, double>>& c) {
  json arr = json::array();
  for (const auto& [q, v] : c) arr.push_back(json::array({q, real(v)}));
  return arr;
}

std::vector<std::pair<std::size_t, double>> curve_from(const json& j) {
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& e : j) out.emplace_back(e.at(0).get<std::size_t>(), real_from(e.at(1)));
  return out;
}

}  // namespace

std::string report_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& r : reports) csv_row(os, r);
  return os.str();
}

std::string sweep_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "axis,value," << kCsvHeader << '\n';
  for (const auto& r : reports) {
    os << field(r.axis) << ',' << num(r.axis_value) << ',';
    csv_row(os, r);
  }
  return os.str();
}

std::string report_json(const std::vector<EvalReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) {
    arr.push_back({
        {"model", r.model_id},
        {"defense", r.defense},
        {"defense_params", r.defense_params},
        {"attack", r.attack},
        {"norm", r.norm},
        {"epsilon", real(r.epsilon)},
        {"budget", r.budget},
        {"seed", r.seed},
        {"clean_acc", real(r.clean_acc)},
        {"robust_acc", real(r.robust_acc)},
        {"logit_diff", real(r.logit_diff)},
        {"universality", real(r.universality)},
        {"wall_time_s", real(r.wall_time_s)},
        {"robust_curve", curve(r.robust_curve)},
        {"margin_curve", curve(r.margin_curve)},
        {"n_images", r.n_images},
        {"n_attacked", r.n_attacked},
        {"oracle_queries", r.oracle_queries},
        {"max_image_queries", r.max_image_queries},
        {"max_constraint_violation", real(r.max_constraint_violation)},
        {"axis", r.axis},
        {"axis_value", real(r.axis_value)},
    });
  }
  return arr.dump(2) + "\n";
}

std::vector<EvalReport> parse_report_json(const std::string& text) {
  std::vector<EvalReport> out;
  try {
    const json arr = json::parse(text);
    for (const auto& j : arr) {
      EvalReport r;
      r.model_id = j.at("model").get<std::string>();
      r.defense = j.at("defense").get<std::string>();
      r.defense_params = j.at("defense_params").get<std::string>();
      r.attack = j.at("attack").get<std::string>();
      r.norm = j.at("norm").get<std::string>();
      r.epsilon = real_from(j.at("epsilon"));
      r.budget = j.at("budget").get<std::size_t>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.clean_acc = real_from(j.at("clean_acc"));
      r.robust_acc = real_from(j.at("robust_acc"));
      r.logit_diff = real_from(j.at("logit_diff"));
      r.universality = real_from(j.at("universality"));
      r.wall_time_s = real_from(j.at("wall_time_s"));
      r.robust_curve = curve_from(j.at("robust_curve"));
      r.margin_curve = curve_from(j.at("margin_curve"));
      r.n_images = j.at("n_images").get<std::size_t>();
      r.n_attacked = j.at("n_attacked").get<std::size_t>();
      r.oracle_queries = j.at("oracle_queries").get<std::uint64_t>();
      r.max_image_queries = j.at("max_image_queries").get<std::size_t>();
      r.max_constraint_violation = real_from(j.at("max_constraint_violation"));
      r.axis = j.at("axis").get<std::string>();
      r.axis_value = real_from(j.at("axis_value"));
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report JSON: ") + e.what(), 0);
  }
  return out;
}

std::string report_curves(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  bool first = true;
  for (const auto& r : reports) {
    if (r.margin_curve.empty()) continue;
    if (!first) os << "\n\n";  // blank lines separate gnuplot-style blocks
    first = false;
    os << "# " << r.defense << ' ' << r.attack << ' ' << r.norm << " eps="
       << num(r.epsilon) << " budget=" << r.budget << " seed=" << r.seed;
    if (!r.axis.empty()) os << ' ' << r.axis << '=' << num(r.axis_value);
    os << '\n';
    for (const auto& [q, m] : r.margin_curve) os << q << ' ' << num(m) << '\n';
  }
  return os.str();
}

void write_report(const std::vector<EvalReport>& reports, ReportFormat format,
                  const std::filesystem::path& path) {
  if (reports.empty()) throw InputDomainError("write_report: no reports");
  std::string text;
  switch (format) {
    case ReportFormat::kCsv: text = report_csv(reports); break;
    case ReportFormat::kJson: text = report_json(reports); break;
    case ReportFormat::kCurves: text = report_curves(reports); break;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace unig
