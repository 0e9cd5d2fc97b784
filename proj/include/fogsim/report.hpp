#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fogsim/domain.hpp"
#include "fogsim/scenario.hpp"

namespace fogsim {

inline constexpr const char* kVersion = "1.0.0";

namespace csv {

/// RFC 4180 field quoting.
inline std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string join_row(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += escape(cells[i]);
  }
  return out + "\r\n";
}

template <class T>
std::string cell(const std::optional<T>& v) {
  if (!v) return {};
  if constexpr (std::is_floating_point_v<T>) {
    return format_double(*v);
  } else {
    return std::to_string(*v);
  }
}

}  // namespace csv

inline std::vector<std::string> report_csv_header() {
  return {"kind",          "seed",          "lambda",         "ru_percent",      "td_percent",
          "workloads",     "dropped",       "instances",      "iterations_used", "centroid_deviation",
          "crossing_rate", "poison_fraction", "query_count",  "robust_accuracy_before",
          "robust_accuracy_after"};
}

/// Flat row; statistics a kind does not produce stay empty.
inline std::vector<std::string> report_csv_row(const ScenarioReport& r) {
  using csv::cell;
  using csv::format_double;
  std::optional<double> cross, frac, rb, ra;
  std::optional<std::uint64_t> queries;
  if (r.attack) {
    cross = r.attack->crossing_rate;
    frac = r.attack->poison_fraction;
    queries = r.attack->query_count;
  }
  if (r.defense) {
    rb = r.defense->robust_before;
    ra = r.defense->robust_after;
  }
  return {to_string(r.kind),
          std::to_string(r.seed),
          format_double(r.lambda_used),
          format_double(r.ru_percent),
          format_double(r.td_percent),
          std::to_string(r.workloads),
          std::to_string(r.dropped),
          std::to_string(r.instances),
          cell(r.iterations_used),
          cell(r.centroid_deviation),
          cell(cross),
          cell(frac),
          cell(queries),
          cell(rb),
          cell(ra)};
}

inline std::string reports_csv(std::span<const ScenarioReport> reports) {
  std::string out = csv::join_row(report_csv_header());
  for (const auto& r : reports) out += csv::join_row(report_csv_row(r));
  return out;
}

/// Sweep table: one row per point led by the swept value; a failed point
/// keeps its value and error text.
inline std::string sweep_csv(std::span<const SweepPoint> points) {
  std::vector<std::string> header = {points.empty() ? std::string("value") : points.front().parameter};
  for (auto& h : report_csv_header()) header.push_back(h);
  header.push_back("error");
  std::string out = csv::join_row(header);
  for (const auto& p : points) {
    std::vector<std::string> row = {csv::format_double(p.value)};
    if (p.run) {
      for (auto& c : report_csv_row(p.run->report)) row.push_back(c);
    } else {
      row.resize(header.size() - 1);
    }
    row.push_back(p.error);
    out += csv::join_row(row);
  }
  return out;
}

/// Grouped-bar tables, one per figure comparison: the legitimate pair
/// (vm-fixed, dispatcher) and the security triple (dispatcher, attacked,
/// hardened). Rows are scenario kinds in input order, columns RU and TD.
inline std::map<std::string, std::string> emit_plot_data(std::span<const ScenarioReport> reports) {
  if (reports.empty()) throw std::invalid_argument("emit_plot_data: no reports");
  const std::vector<std::string> header = {"kind",          "seed",            "ru_percent",
                                           "td_percent",    "crossing_rate",   "poison_fraction",
                                           "robust_accuracy_after"};
  auto row = [](const ScenarioReport& r) {
    std::optional<double> cross, frac, ra;
    if (r.attack) {
      cross = r.attack->crossing_rate;
      frac = r.attack->poison_fraction;
    }
    if (r.defense) ra = r.defense->robust_after;
    return csv::join_row({to_string(r.kind), std::to_string(r.seed), csv::format_double(r.ru_percent),
                          csv::format_double(r.td_percent), csv::cell(cross), csv::cell(frac),
                          csv::cell(ra)});
  };
  std::map<std::string, std::string> files;
  std::string all = csv::join_row(header);
  std::string legit = all;
  std::string security = all;
  bool has_legit = false, has_security = false;
  for (const auto& r : reports) {
    const auto line = row(r);
    all += line;
    if (r.kind == ScenarioKind::kVmFixed || r.kind == ScenarioKind::kDispatcher) {
      legit += line;
      has_legit = true;
    }
    if (r.kind != ScenarioKind::kVmFixed) {
      security += line;
      has_security = true;
    }
  }
  files["plot_scenarios.csv"] = all;
  if (has_legit) files["plot_legitimate.csv"] = legit;
  if (has_security) files["plot_attack_defense.csv"] = security;
  return files;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

struct Manifest {
  std::uint64_t config_hash = 0;
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> scenarios;
  std::vector<std::string> files;
  std::vector<nlohmann::json> failures;
  nlohmann::json overrides = nlohmann::json::object();
  nlohmann::json effective_config = nlohmann::json::object();
};

inline void to_json(nlohmann::json& j, const Manifest& m) {
  j = {{"version", kVersion},
       {"config_hash", hex64(m.config_hash)},
       {"config", m.config_path},
       {"seeds", m.seeds},
       {"scenarios", m.scenarios},
       {"overrides", m.overrides},
       {"effective_config", m.effective_config},
       {"files", m.files},
       {"failures", m.failures}};
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + p.string() + "'");
}

}  // namespace fogsim
