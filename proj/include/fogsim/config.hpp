#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fogsim/errors.hpp"
#include "fogsim/rng.hpp"
#include "fogsim/scenario.hpp"

namespace fogsim {

/// Sectioned key = value text. `#` and `;` start comments.
class IniDocument {
 public:
  struct Entry {
    std::string value;
    int line = 0;
    mutable bool used = false;
  };

  static IniDocument parse(const std::string& text, const std::string& name = "config") {
    IniDocument doc;
    doc.name_ = name;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const std::string s = trim(strip_comment(raw));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']' || s.size() < 3) doc.fail(line, "malformed section header '" + s + "'");
        section = trim(s.substr(1, s.size() - 2));
        if (doc.sections_.count(section)) doc.fail(line, "duplicate section [" + section + "]");
        doc.sections_[section];
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) doc.fail(line, "expected 'key = value', got '" + s + "'");
      if (section.empty()) doc.fail(line, "key outside of any section");
      const std::string key = trim(s.substr(0, eq));
      if (key.empty()) doc.fail(line, "empty key");
      auto& sec = doc.sections_[section];
      if (sec.count(key)) doc.fail(line, "duplicate key '" + key + "' in [" + section + "]");
      sec[key] = {trim(s.substr(eq + 1)), line, false};
    }
    return doc;
  }

  const std::string& name() const { return name_; }

  [[noreturn]] void fail(int line, const std::string& msg) const {
    throw ConfigError(name_ + ":" + std::to_string(line) + ": " + msg);
  }

  const Entry* find(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    auto k = s->second.find(key);
    if (k == s->second.end()) return nullptr;
    k->second.used = true;
    return &k->second;
  }

  std::optional<std::string> get_string(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    if (!e) return std::nullopt;
    return e->value;
  }

  std::optional<double> get_double(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    if (!e) return std::nullopt;
    return to_double(*e, e->value, section, key);
  }

  std::optional<long long> get_int(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    if (!e) return std::nullopt;
    long long v = 0;
    const char* b = e->value.data();
    const char* end = b + e->value.size();
    auto [p, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || p != end) fail(e->line, "[" + section + "] " + key + ": expected an integer");
    return v;
  }

  std::optional<std::size_t> get_count(const std::string& section, const std::string& key) const {
    const auto v = get_int(section, key);
    if (!v) return std::nullopt;
    if (*v < 0) fail(find(section, key)->line, "[" + section + "] " + key + ": must not be negative");
    return static_cast<std::size_t>(*v);
  }

  std::optional<bool> get_bool(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    if (!e) return std::nullopt;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    fail(e->line, "[" + section + "] " + key + ": expected true or false");
  }

  std::optional<std::vector<std::string>> get_list(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    if (!e) return std::nullopt;
    std::vector<std::string> out;
    std::stringstream ss(e->value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) fail(e->line, "[" + section + "] " + key + ": empty list item");
      out.push_back(item);
    }
    return out;
  }

  std::optional<std::pair<double, double>> get_range(const std::string& section, const std::string& key) const {
    const auto list = get_list(section, key);
    if (!list) return std::nullopt;
    const auto* e = find(section, key);
    if (list->size() != 2) fail(e->line, "[" + section + "] " + key + ": expected 'min, max'");
    return std::pair{to_double(*e, (*list)[0], section, key), to_double(*e, (*list)[1], section, key)};
  }

  int line_of(const std::string& section, const std::string& key) const {
    const auto* e = find(section, key);
    return e ? e->line : 0;
  }

  /// Throws on the first key nobody read.
  void reject_unused() const {
    for (const auto& [sname, sec] : sections_) {
      for (const auto& [key, e] : sec) {
        if (!e.used) fail(e.line, "unknown key '" + key + "' in [" + sname + "]");
      }
    }
  }

  bool has_section(const std::string& s) const { return sections_.count(s) > 0; }
  std::vector<std::string> section_names() const {
    std::vector<std::string> out;
    for (const auto& [n, s] : sections_) out.push_back(n);
    return out;
  }

 private:
  static std::string strip_comment(const std::string& s) {
    const auto p = s.find_first_of("#;");
    return p == std::string::npos ? s : s.substr(0, p);
  }
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
  double to_double(const Entry& e, const std::string& text, const std::string& section,
                   const std::string& key) const {
    double v = 0.0;
    const char* b = text.data();
    const char* end = b + text.size();
    auto [p, ec] = std::from_chars(b, end, v);
    if (ec != std::errc() || p != end) fail(e.line, "[" + section + "] " + key + ": expected a number, got '" + text + "'");
    return v;
  }

  std::string name_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

struct ExperimentConfig {
  ScenarioConfig scenario;
  std::vector<std::uint64_t> seeds{1};
  std::vector<ScenarioKind> kinds{kAllScenarioKinds.begin(), kAllScenarioKinds.end()};
  std::string output_dir = "out";
  double lambda_min = 1.0;
  double lambda_max = 3.0;
  std::string catalog_path;  // empty: built-in ladder
  std::string ebn0_path;     // empty: built-in table
  std::uint64_t content_hash = 0;

  void validate() const {
    scenario.validate();
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (kinds.empty()) throw ConfigError("at least one scenario kind is required");
    if (!(lambda_min >= 1.0 && lambda_max <= 3.0 && lambda_min <= lambda_max)) {
      throw ConfigError("lambda range must lie within [1, 3]");
    }
  }
};

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

template <class T, class V>
void assign_if(T& dst, const std::optional<V>& v) {
  if (v) dst = static_cast<T>(*v);
}

inline std::uint64_t parse_seed(const IniDocument& doc, int line, const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) doc.fail(line, "invalid seed '" + s + "'");
  return v;
}

}  // namespace detail

/// Builds an experiment from parsed text. Catalog and Eb/N0 paths resolve
/// against `base_dir`.
inline ExperimentConfig experiment_from_ini(const IniDocument& doc, const std::filesystem::path& base_dir = ".") {
  using detail::assign_if;
  ExperimentConfig x;
  ScenarioConfig& s = x.scenario;
  std::string hashed;

  if (auto seeds = doc.get_list("experiment", "seeds")) {
    x.seeds.clear();
    const int line = doc.line_of("experiment", "seeds");
    for (const auto& v : *seeds) x.seeds.push_back(detail::parse_seed(doc, line, v));
  }
  if (auto kinds = doc.get_list("experiment", "scenarios")) {
    x.kinds.clear();
    const int line = doc.line_of("experiment", "scenarios");
    for (const auto& k : *kinds) {
      try {
        x.kinds.push_back(parse_scenario_kind(k));
      } catch (const ConfigError& e) {
        doc.fail(line, e.what());
      }
    }
  }
  assign_if(x.output_dir, doc.get_string("experiment", "output"));
  assign_if(s.batches, doc.get_count("experiment", "batches"));
  assign_if(s.arrival_rate, doc.get_double("experiment", "arrival_rate"));

  assign_if(s.online.level_count, doc.get_int("clustering", "l"));
  assign_if(s.offline_count, doc.get_count("clustering", "M"));
  assign_if(s.batch_size, doc.get_count("clustering", "M_prime"));
  assign_if(s.online.zeta1, doc.get_double("clustering", "zeta1"));
  assign_if(s.online.zeta2, doc.get_double("clustering", "zeta2"));
  assign_if(s.kmeans.max_iters, doc.get_int("clustering", "max_iters"));
  assign_if(s.kmeans.tol, doc.get_double("clustering", "tol"));

  assign_if(s.lambda, doc.get_double("matching", "lambda"));
  if (auto r = doc.get_range("matching", "lambda_range")) {
    x.lambda_min = r->first;
    x.lambda_max = r->second;
  }
  assign_if(s.alpha, doc.get_double("matching", "alpha"));
  assign_if(s.fixed_vm_count, doc.get_count("matching", "fixed_vm_count"));
  if (auto p = doc.get_string("matching", "catalog")) {
    x.catalog_path = (base_dir / *p).string();
    const std::string text = read_text_file(x.catalog_path);
    std::istringstream in(text);
    s.catalog = VmCatalog::from_csv(in);
    hashed += text;
  } else {
    s.catalog = default_catalog();
  }
  if (auto p = doc.get_string("matching", "ebn0_table")) {
    x.ebn0_path = (base_dir / *p).string();
    const std::string text = read_text_file(x.ebn0_path);
    std::istringstream in(text);
    s.ebn0 = EbN0Table::from_csv(in);
    hashed += text;
  }

  const std::array<const char*, kFeatures> feature_keys = {"cpu", "io", "e2e", "size", "per_range"};
  for (std::size_t f = 0; f < kFeatures; ++f) {
    if (auto r = doc.get_range("features", feature_keys[f])) s.ranges[f] = {r->first, r->second};
  }

  assign_if(s.attack.queries_per_boundary, doc.get_int("attack", "Q_ij"));
  assign_if(s.attack.tau_ex, doc.get_double("attack", "tau_ex"));
  assign_if(s.attack.tau_ev, doc.get_double("attack", "tau_ev"));
  assign_if(s.attack.eta_ex, doc.get_double("attack", "eta_ex"));
  assign_if(s.attack.eta_ev, doc.get_double("attack", "eta_ev"));
  assign_if(s.attack.eps_ev, doc.get_double("attack", "epsilon_ev"));
  assign_if(s.attack.pair_proximity, doc.get_double("attack", "pair_proximity"));
  assign_if(s.attack.bisect_tol, doc.get_double("attack", "bisect_tol"));
  assign_if(s.attack.probe_seeds, doc.get_count("attack", "probe_seeds"));
  assign_if(s.attack.sgd_iters, doc.get_int("attack", "sgd_iters"));
  assign_if(s.attack.pgd_iters, doc.get_int("attack", "pgd_iters"));
  assign_if(s.attack.poison_fraction, doc.get_double("attack", "poison_fraction"));

  assign_if(s.hardening.eta_at, doc.get_double("hardening", "eta_at"));
  assign_if(s.hardening.eps_at, doc.get_double("hardening", "epsilon_at"));
  assign_if(s.hardening.iota, doc.get_double("hardening", "iota"));
  assign_if(s.hardening.pgd_iters, doc.get_int("hardening", "pgd_iters"));
  assign_if(s.hardening.adv_set_size, doc.get_count("hardening", "adv_set_size"));
  assign_if(s.hardening.outer_epochs, doc.get_int("hardening", "epochs"));
  assign_if(s.hardening.temperature, doc.get_double("hardening", "temperature"));
  assign_if(s.hardening.robust_restarts, doc.get_int("hardening", "restarts"));
  assign_if(s.hardening.robust_eval_size, doc.get_count("hardening", "robust_eval_size"));
  assign_if(s.hardening.robust_floor, doc.get_double("hardening", "robust_floor"));
  assign_if(s.hardening.max_centroid_step, doc.get_double("hardening", "max_centroid_step"));
  assign_if(s.cost_sensitive_hardening, doc.get_bool("hardening", "cost_sensitive"));

  doc.reject_unused();

  // Validation errors point at the offending line when one can be named.
  auto check = [&](bool ok, const char* section, const char* key, const std::string& msg) {
    if (!ok) {
      const int line = doc.line_of(section, key);
      if (line > 0) doc.fail(line, msg);
      throw ConfigError(doc.name() + ": " + msg);
    }
  };
  check(s.online.level_count >= 2, "clustering", "l", "l must be >= 2");
  check(s.offline_count >= cluster_count_for_levels(std::max(2, s.online.level_count)), "clustering", "M",
        "M must be at least l^5");
  check(s.batch_size >= 1, "clustering", "M_prime", "M_prime must be positive");
  check(s.online.zeta1 > 0 && s.online.zeta1 < 1, "clustering", "zeta1", "zeta1 must lie in (0,1)");
  check(s.online.zeta2 > 0 && s.online.zeta2 < 1, "clustering", "zeta2", "zeta2 must lie in (0,1)");
  check(s.lambda >= 1 && s.lambda <= 3, "matching", "lambda", "lambda must lie in [1, 3]");
  check(x.lambda_min >= 1 && x.lambda_max <= 3 && x.lambda_min <= x.lambda_max, "matching", "lambda_range",
        "lambda_range must lie within [1, 3]");
  check(s.attack.eps_ev > 0 && s.attack.eps_ev < 1, "attack", "epsilon_ev", "epsilon_ev must lie in (0,1)");
  check(s.attack.poison_fraction >= 0 && s.attack.poison_fraction <= 1, "attack", "poison_fraction",
        "poison_fraction must lie in [0,1]");
  check(s.hardening.iota <= s.hardening.eps_at, "hardening", "iota", "iota must not exceed epsilon_at");
  for (std::size_t f = 0; f < kFeatures; ++f) {
    check(s.ranges[f].max > s.ranges[f].min, "features", feature_keys[f], "feature range needs min < max");
  }
  try {
    x.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(doc.name() + ": " + e.what());
  }
  x.content_hash = fnv1a64(hashed);
  return x;
}

inline ExperimentConfig parse_experiment(const std::string& text, const std::string& name = "config",
                                         const std::filesystem::path& base_dir = ".") {
  auto x = experiment_from_ini(IniDocument::parse(text, name), base_dir);
  x.content_hash = mix64(fnv1a64(text) ^ x.content_hash);
  return x;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return parse_experiment(read_text_file(path), path.string(), path.parent_path());
}

}  // namespace fogsim
