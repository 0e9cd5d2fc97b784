// fogsim: run provisioning scenarios, sweeps and plot-data emission.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "fogsim/config.hpp"
#include "fogsim/report.hpp"
#include "fogsim/scenario.hpp"

namespace fs = std::filesystem;
using namespace fogsim;

namespace {

struct SweepSpec {
  std::string parameter;
  std::vector<double> values;
};

SweepSpec parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("--sweep expects name=a:b:step, got '" + text + "'");
  SweepSpec s;
  s.parameter = text.substr(0, eq);
  std::vector<double> parts;
  std::stringstream ss(text.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--sweep: not a number '" + item + "'");
    }
  }
  if (parts.size() != 3) throw ConfigError("--sweep expects name=a:b:step");
  s.values = sweep_grid(parts[0], parts[1], parts[2]);
  with_parameter(ScenarioConfig{}, s.parameter, s.values.front());
  return s;
}

std::string report_name(const ScenarioReport& r) {
  return std::string("report_") + to_string(r.kind) + "_seed" + std::to_string(r.seed) + ".json";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fog resource provisioning simulator with adversarial ML scenarios"};
  std::string config_path;
  std::vector<std::string> scenarios;
  std::string sweep_text;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
  bool validate_only = false;
  bool timing = false;
  unsigned workers = 0;
  app.add_option("--config", config_path, "experiment config (INI)");
  app.add_option("--scenario", scenarios, "vm-fixed, dispatcher, attacked, hardened or all (repeatable)");
  app.add_option("--sweep", sweep_text, "parameter sweep, e.g. lambda=1.0:3.0:0.25 (also M, M_prime)");
  app.add_option("--seed", seeds, "master seed (repeatable; overrides the config)");
  app.add_option("--out", out_dir, "output directory (overrides the config)");
  app.add_flag("--validate-config", validate_only, "check the config and exit");
  app.add_flag("--timing", timing, "also write measured wall-clock timings to timing.json");
  app.add_option("--workers", workers, "worker threads (default: hardware concurrency)");
  CLI11_PARSE(app, argc, argv);

  ExperimentConfig cfg;
  try {
    if (!config_path.empty()) {
      cfg = load_experiment(config_path);
    } else {
      cfg.scenario.catalog = default_catalog();
      cfg.validate();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  if (validate_only) {
    std::cout << "config ok: " << (config_path.empty() ? "<built-in defaults>" : config_path)
              << " hash=" << hex64(cfg.content_hash) << "\n";
    return 0;
  }

  Manifest manifest;
  manifest.config_hash = cfg.content_hash;
  manifest.config_path = config_path;
  std::optional<SweepSpec> sweep_spec;
  try {
    if (!scenarios.empty()) {
      cfg.kinds.clear();
      for (const auto& s : scenarios) {
        if (s == "all") {
          cfg.kinds.assign(kAllScenarioKinds.begin(), kAllScenarioKinds.end());
        } else {
          cfg.kinds.push_back(parse_scenario_kind(s));
        }
      }
      manifest.overrides["scenario"] = scenarios;
    }
    if (!seeds.empty()) {
      cfg.seeds = seeds;
      manifest.overrides["seed"] = seeds;
    }
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (!sweep_text.empty()) {
      sweep_spec = parse_sweep(sweep_text);
      manifest.overrides["sweep"] = sweep_text;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  manifest.seeds = cfg.seeds;
  manifest.effective_config = cfg.scenario;
  for (auto k : cfg.kinds) manifest.scenarios.emplace_back(to_string(k));

  const fs::path out(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) {
    std::cerr << "error: cannot create output directory '" << out.string() << "': " << ec.message() << "\n";
    return 3;
  }

  struct Job {
    ScenarioKind kind;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto k : cfg.kinds) {
    for (auto s : cfg.seeds) jobs.push_back({k, s});
  }

  nlohmann::json timings = nlohmann::json::array();
  auto emit = [&](const std::string& name, const std::string& content) {
    write_file(out / name, content);
    manifest.files.push_back(name);
  };

  try {
    if (sweep_spec) {
      for (const auto& job : jobs) {
        const auto points = sweep(job.kind, cfg.scenario, job.seed, sweep_spec->parameter, sweep_spec->values, workers);
        const std::string name = "sweep_" + sweep_spec->parameter + "_" + to_string(job.kind) + "_seed" +
                                 std::to_string(job.seed) + ".csv";
        emit(name, sweep_csv(points));
        for (const auto& p : points) {
          if (!p.error.empty()) {
            manifest.failures.push_back({{"kind", to_string(job.kind)},
                                         {"seed", job.seed},
                                         {sweep_spec->parameter, p.value},
                                         {"error", p.error}});
          } else if (timing) {
            timings.push_back({{"kind", to_string(job.kind)},
                               {"seed", job.seed},
                               {sweep_spec->parameter, p.value},
                               {"timing", p.run->timing}});
          }
        }
      }
    } else {
      struct Outcome {
        std::optional<ScenarioRun> run;
        std::string error;
      };
      const auto results = parallel_map(
          jobs.size(),
          [&](std::size_t i) {
            Outcome o;
            try {
              o.run = run_scenario(jobs[i].kind, cfg.scenario, jobs[i].seed);
            } catch (const std::exception& e) {
              o.error = e.what();
            }
            return o;
          },
          workers);
      std::vector<ScenarioReport> reports;
      for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (!results[i].run) {
          manifest.failures.push_back(
              {{"kind", to_string(jobs[i].kind)}, {"seed", jobs[i].seed}, {"error", results[i].error}});
          std::cerr << "warning: " << to_string(jobs[i].kind) << " seed " << jobs[i].seed << ": "
                    << results[i].error << "\n";
          continue;
        }
        const auto& r = results[i].run->report;
        reports.push_back(r);
        emit(report_name(r), nlohmann::json(r).dump(2) + "\n");
        if (timing) {
          timings.push_back(
              {{"kind", to_string(r.kind)}, {"seed", r.seed}, {"timing", results[i].run->timing}});
        }
        std::cout << to_string(r.kind) << " seed=" << r.seed << " RU=" << r.ru_percent << "% TD=" << r.td_percent
                  << "%\n";
      }
      if (!reports.empty()) {
        emit("reports.csv", reports_csv(reports));
        for (const auto& [name, content] : emit_plot_data(reports)) emit(name, content);
      }
    }
    if (timing) emit("timing.json", timings.dump(2) + "\n");
    write_file(out / "manifest.json", nlohmann::json(manifest).dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return manifest.failures.empty() ? 0 : 4;
}
