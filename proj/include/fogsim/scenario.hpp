#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <future>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fogsim/attack.hpp"
#include "fogsim/clustering.hpp"
#include "fogsim/domain.hpp"
#include "fogsim/hardening.hpp"
#include "fogsim/matching.hpp"
#include "fogsim/rng.hpp"
#include "fogsim/simulation.hpp"

namespace fogsim {

enum class ScenarioKind { kVmFixed, kDispatcher, kAttacked, kHardened };

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kVmFixed: return "vm-fixed";
    case ScenarioKind::kDispatcher: return "dispatcher";
    case ScenarioKind::kAttacked: return "attacked";
    case ScenarioKind::kHardened: return "hardened";
  }
  return "?";
}

inline ScenarioKind parse_scenario_kind(const std::string& s) {
  if (s == "vm-fixed") return ScenarioKind::kVmFixed;
  if (s == "dispatcher") return ScenarioKind::kDispatcher;
  if (s == "attacked") return ScenarioKind::kAttacked;
  if (s == "hardened") return ScenarioKind::kHardened;
  throw ConfigError("unknown scenario kind '" + s + "'");
}

inline constexpr std::array<ScenarioKind, 4> kAllScenarioKinds = {
    ScenarioKind::kVmFixed, ScenarioKind::kDispatcher, ScenarioKind::kAttacked, ScenarioKind::kHardened};

struct ScenarioConfig {
  FeatureRanges ranges{{{2e8, 2e9}, {200.0, 2000.0}, {0.5, 2.0}, {2e5, 2e6}, {1e-3, 0.1}}};
  VmCatalog catalog;
  EbN0Table ebn0 = EbN0Table::default_table();
  OnlineConfig online;
  KMeansOptions kmeans;
  AttackConfig attack;
  HardeningConfig hardening;
  bool cost_sensitive_hardening = true;
  std::size_t offline_count = 1000;  // M
  std::size_t batch_size = 500;      // M'
  std::size_t batches = 2;
  double lambda = 1.5;
  double alpha = 1.0;
  double arrival_rate = 250.0;       // per second
  std::size_t fixed_vm_count = 0;    // 0: one per cluster

  void validate() const {
    validate_ranges(ranges);
    catalog.validate();
    online.validate();
    attack.validate();
    hardening.validate();
    if (kmeans.max_iters < 1 || !(kmeans.tol > 0)) throw ConfigError("invalid k-means budget");
    if (offline_count < cluster_count_for_levels(online.level_count)) {
      throw ConfigError("offline batch M must hold at least l^5 workloads");
    }
    if (batch_size < 1 || batches < 1) throw ConfigError("M' and batch count must be positive");
    if (!(lambda >= 1.0 && lambda <= 3.0)) throw ConfigError("lambda must lie in [1, 3]");
    if (!(alpha > 0)) throw ConfigError("alpha must be positive");
    if (!(arrival_rate > 0)) throw ConfigError("arrival rate must be positive");
  }
};

struct AttackStats {
  double crossing_rate = 0.0;
  double poison_fraction = 0.0;  // achieved share of perturbed online workloads
  std::uint64_t query_count = 0;
  std::size_t victims = 0;
};

struct DefenseStats {
  double robust_before = 1.0;
  double robust_after = 1.0;
  int epochs = 0;
  double flop_scale = 0.0;
  bool below_floor = false;
};

struct ScenarioReport {
  ScenarioKind kind = ScenarioKind::kDispatcher;
  std::uint64_t seed = 0;
  double lambda_used = 1.0;
  double ru_percent = 0.0;
  double td_percent = 0.0;
  std::size_t workloads = 0;
  std::size_t dropped = 0;
  std::size_t instances = 0;
  std::optional<int> iterations_used;
  std::optional<double> centroid_deviation;
  std::optional<double> offline_silhouette;
  std::vector<std::string> online_paths;
  std::optional<AttackStats> attack;
  std::optional<DefenseStats> defense;

  std::size_t served() const { return workloads - dropped; }
};

struct ScenarioTiming {
  double wall_seconds = 0.0;
  double harden_seconds = 0.0;
  double t_classify = 0.0;
  double t_grad = 0.0;
  TrainingCost cost{};
};

struct ScenarioRun {
  ScenarioReport report;
  ScenarioTiming timing;
};

inline VmCatalog default_catalog() {
  const std::array<double, 3> tiers = {1e-4, 1e-3, 1e-2};
  return VmCatalog::ladder({4e8, 400.0, 4e5, 0.0}, 1.25, 28, tiers);
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Hardened {
  ClusterModel model;
  DefenseStats stats;
  double seconds = 0.0;
};

// Training set: the model's absorbed history under its clean labels plus
// uniform synthetic points labelled by the model.
inline Hardened harden(const ClusterModel& model, std::span<const Point> history, const MatchPlan& plan,
                       const ScenarioConfig& cfg, Rng& rng) {
  const auto t0 = Clock::now();
  std::vector<Point> pts(history.begin(), history.end());
  std::vector<int> labels(model.assignments.begin(), model.assignments.end());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t s = 0; s < cfg.hardening.adv_set_size; ++s) {
    Point p;
    for (auto& v : p) v = u(rng);
    pts.push_back(p);
    labels.push_back(model.classify(p));
  }
  const ConfusionMask mask = cfg.cost_sensitive_hardening ? provisioning_mask(plan) : ConfusionMask{};
  auto res = adversarial_train(model, pts, labels, cfg.hardening, rng, mask);
  Hardened h;
  h.model = std::move(res.model);
  h.stats.robust_before = res.robust_before;
  h.stats.robust_after = res.robust_after;
  h.stats.epochs = res.epochs;
  h.stats.below_floor = res.below_floor;
  h.stats.flop_scale = training_cost_estimate(cfg.hardening, model.cluster_count()).flop_scale;
  h.seconds = seconds_since(t0);
  return h;
}

inline void measure_unit_costs(const ClusterModel& model, const ScenarioConfig& cfg, ScenarioTiming& timing) {
  SoftClassifier cls{model.centroids, cfg.hardening.temperature};
  const int reps = 2000;
  Point x{};
  x.fill(0.5);
  volatile int sink = 0;
  auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) {
    x[0] = static_cast<double>(r % 100) / 100.0;
    sink = sink + cls.hard_label(x);
  }
  timing.t_classify = seconds_since(t0) / reps;
  t0 = Clock::now();
  double acc = 0.0;
  for (int r = 0; r < reps; ++r) {
    x[0] = static_cast<double>(r % 100) / 100.0;
    acc += cross_entropy_gradient(cls, x, r % static_cast<int>(model.cluster_count()))[0];
  }
  timing.t_grad = seconds_since(t0) / reps;
  sink = sink + static_cast<int>(acc > 0);
  HardeningConfig hc = cfg.hardening;
  hc.t_classify = timing.t_classify;
  hc.t_grad = timing.t_grad;
  timing.cost = training_cost_estimate(hc, model.cluster_count());
}

}  // namespace detail

/// End-to-end run of one scenario. All kinds draw the same workload and
/// arrival streams from `seed`, so reports are paired across kinds.
inline ScenarioRun run_scenario(ScenarioKind kind, const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto t0 = detail::Clock::now();
  const SeedFan fan(seed);
  Rng gen = fan.stream("generation");
  Rng arr = fan.stream("arrivals");
  Rng atk = fan.stream("attack");
  Rng pgd = fan.stream("pgd");

  const auto offline = generate_workloads(cfg.offline_count, cfg.ranges, gen);
  std::vector<std::vector<Workload>> online(cfg.batches);
  for (auto& b : online) b = generate_workloads(cfg.batch_size, cfg.ranges, gen);
  std::vector<std::vector<double>> arrivals(cfg.batches);
  for (auto& a : arrivals) a = poisson_arrivals(cfg.batch_size, cfg.arrival_rate, 0.0, arr);

  ScenarioRun run;
  ScenarioReport& rep = run.report;
  rep.kind = kind;
  rep.seed = seed;
  rep.lambda_used = cfg.lambda;

  std::vector<std::size_t> order(cfg.batch_size);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<InstanceUtilization> util;
  auto account = [&](const std::vector<ServiceOutcome>& outcomes, const Dispatch& d,
                     std::span<const Workload> truth) {
    const auto u = instance_utilization(outcomes, d, truth, cfg.ebn0);
    util.insert(util.end(), u.begin(), u.end());
    rep.workloads += outcomes.size();
    rep.dropped += static_cast<std::size_t>(
        std::count_if(outcomes.begin(), outcomes.end(), [](const ServiceOutcome& o) { return o.dropped; }));
    rep.instances += static_cast<std::size_t>(std::count_if(
        u.begin(), u.end(), [](const InstanceUtilization& x) { return x.members > 0; }));
  };
  auto finish = [&] {
    rep.ru_percent = resource_utilization(util);
    rep.td_percent = 100.0 * static_cast<double>(rep.dropped) / static_cast<double>(rep.workloads);
    run.timing.wall_seconds = detail::seconds_since(t0);
  };

  const std::size_t clusters = cluster_count_for_levels(cfg.online.level_count);
  if (kind == ScenarioKind::kVmFixed) {
    const VmOffer offer = cfg.catalog.median_offer();
    const std::size_t count = cfg.fixed_vm_count > 0 ? cfg.fixed_vm_count : clusters;
    for (std::size_t b = 0; b < cfg.batches; ++b) {
      const auto d = dispatch_fixed(offer, count, order, cfg.batch_size);
      const auto outcomes = simulate_service(d, {}, online[b], arrivals[b], cfg.alpha);
      account(outcomes, d, online[b]);
    }
    finish();
    return run;
  }

  const FeatureNormalizer normalizer = fit_normalizer(offline);
  std::vector<Point> history = normalizer.normalize(offline);
  std::vector<Workload> history_wl = offline;
  const auto init = level_init(history, cfg.online.level_count);
  ClusterModel model = kmeans_offline(history, init, normalizer, cfg.kmeans);
  rep.iterations_used = model.iterations_used;
  rep.centroid_deviation = mean_centroid_deviation(init, model.centroids);
  rep.offline_silhouette = model.silhouette;
  MatchPlan plan = match_offers(model, history_wl, cfg.catalog, cfg.lambda, cfg.alpha);

  const bool attacked = kind == ScenarioKind::kAttacked || kind == ScenarioKind::kHardened;
  const bool hardened = kind == ScenarioKind::kHardened;
  ClusterModel deployed = model;
  if (hardened) {
    auto h = detail::harden(model, history, plan, cfg, pgd);
    deployed = std::move(h.model);
    rep.defense = h.stats;
    run.timing.harden_seconds += h.seconds;
  }
  if (attacked) rep.attack = AttackStats{};

  std::size_t crossed = 0;
  std::size_t crafted = 0;
  for (std::size_t b = 0; b < cfg.batches; ++b) {
    const auto& truth = online[b];
    std::vector<Workload> reported = truth;
    if (attacked && cfg.attack.poison_fraction > 0.0) {
      const auto oracle = LabelOracle::from_model(deployed);
      const auto disc = discover_boundaries(oracle, cfg.attack, atk);
      const auto victims = select_victims(oracle, normalizer.normalize(truth), disc, cfg.attack.poison_fraction, atk);
      const auto ev = craft_evasions(oracle, victims, disc, cfg.attack);
      reported = causative_inject(ev, truth, normalizer);
      rep.attack->query_count += oracle.queries();
      rep.attack->victims += ev.evasions.size();
      crafted += ev.evasions.size();
      crossed += static_cast<std::size_t>(std::count_if(ev.evasions.begin(), ev.evasions.end(),
                                                        [](const Evasion& e) { return e.crossed; }));
    }
    const auto reported_pts = normalizer.normalize(reported);
    const auto labels = assign_all(deployed.centroids, reported_pts);
    const auto d = dispatch_workloads(plan, labels, reported, arrivals[b]);
    const auto outcomes = simulate_service(d, labels, truth, arrivals[b], cfg.alpha);
    account(outcomes, d, truth);

    auto res = classify_online(model, reported_pts, cfg.online, history, cfg.kmeans);
    rep.online_paths.emplace_back(to_string(res.path));
    history.insert(history.end(), reported_pts.begin(), reported_pts.end());
    history_wl.insert(history_wl.end(), reported.begin(), reported.end());
    model = std::move(res.model);
    if (b + 1 == cfg.batches) break;
    plan = match_offers(model, history_wl, cfg.catalog, cfg.lambda, cfg.alpha);
    if (hardened) {
      auto h = detail::harden(model, history, plan, cfg, pgd);
      deployed = std::move(h.model);
      rep.defense->robust_after = h.stats.robust_after;
      rep.defense->below_floor = rep.defense->below_floor || h.stats.below_floor;
      run.timing.harden_seconds += h.seconds;
    } else {
      deployed = model;
    }
  }
  if (attacked) {
    rep.attack->crossing_rate = crafted > 0 ? static_cast<double>(crossed) / static_cast<double>(crafted) : 0.0;
    rep.attack->poison_fraction =
        static_cast<double>(crafted) / static_cast<double>(cfg.batch_size * cfg.batches);
  }
  if (hardened) detail::measure_unit_costs(deployed, cfg, run.timing);
  finish();
  return run;
}

/// Runs `fn(i)` for i in [0, n) on a small worker pool; results keep index order.
template <class Fn>
auto parallel_map(std::size_t n, Fn fn, unsigned workers = 0) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < std::min<std::size_t>(workers, n); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  std::vector<R> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

struct SweepPoint {
  std::string parameter;
  double value = 0.0;
  std::optional<ScenarioRun> run;
  std::string error;
};

/// Values a, a+step, ..., up to b inclusive (with rounding slack).
inline std::vector<double> sweep_grid(double a, double b, double step) {
  if (!(step > 0) || b < a) throw ConfigError("sweep range must satisfy a <= b and step > 0");
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9));
  for (std::size_t k = 0; k <= n; ++k) out.push_back(a + static_cast<double>(k) * step);
  return out;
}

/// Applies a sweep parameter (lambda, M or M_prime) to a config copy.
inline ScenarioConfig with_parameter(ScenarioConfig cfg, const std::string& parameter, double value) {
  if (parameter == "lambda") {
    cfg.lambda = value;
  } else if (parameter == "M" || parameter == "M_prime") {
    if (value < 1 || value != std::floor(value)) throw ConfigError(parameter + " must be a positive integer");
    (parameter == "M" ? cfg.offline_count : cfg.batch_size) = static_cast<std::size_t>(value);
  } else {
    throw ConfigError("unknown sweep parameter '" + parameter + "' (expected lambda, M or M_prime)");
  }
  return cfg;
}

/// Sweep at a fixed seed; a failing point is recorded, not fatal.
inline std::vector<SweepPoint> sweep(ScenarioKind kind, const ScenarioConfig& cfg, std::uint64_t seed,
                                     const std::string& parameter, std::span<const double> values,
                                     unsigned workers = 0) {
  return parallel_map(
      values.size(),
      [&](std::size_t i) {
        SweepPoint p;
        p.parameter = parameter;
        p.value = values[i];
        try {
          p.run = run_scenario(kind, with_parameter(cfg, parameter, values[i]), seed);
        } catch (const std::exception& e) {
          p.error = e.what();
        }
        return p;
      },
      workers);
}

inline std::vector<SweepPoint> sweep_lambda(ScenarioKind kind, const ScenarioConfig& cfg, std::uint64_t seed,
                                            std::span<const double> lambdas, unsigned workers = 0) {
  return sweep(kind, cfg, seed, "lambda", lambdas, workers);
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const AttackStats& a) {
  j = {{"crossing_rate", a.crossing_rate},
       {"poison_fraction", a.poison_fraction},
       {"query_count", a.query_count},
       {"victims", a.victims}};
}

inline void to_json(nlohmann::json& j, const DefenseStats& d) {
  j = {{"robust_accuracy_before", d.robust_before},
       {"robust_accuracy_after", d.robust_after},
       {"epochs", d.epochs},
       {"flop_scale", d.flop_scale},
       {"below_floor", d.below_floor}};
}

template <class T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline void to_json(nlohmann::json& j, const ScenarioReport& r) {
  j = {{"kind", to_string(r.kind)},
       {"seed", r.seed},
       {"lambda_used", r.lambda_used},
       {"ru_percent", r.ru_percent},
       {"td_percent", r.td_percent},
       {"workloads", r.workloads},
       {"served", r.served()},
       {"dropped", r.dropped},
       {"instances", r.instances},
       {"iterations_used", optional_json(r.iterations_used)},
       {"centroid_deviation", optional_json(r.centroid_deviation)},
       {"offline_silhouette", optional_json(r.offline_silhouette)},
       {"online_paths", r.online_paths},
       {"attack", optional_json(r.attack)},
       {"defense", optional_json(r.defense)}};
  if (r.kind == ScenarioKind::kVmFixed) j["note"] = "fixed baseline approximation: equal median-offer VMs, round-robin";
}

inline void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  nlohmann::json ranges = nlohmann::json::object();
  for (std::size_t f = 0; f < kFeatures; ++f) ranges[kFeatureNames[f]] = {c.ranges[f].min, c.ranges[f].max};
  nlohmann::json catalog = nlohmann::json::array();
  for (const auto& e : c.catalog.entries) catalog.push_back({{"offer", e.offer}, {"count", e.count}});
  nlohmann::json knots = nlohmann::json::array();
  for (const auto& k : c.ebn0.knots()) knots.push_back({k.per, k.ebn0_db});
  const auto& a = c.attack;
  const auto& h = c.hardening;
  j = {{"ranges", ranges},
       {"catalog", catalog},
       {"ebn0_table", knots},
       {"l", c.online.level_count},
       {"M", c.offline_count},
       {"M_prime", c.batch_size},
       {"batches", c.batches},
       {"zeta1", c.online.zeta1},
       {"zeta2", c.online.zeta2},
       {"max_iters", c.kmeans.max_iters},
       {"tol", c.kmeans.tol},
       {"lambda", c.lambda},
       {"alpha", c.alpha},
       {"arrival_rate", c.arrival_rate},
       {"fixed_vm_count", c.fixed_vm_count},
       {"attack",
        {{"Q_ij", a.queries_per_boundary},
         {"tau_ex", a.tau_ex},
         {"tau_ev", a.tau_ev},
         {"eta_ex", a.eta_ex},
         {"eta_ev", a.eta_ev},
         {"epsilon_ev", a.eps_ev},
         {"pair_proximity", a.pair_proximity},
         {"bisect_tol", a.bisect_tol},
         {"probe_seeds", a.probe_seeds},
         {"sgd_iters", a.sgd_iters},
         {"pgd_iters", a.pgd_iters},
         {"poison_fraction", a.poison_fraction}}},
       {"hardening",
        {{"eta_at", h.eta_at},
         {"epsilon_at", h.eps_at},
         {"iota", h.iota},
         {"pgd_iters", h.pgd_iters},
         {"adv_set_size", h.adv_set_size},
         {"epochs", h.outer_epochs},
         {"temperature", h.temperature},
         {"restarts", h.robust_restarts},
         {"robust_eval_size", h.robust_eval_size},
         {"robust_floor", h.robust_floor},
         {"max_centroid_step", h.max_centroid_step},
         {"cost_sensitive", c.cost_sensitive_hardening}}}};
}

inline void to_json(nlohmann::json& j, const ScenarioTiming& t) {
  j = {{"wall_seconds", t.wall_seconds},
       {"harden_seconds", t.harden_seconds},
       {"t_classify", t.t_classify},
       {"t_grad", t.t_grad},
       {"training_cost", t.cost}};
}

}  // namespace fogsim
