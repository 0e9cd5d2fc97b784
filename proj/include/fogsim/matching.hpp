#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "fogsim/clustering.hpp"
#include "fogsim/domain.hpp"
#include "fogsim/errors.hpp"

namespace fogsim {

/// Monotone PER -> Eb/N0 (dB) lookup, linear in dB over log10(PER).
class EbN0Table {
 public:
  struct Knot {
    double per;
    double ebn0_db;
  };

  EbN0Table() = default;
  explicit EbN0Table(std::vector<Knot> knots) : knots_(std::move(knots)) {
    if (knots_.size() < 2) throw ConfigError("ebn0 table needs at least two knots");
    std::sort(knots_.begin(), knots_.end(), [](const Knot& a, const Knot& b) { return a.per < b.per; });
    for (std::size_t k = 0; k < knots_.size(); ++k) {
      if (!(knots_[k].per > 0.0 && knots_[k].per < 1.0)) throw ConfigError("ebn0 table: per outside (0,1)");
      if (k > 0) {
        if (!(knots_[k].per > knots_[k - 1].per)) throw ConfigError("ebn0 table: duplicate per knot");
        if (!(knots_[k].ebn0_db < knots_[k - 1].ebn0_db)) {
          throw ConfigError("ebn0 table: ebn0 must strictly decrease as per increases");
        }
      }
    }
  }

  double min_per() const { return knots_.front().per; }
  double max_per() const { return knots_.back().per; }

  double ebn0_db(double per) const {
    if (!(per >= min_per() && per <= max_per())) {
      throw DomainError("per " + std::to_string(per) + " outside ebn0 table domain");
    }
    auto hi = std::lower_bound(knots_.begin(), knots_.end(), per,
                               [](const Knot& k, double v) { return k.per < v; });
    if (hi->per == per) return hi->ebn0_db;
    auto lo = hi - 1;
    const double t = (std::log10(per) - std::log10(lo->per)) / (std::log10(hi->per) - std::log10(lo->per));
    return lo->ebn0_db + t * (hi->ebn0_db - lo->ebn0_db);
  }

  double ebn0_linear(double per) const { return std::pow(10.0, ebn0_db(per) / 10.0); }

  const std::vector<Knot>& knots() const { return knots_; }

  /// Two-column CSV: per,ebn0_db.
  static EbN0Table from_csv(std::istream& in) {
    std::vector<Knot> knots;
    for (const auto& row : csv::read_numeric_rows(in, 2, "ebn0 table")) knots.push_back({row[0], row[1]});
    return EbN0Table(std::move(knots));
  }

  /// Synthetic coded-channel curve used when no table file is configured.
  static EbN0Table default_table() {
    return EbN0Table({{1e-6, 14.0},
                      {1e-5, 12.5},
                      {1e-4, 11.0},
                      {1e-3, 9.5},
                      {1e-2, 7.8},
                      {5e-2, 6.4},
                      {1e-1, 5.6},
                      {3e-1, 4.0}});
  }

 private:
  std::vector<Knot> knots_;
};

inline double per_to_ebn0(double per, const EbN0Table& table) { return table.ebn0_db(per); }

struct VmCatalog {
  struct Entry {
    VmOffer offer;
    std::size_t count = 0;  // 0 = unlimited instances
  };
  std::vector<Entry> entries;

  void validate() const {
    if (entries.empty()) throw ConfigError("VM catalog is empty");
    for (const auto& e : entries) {
      if (!e.offer.valid()) throw ConfigError("VM catalog contains an invalid offer");
    }
  }

  /// CSV columns: cpu_rate,io_rate,cap,per,count.
  static VmCatalog from_csv(std::istream& in) {
    VmCatalog c;
    for (const auto& row : csv::read_numeric_rows(in, 5, "catalog")) {
      c.entries.push_back({{row[0], row[1], row[2], row[3]}, static_cast<std::size_t>(row[4])});
    }
    c.validate();
    return c;
  }

  /// Geometric ladder of VM sizes crossed with link-quality tiers.
  static VmCatalog ladder(const VmOffer& base, double ratio, int sizes, std::span<const double> per_tiers) {
    VmCatalog c;
    for (int s = 0; s < sizes; ++s) {
      const double scale = std::pow(ratio, s);
      for (double per : per_tiers) {
        c.entries.push_back({{base.cpu_rate * scale, base.io_rate * scale, base.cap * scale, per}, 0});
      }
    }
    c.validate();
    return c;
  }

  /// Median capacity (by cpu rate) taken at the strictest link PER offered
  /// for that capacity, so a pool of it never breaks a PER tolerance the
  /// catalog can meet.
  VmOffer median_offer() const {
    validate();
    std::vector<VmOffer> sorted;
    for (const auto& e : entries) sorted.push_back(e.offer);
    std::sort(sorted.begin(), sorted.end(), [](const VmOffer& a, const VmOffer& b) {
      if (a.cpu_rate != b.cpu_rate) return a.cpu_rate < b.cpu_rate;
      return a.per < b.per;
    });
    const VmOffer& mid = sorted[(sorted.size() - 1) / 2];
    return *std::find_if(sorted.begin(), sorted.end(), [&](const VmOffer& o) { return o.cpu_rate == mid.cpu_rate; });
  }
};

/// Conservative corner of a cluster: the largest cpu/io/size demand and the
/// tightest e2e/per tolerance among its members.
inline Workload cluster_demand_point(std::span<const Workload> members) {
  if (members.empty()) throw std::invalid_argument("cluster_demand_point: empty cluster");
  Workload c = members.front();
  for (const auto& w : members) {
    c.cpu = std::max(c.cpu, w.cpu);
    c.io = std::max(c.io, w.io);
    c.size = std::max(c.size, w.size);
    c.e2e = std::min(c.e2e, w.e2e);
    c.per = std::min(c.per, w.per);
  }
  return c;
}

/// Offered completion time over demanded delay at unit weighting.
inline double alpha_tilde(const Workload& demand, const VmOffer& offer) {
  return (demand.cpu / offer.cpu_rate + demand.io / offer.io_rate + demand.size / offer.cap) / demand.e2e;
}

/// Completion time of a demand served alone with every rate scaled by alpha.
inline double service_time(const Workload& demand, const VmOffer& offer, double alpha) {
  return demand.cpu / (alpha * offer.cpu_rate) + demand.io / (alpha * offer.io_rate) +
         demand.size / (alpha * offer.cap);
}

struct ClusterMatch {
  bool populated = false;
  bool feasible = false;   // t <= e2e and e <= per at the demand point
  bool at_risk = false;    // no offer met the deadline; fastest one kept
  bool per_infeasible = false;
  Workload demand{};
  VmOffer offer{};
  std::size_t catalog_index = 0;
  double alpha_tilde = 0.0;
  double alpha = 1.0;
  double lambda_headroom = 0.0;
  double service_time = 0.0;
  double link_per = 0.0;
};

struct MatchPlan {
  std::vector<ClusterMatch> clusters;
  double lambda_target = 1.0;
  double alpha = 1.0;
};

inline std::vector<std::vector<Workload>> group_members(std::size_t clusters, std::span<const int> labels,
                                                        std::span<const Workload> workloads) {
  std::vector<std::vector<Workload>> out(clusters);
  for (std::size_t m = 0; m < labels.size(); ++m) {
    if (labels[m] >= 0) out[static_cast<std::size_t>(labels[m])].push_back(workloads[m]);
  }
  return out;
}

/// Picks the tightest offer for one demand point: the largest alpha-tilde not
/// above 1 among offers whose link PER is within tolerance.
inline ClusterMatch match_demand(const Workload& demand, const VmCatalog& catalog, double alpha) {
  ClusterMatch cm;
  cm.populated = true;
  cm.demand = demand;
  cm.alpha = alpha;
  std::optional<std::size_t> best_fit;
  std::optional<std::size_t> fastest;
  double best_fit_a = -1.0;
  double fastest_a = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < catalog.entries.size(); ++k) {
    const auto& o = catalog.entries[k].offer;
    if (o.per > demand.per) continue;
    const double a = alpha_tilde(demand, o);
    const auto& prev = best_fit ? catalog.entries[*best_fit].offer : o;
    if (a <= alpha && (a > best_fit_a || (a == best_fit_a && o.per > prev.per))) {
      best_fit = k;
      best_fit_a = a;
    }
    if (a < fastest_a) {
      fastest = k;
      fastest_a = a;
    }
  }
  if (!fastest) {
    cm.per_infeasible = true;
    return cm;
  }
  const std::size_t pick = best_fit ? *best_fit : *fastest;
  cm.at_risk = !best_fit;
  cm.catalog_index = pick;
  cm.offer = catalog.entries[pick].offer;
  cm.alpha_tilde = alpha_tilde(demand, cm.offer);
  cm.lambda_headroom = cm.alpha / cm.alpha_tilde;
  cm.service_time = fogsim::service_time(demand, cm.offer, alpha);
  cm.link_per = cm.offer.per;
  cm.feasible = cm.service_time <= demand.e2e && cm.link_per <= demand.per;
  return cm;
}

/// Matches every populated cluster's corner demand to a catalog offer.
inline MatchPlan match_offers(std::span<const std::vector<Workload>> members, const VmCatalog& catalog,
                              double lambda_target, double alpha = 1.0) {
  catalog.validate();
  if (!(lambda_target >= 1.0 && lambda_target <= 3.0)) {
    throw ConfigError("lambda_target must lie in [1, 3]");
  }
  MatchPlan plan;
  plan.lambda_target = lambda_target;
  plan.alpha = alpha;
  plan.clusters.resize(members.size());
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (members[c].empty()) continue;
    plan.clusters[c] = match_demand(cluster_demand_point(members[c]), catalog, alpha);
  }
  return plan;
}

inline MatchPlan match_offers(const ClusterModel& model, std::span<const Workload> fitted_workloads,
                              const VmCatalog& catalog, double lambda_target, double alpha = 1.0) {
  const auto members = group_members(model.cluster_count(), model.assignments, fitted_workloads);
  return match_offers(members, catalog, lambda_target, alpha);
}

// ---------------------------------------------------------------------------
// Dispatch: admission of workloads onto VM instances

struct VmInstance {
  int cluster = kUnassigned;
  VmOffer offer{};
  double admitted_load = 0.0;  // sum of member alpha-tilde as reported
};

struct Dispatch {
  std::vector<VmInstance> instances;
  std::vector<int> instance_of;  // per workload; kUnassigned when dropped at admission
};

/// Admits each cluster's arrivals, in arrival order, onto an instance of the
/// cluster's offer until the summed member alpha-tilde would pass
/// lambda_target, then spills to a fresh instance. Clusters without a usable
/// offer admit nothing.
inline Dispatch dispatch_workloads(const MatchPlan& plan, std::span<const int> labels,
                                   std::span<const Workload> reported, std::span<const double> arrivals) {
  Dispatch d;
  d.instance_of.assign(reported.size(), kUnassigned);
  std::vector<std::size_t> order(reported.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return arrivals[a] < arrivals[b]; });
  std::vector<int> open(plan.clusters.size(), kUnassigned);
  for (std::size_t idx : order) {
    const int c = labels[idx];
    if (c < 0 || static_cast<std::size_t>(c) >= plan.clusters.size()) continue;
    const auto& cm = plan.clusters[static_cast<std::size_t>(c)];
    if (!cm.populated || cm.per_infeasible) continue;
    const double load = alpha_tilde(reported[idx], cm.offer) / plan.alpha;
    int& inst = open[static_cast<std::size_t>(c)];
    if (inst == kUnassigned ||
        d.instances[static_cast<std::size_t>(inst)].admitted_load + load > plan.lambda_target) {
      d.instances.push_back({c, cm.offer, 0.0});
      inst = static_cast<int>(d.instances.size() - 1);
    }
    d.instances[static_cast<std::size_t>(inst)].admitted_load += load;
    d.instance_of[idx] = inst;
  }
  return d;
}

/// Fixed baseline: `count` identical VMs of one offer, filled round-robin.
inline Dispatch dispatch_fixed(const VmOffer& offer, std::size_t count, std::span<const std::size_t> order,
                               std::size_t workloads) {
  Dispatch d;
  d.instance_of.assign(workloads, kUnassigned);
  for (std::size_t v = 0; v < count; ++v) d.instances.push_back({kUnassigned, offer, 0.0});
  std::size_t next = 0;
  for (std::size_t idx : order) {
    d.instance_of[idx] = static_cast<int>(next);
    next = (next + 1) % count;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const ClusterMatch& m) {
  j = {{"populated", m.populated},
       {"feasible", m.feasible},
       {"at_risk", m.at_risk},
       {"per_infeasible", m.per_infeasible}};
  if (m.populated) {
    j["demand"] = m.demand;
    if (!m.per_infeasible) {
      j["offer"] = m.offer;
      j["catalog_index"] = m.catalog_index;
      j["alpha_tilde"] = m.alpha_tilde;
      j["alpha"] = m.alpha;
      j["lambda_headroom"] = m.lambda_headroom;
      j["service_time"] = m.service_time;
      j["link_per"] = m.link_per;
    }
  }
}

inline void to_json(nlohmann::json& j, const MatchPlan& p) {
  j = {{"lambda_target", p.lambda_target}, {"alpha", p.alpha}, {"clusters", p.clusters}};
}

}  // namespace fogsim
