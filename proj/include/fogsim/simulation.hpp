#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <queue>
#include <random>
#include <span>
#include <vector>

#include "fogsim/domain.hpp"
#include "fogsim/matching.hpp"
#include "fogsim/rng.hpp"

namespace fogsim {

struct ServiceOutcome {
  int cluster = kUnassigned;
  int instance = kUnassigned;
  double arrival = 0.0;
  double wait = 0.0;
  double transmission = 0.0;
  double service = 0.0;
  double completion = 0.0;  // wait + transmission + service
  double link_per = 0.0;
  bool served = false;
  bool dropped = false;
};

/// Poisson arrival instants starting at `start`.
inline std::vector<double> poisson_arrivals(std::size_t count, double rate, double start, Rng& rng) {
  std::exponential_distribution<double> gap(rate);
  std::vector<double> out(count);
  double t = start;
  for (auto& a : out) {
    t += gap(rng);
    a = t;
  }
  return out;
}

/// Per-instance FCFS service. Each request first crosses its own uplink
/// (transmission), then queues at the VM for one CPU burst and one IO burst.
/// `workloads` carries true demands; drops follow the deadline/PER predicate.
inline std::vector<ServiceOutcome> simulate_service(const Dispatch& dispatch, std::span<const int> clusters,
                                                    std::span<const Workload> workloads,
                                                    std::span<const double> arrivals, double alpha = 1.0) {
  const std::size_t n = workloads.size();
  std::vector<ServiceOutcome> out(n);

  // Event queue keyed by (ready time, index): a request becomes ready at the
  // VM once its transmission ends.
  using Event = std::pair<double, std::size_t>;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> ready;
  for (std::size_t m = 0; m < n; ++m) {
    auto& o = out[m];
    o.cluster = clusters.empty() ? kUnassigned : clusters[m];
    o.arrival = arrivals[m];
    o.instance = dispatch.instance_of[m];
    if (o.instance == kUnassigned) {
      o.dropped = true;
      continue;
    }
    const auto& offer = dispatch.instances[static_cast<std::size_t>(o.instance)].offer;
    o.transmission = workloads[m].size / (alpha * offer.cap);
    o.service = workloads[m].cpu / (alpha * offer.cpu_rate) + workloads[m].io / (alpha * offer.io_rate);
    o.link_per = offer.per;
    ready.emplace(o.arrival + o.transmission, m);
  }

  std::vector<double> free_at(dispatch.instances.size(), 0.0);
  while (!ready.empty()) {
    const auto [t_ready, m] = ready.top();
    ready.pop();
    auto& o = out[m];
    auto& vm_free = free_at[static_cast<std::size_t>(o.instance)];
    const double start = std::max(t_ready, vm_free);
    o.wait = start - t_ready;
    vm_free = start + o.service;
    o.completion = o.wait + o.transmission + o.service;
    o.served = true;
    o.dropped = o.completion > workloads[m].e2e || o.link_per > workloads[m].per;
  }
  return out;
}

inline double task_drop_ratio(std::span<const ServiceOutcome> outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("task_drop_ratio: no outcomes");
  const auto dropped = std::count_if(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.dropped; });
  return 100.0 * static_cast<double>(dropped) / static_cast<double>(outcomes.size());
}

/// 100/4 times the sum of the four demand/offer ratios.
inline double utilization_percent(const std::array<double, 4>& ratios) {
  return 25.0 * (ratios[0] + ratios[1] + ratios[2] + ratios[3]);
}

/// Per-instance utilization ratios over the instance's reservation window
/// (first arrival to the later of last deadline and last completion).
struct InstanceUtilization {
  std::array<double, 4> ratios{};  // cpu, io, link capacity, Eb/N0
  std::size_t members = 0;
};

inline std::vector<InstanceUtilization> instance_utilization(std::span<const ServiceOutcome> outcomes,
                                                             const Dispatch& dispatch,
                                                             std::span<const Workload> workloads,
                                                             const EbN0Table& table) {
  const std::size_t v_count = dispatch.instances.size();
  std::vector<InstanceUtilization> util(v_count);
  std::vector<double> first(v_count, std::numeric_limits<double>::infinity());
  std::vector<double> last(v_count, -std::numeric_limits<double>::infinity());
  std::vector<double> ebn0_sum(v_count, 0.0);
  for (std::size_t m = 0; m < outcomes.size(); ++m) {
    const auto& o = outcomes[m];
    if (!o.served) continue;
    const auto v = static_cast<std::size_t>(o.instance);
    const auto& offer = dispatch.instances[v].offer;
    const auto& w = workloads[m];
    auto& u = util[v];
    u.ratios[0] += w.cpu / offer.cpu_rate;
    u.ratios[1] += w.io / offer.io_rate;
    u.ratios[2] += w.size / offer.cap;
    ebn0_sum[v] += table.ebn0_linear(w.per) / table.ebn0_linear(offer.per);
    ++u.members;
    first[v] = std::min(first[v], o.arrival);
    last[v] = std::max(last[v], o.arrival + std::max(w.e2e, o.completion));
  }
  for (std::size_t v = 0; v < v_count; ++v) {
    auto& u = util[v];
    if (u.members == 0) continue;
    const double span = last[v] - first[v];
    for (std::size_t k = 0; k < 3; ++k) u.ratios[k] /= span;
    u.ratios[3] = ebn0_sum[v] / static_cast<double>(u.members);
  }
  return util;
}

/// Mean over active instances of the four-term utilization, in percent.
inline double resource_utilization(std::span<const InstanceUtilization> util) {
  double sum = 0.0;
  std::size_t active = 0;
  for (const auto& u : util) {
    if (u.members == 0) continue;
    sum += utilization_percent(u.ratios);
    ++active;
  }
  if (active == 0) throw std::invalid_argument("resource_utilization: no active instance");
  return sum / static_cast<double>(active);
}

inline double resource_utilization(std::span<const ServiceOutcome> outcomes, const Dispatch& dispatch,
                                   std::span<const Workload> workloads, const EbN0Table& table) {
  const auto util = instance_utilization(outcomes, dispatch, workloads, table);
  return resource_utilization(util);
}

}  // namespace fogsim
