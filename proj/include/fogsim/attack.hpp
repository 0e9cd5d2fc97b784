#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fogsim/clustering.hpp"
#include "fogsim/domain.hpp"
#include "fogsim/errors.hpp"
#include "fogsim/rng.hpp"
#include "fogsim/vec.hpp"

namespace fogsim {

/// Black-box access to a deployed classifier: a query returns only a label.
/// Every call is counted; this is the attacker's sole view of the model.
class LabelOracle {
 public:
  using Fn = std::function<int(const Point&)>;

  explicit LabelOracle(Fn fn) : fn_(std::move(fn)) {}

  static LabelOracle from_model(const ClusterModel& model) {
    return LabelOracle([centroids = model.centroids](const Point& x) { return nearest_centroid(centroids, x); });
  }

  int operator()(const Point& x) const {
    queries_.fetch_add(1, std::memory_order_relaxed);
    return fn_(x);
  }

  std::uint64_t queries() const { return queries_.load(std::memory_order_relaxed); }

 private:
  Fn fn_;
  mutable std::atomic<std::uint64_t> queries_{0};
};

struct AttackConfig {
  std::size_t queries_per_boundary = 10;  // K
  double tau_ex = 0.5;
  double tau_ev = 0.5;
  double eta_ex = 1e-3;
  double eta_ev = 1e-3;
  double eps_ev = 0.04;
  double pair_proximity = 0.05;
  double bisect_tol = 0.005;
  std::size_t probe_seeds = 6000;
  int sgd_iters = 100;
  int pgd_iters = 500;
  double poison_fraction = 0.3;

  void validate() const {
    if (queries_per_boundary < 2) throw ConfigError("Q_ij must be >= 2");
    if (!(tau_ex > 0 && tau_ev > 0 && eta_ex > 0 && eta_ev > 0)) {
      throw ConfigError("attack tau/eta must be positive");
    }
    if (!(eps_ev > 0.0 && eps_ev < 1.0)) throw ConfigError("eps_ev must lie in (0,1)");
    if (!(pair_proximity > 0.0) || !(bisect_tol > 0.0) || bisect_tol > pair_proximity) {
      throw ConfigError("need 0 < bisect_tol <= pair_proximity");
    }
    if (probe_seeds < 2 || sgd_iters < 0 || pgd_iters < 1) throw ConfigError("invalid attack iteration budget");
    if (!(poison_fraction >= 0.0 && poison_fraction <= 1.0)) throw ConfigError("poison_fraction must lie in [0,1]");
  }
};

// ---------------------------------------------------------------------------
// Probing

struct LabeledQuery {
  Point q;
  int label = kUnassigned;
};

inline std::vector<int> probe_labels(const LabelOracle& oracle, std::span<const Point> queries) {
  std::vector<int> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(oracle(q));
  return out;
}

/// Two nearby queries carrying different labels; `a` is labeled `i`, `b` is
/// labeled `j`, with i < j.
struct BoundaryPair {
  Point a;
  Point b;
  int i = kUnassigned;
  int j = kUnassigned;

  double gap() const { return distance(a, b); }
  Point midpoint() const { return 0.5 * (a + b); }
};

namespace detail {

struct CellKey {
  std::array<std::int64_t, kFeatures> c;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = 0;
    for (auto v : k.c) h = mix64(h ^ static_cast<std::uint64_t>(v));
    return static_cast<std::size_t>(h);
  }
};

inline CellKey cell_of(const Point& p, double size) {
  CellKey k;
  for (std::size_t f = 0; f < kFeatures; ++f) k.c[f] = static_cast<std::int64_t>(std::floor(p[f] / size));
  return k;
}

}  // namespace detail

/// All differently-labeled query pairs whose distance is at most
/// `pair_proximity`, ordered by (i, j, gap).
inline std::vector<BoundaryPair> find_boundary_pairs(std::span<const LabeledQuery> queries,
                                                     double pair_proximity) {
  std::unordered_map<detail::CellKey, std::vector<std::size_t>, detail::CellHash> grid;
  for (std::size_t n = 0; n < queries.size(); ++n) {
    grid[detail::cell_of(queries[n].q, pair_proximity)].push_back(n);
  }
  const double limit = pair_proximity * pair_proximity;
  std::vector<BoundaryPair> out;
  for (std::size_t n = 0; n < queries.size(); ++n) {
    const auto base = detail::cell_of(queries[n].q, pair_proximity);
    for (int code = 0; code < 243; ++code) {
      detail::CellKey k = base;
      int rem = code;
      for (std::size_t f = 0; f < kFeatures; ++f) {
        k.c[f] += (rem % 3) - 1;
        rem /= 3;
      }
      auto it = grid.find(k);
      if (it == grid.end()) continue;
      for (std::size_t other : it->second) {
        if (other <= n) continue;
        const auto& qa = queries[n];
        const auto& qb = queries[other];
        if (qa.label == qb.label) continue;
        if (squared_distance(qa.q, qb.q) > limit) continue;
        if (qa.label < qb.label) {
          out.push_back({qa.q, qb.q, qa.label, qb.label});
        } else {
          out.push_back({qb.q, qa.q, qb.label, qa.label});
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const BoundaryPair& x, const BoundaryPair& y) {
    if (x.i != y.i) return x.i < y.i;
    if (x.j != y.j) return x.j < y.j;
    const double gx = x.gap(), gy = y.gap();
    if (gx != gy) return gx < gy;
    return x.a < y.a;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Boundary refinement

struct Hyperplane {
  Point normal{};  // unit norm
  double bias = 0.0;

  double eval(const Point& x) const { return dot(normal, x) + bias; }
};

/// Least-squares hyperplane through the points under ||normal|| = 1: the
/// normal is the scatter matrix's smallest eigenvector, the bias passes the
/// plane through the centroid. The sign makes `toward` point to the positive side.
inline Hyperplane fit_hyperplane(std::span<const Point> pts, const Point& toward) {
  Point mean{};
  for (const auto& p : pts) mean += p;
  mean = (1.0 / static_cast<double>(pts.size())) * mean;
  Eigen::Matrix<double, 5, 5> scatter = Eigen::Matrix<double, 5, 5>::Zero();
  for (const auto& p : pts) {
    Eigen::Matrix<double, 5, 1> d;
    for (std::size_t f = 0; f < kFeatures; ++f) d(static_cast<Eigen::Index>(f)) = p[f] - mean[f];
    scatter += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 5, 5>> solver(scatter);
  const auto v = solver.eigenvectors().col(0);
  Hyperplane h;
  for (std::size_t f = 0; f < kFeatures; ++f) h.normal[f] = v(static_cast<Eigen::Index>(f));
  if (dot(h.normal, toward) < 0.0) h.normal = -1.0 * h.normal;
  h.bias = -dot(h.normal, mean);
  return h;
}

/// Regularized refinement loss: squared plane residuals plus tau times the
/// squared drift of every query from its initial position.
inline double refinement_loss(std::span<const Point> queries, std::span<const Point> initial,
                              const Hyperplane& h, double tau) {
  double s = 0.0;
  for (std::size_t k = 0; k < queries.size(); ++k) {
    const double r = h.eval(queries[k]);
    s += r * r + tau * squared_distance(queries[k], initial[k]);
  }
  return s;
}

/// Gradient of refinement_loss with respect to each query.
inline std::vector<Point> refinement_gradient(std::span<const Point> queries, std::span<const Point> initial,
                                              const Hyperplane& h, double tau) {
  std::vector<Point> g(queries.size());
  for (std::size_t k = 0; k < queries.size(); ++k) {
    g[k] = 2.0 * (h.eval(queries[k]) * h.normal + tau * (queries[k] - initial[k]));
  }
  return g;
}

struct BoundaryEstimate {
  int i = kUnassigned;
  int j = kUnassigned;
  Hyperplane plane;
  std::vector<Point> initial_queries;
  std::vector<Point> support_queries;
  std::size_t pairs_used = 0;

  /// Signed plane value; positive on the side of cluster j.
  double side(const Point& x) const { return plane.eval(x); }
};

/// Seeds K queries at pair midpoints (tightest pairs first, padded with
/// jittered midpoints), then alternates a unit-norm plane fit with SGD steps
/// on the regularized residual loss.
inline BoundaryEstimate refine_boundary(std::span<const BoundaryPair> pairs, const AttackConfig& cfg, Rng& rng) {
  if (pairs.size() < 2) throw DegenerateBoundaryError("boundary refinement needs at least two pairs");
  const std::size_t k_total = cfg.queries_per_boundary;
  BoundaryEstimate est;
  est.i = pairs.front().i;
  est.j = pairs.front().j;
  est.pairs_used = std::min(pairs.size(), k_total);

  Point toward{};
  for (std::size_t p = 0; p < est.pairs_used; ++p) {
    toward += pairs[p].b - pairs[p].a;
    est.initial_queries.push_back(pairs[p].midpoint());
  }
  bool distinct = false;
  for (std::size_t p = 1; p < est.initial_queries.size(); ++p) {
    if (est.initial_queries[p] != est.initial_queries[0]) distinct = true;
  }
  if (!distinct) throw DegenerateBoundaryError("all pair midpoints coincide");

  std::normal_distribution<double> jitter(0.0, cfg.pair_proximity / 2.0);
  for (std::size_t p = 0; est.initial_queries.size() < k_total; ++p) {
    Point q = est.initial_queries[p % est.pairs_used];
    for (auto& v : q) v += jitter(rng);
    est.initial_queries.push_back(q);
  }

  // Plane fitted on the pair midpoints; jittered padding only takes part
  // in the query refinement.
  std::span<const Point> anchors(est.initial_queries.data(), est.pairs_used);
  est.support_queries = est.initial_queries;
  est.plane = fit_hyperplane(anchors.size() >= kFeatures ? anchors : std::span<const Point>(est.initial_queries),
                             toward);
  for (int it = 0; it < cfg.sgd_iters; ++it) {
    const auto g = refinement_gradient(est.support_queries, est.initial_queries, est.plane, cfg.tau_ex);
    for (std::size_t k = 0; k < est.support_queries.size(); ++k) {
      est.support_queries[k] = est.support_queries[k] - cfg.eta_ex * g[k];
    }
    est.plane = fit_hyperplane(std::span<const Point>(est.support_queries.data(),
                                                      std::max(est.pairs_used, std::min<std::size_t>(kFeatures, k_total))),
                               toward);
  }
  return est;
}

struct Discovery {
  std::vector<BoundaryEstimate> boundaries;
  std::map<int, Point> centroid_estimates;  // mean of uniform probes per label
  std::vector<LabeledQuery> queries;
  std::uint64_t query_count = 0;

  const BoundaryEstimate* find(int a, int b) const {
    const int lo = std::min(a, b), hi = std::max(a, b);
    auto it = std::lower_bound(boundaries.begin(), boundaries.end(), std::pair{lo, hi},
                               [](const BoundaryEstimate& e, const std::pair<int, int>& key) {
                                 return std::pair{e.i, e.j} < key;
                               });
    if (it != boundaries.end() && it->i == lo && it->j == hi) return &*it;
    return nullptr;
  }
};

namespace detail {

// Shrinks a label-changing segment to at most `tol`, logging every query.
inline BoundaryPair bisect(const LabelOracle& oracle, Point a, int la, Point b, int lb, double tol,
                           std::vector<LabeledQuery>& log) {
  while (distance(a, b) > tol) {
    const Point mid = 0.5 * (a + b);
    const int lm = oracle(mid);
    log.push_back({mid, lm});
    if (lm == la) {
      a = mid;
    } else {
      b = mid;
      lb = lm;
    }
  }
  if (la < lb) return {a, b, la, lb};
  return {b, a, lb, la};
}

inline std::vector<BoundaryPair> spread_pairs(std::span<const BoundaryPair> group, double min_separation) {
  std::vector<BoundaryPair> spread;
  for (const auto& p : group) {
    const bool near_existing = std::any_of(spread.begin(), spread.end(), [&](const BoundaryPair& s) {
      return distance(s.midpoint(), p.midpoint()) < min_separation;
    });
    if (!near_existing) spread.push_back(p);
  }
  return spread;
}

}  // namespace detail

/// Exploratory phase: uniform probes over the learned request domain, label
/// bisection between each probe and its nearest differently-labeled probe,
/// local densification around every label pair found, then boundary
/// refinement per label pair.
inline Discovery discover_boundaries(const LabelOracle& oracle, const AttackConfig& cfg, Rng& rng) {
  const auto before = oracle.queries();
  Discovery d;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point> seeds(cfg.probe_seeds);
  for (auto& s : seeds) {
    for (auto& v : s) v = unit(rng);
  }
  const auto seed_labels = probe_labels(oracle, seeds);
  std::map<int, std::pair<Point, std::size_t>> sums;
  for (std::size_t n = 0; n < seeds.size(); ++n) {
    d.queries.push_back({seeds[n], seed_labels[n]});
    auto& [sum, count] = sums[seed_labels[n]];
    sum += seeds[n];
    ++count;
  }
  for (const auto& [label, acc] : sums) {
    d.centroid_estimates[label] = (1.0 / static_cast<double>(acc.second)) * acc.first;
  }

  for (std::size_t n = 0; n < seeds.size(); ++n) {
    std::size_t partner = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < seeds.size(); ++o) {
      if (seed_labels[o] == seed_labels[n]) continue;
      const double dd = squared_distance(seeds[n], seeds[o]);
      if (dd < best) {
        best = dd;
        partner = o;
      }
    }
    if (partner == n) continue;
    detail::bisect(oracle, seeds[n], seed_labels[n], seeds[partner], seed_labels[partner], cfg.bisect_tol,
                   d.queries);
  }

  const auto pairs = find_boundary_pairs(d.queries, cfg.pair_proximity);
  const double separation = cfg.pair_proximity / 2.0;
  std::normal_distribution<double> offset(0.0, cfg.pair_proximity);
  std::vector<LabeledQuery> scratch;
  for (std::size_t start = 0; start < pairs.size();) {
    std::size_t end = start;
    while (end < pairs.size() && pairs[end].i == pairs[start].i && pairs[end].j == pairs[start].j) ++end;
    auto spread = detail::spread_pairs(std::span<const BoundaryPair>(pairs.data() + start, end - start), separation);
    start = end;

    // Densify: cross the boundary again along the pair direction at
    // randomly offset locations until K spread pairs exist.
    const int i = spread.front().i, j = spread.front().j;
    const std::size_t tries = 3 * cfg.queries_per_boundary;
    for (std::size_t t = 0; t < tries && spread.size() < cfg.queries_per_boundary; ++t) {
      const auto& base = spread[t % spread.size()];
      Point u = base.b - base.a;
      const double len = norm(u);
      if (len == 0.0) continue;
      u = (1.0 / len) * u;
      Point m = base.midpoint();
      for (auto& v : m) v += offset(rng);
      const Point lo = m - cfg.pair_proximity * u;
      const Point hi = m + cfg.pair_proximity * u;
      const int llo = oracle(lo), lhi = oracle(hi);
      d.queries.push_back({lo, llo});
      d.queries.push_back({hi, lhi});
      if (llo != i || lhi != j) continue;
      scratch.clear();
      const auto p = detail::bisect(oracle, lo, llo, hi, lhi, cfg.bisect_tol, scratch);
      d.queries.insert(d.queries.end(), scratch.begin(), scratch.end());
      if (p.i != i || p.j != j) continue;
      const bool near_existing = std::any_of(spread.begin(), spread.end(), [&](const BoundaryPair& s) {
        return distance(s.midpoint(), p.midpoint()) < separation;
      });
      if (!near_existing) spread.push_back(p);
    }
    if (spread.size() >= 2) {
      try {
        d.boundaries.push_back(refine_boundary(spread, cfg, rng));
      } catch (const DegenerateBoundaryError&) {
      }
    }
  }
  d.query_count = oracle.queries() - before;
  return d;
}

// ---------------------------------------------------------------------------
// Evasion

/// Evasion loss: squared distance to the target estimate minus tau times the
/// squared distance to the source centroid.
inline double evasion_loss(const Point& r, const Point& gamma, const Point& target, const Point& source,
                           double tau) {
  const Point x = r + gamma;
  return squared_distance(x, target) - tau * squared_distance(x, source);
}

inline Point evasion_gradient(const Point& r, const Point& gamma, const Point& target, const Point& source,
                              double tau) {
  const Point x = r + gamma;
  return 2.0 * (x - target) - (2.0 * tau) * (x - source);
}

inline constexpr std::array<Feature, 3> kDemandFeatures = {kCpu, kIo, kSize};

struct Victim {
  std::size_t index = 0;  // position in the online batch
  Point point{};          // normalized clean features
  int source = kUnassigned;
};

struct Evasion {
  std::size_t index = 0;
  Point gamma{};
  int source = kUnassigned;
  int target = kUnassigned;
  Feature witness = kCpu;  // demand feature lower at the target
  bool crossed = false;
};

struct EvasionResult {
  std::vector<Evasion> evasions;
  std::vector<std::size_t> skipped;  // victims without an eligible target
  std::uint64_t query_count = 0;

  double crossing_rate() const {
    if (evasions.empty()) return 0.0;
    const auto c = std::count_if(evasions.begin(), evasions.end(), [](const Evasion& e) { return e.crossed; });
    return static_cast<double>(c) / static_cast<double>(evasions.size());
  }
};

/// Demand features on which `target` sits below `source`.
inline std::optional<Feature> lower_demand_witness(const Point& source, const Point& target) {
  std::optional<Feature> best;
  double gap = 0.0;
  for (Feature f : kDemandFeatures) {
    const double g = source[f] - target[f];
    if (g > gap) {
      gap = g;
      best = f;
    }
  }
  return best;
}

inline double demand_deficit(const Point& source, const Point& target) {
  double s = 0.0;
  for (Feature f : kDemandFeatures) s += source[f] - target[f];
  return s;
}

/// Neighbouring clusters of `source` (per discovered boundaries) whose
/// estimated centroid is lower in at least one of cpu, io, size.
inline std::vector<int> eligible_targets(const Discovery& disc, int source) {
  std::vector<int> out;
  auto src = disc.centroid_estimates.find(source);
  if (src == disc.centroid_estimates.end()) return out;
  for (const auto& b : disc.boundaries) {
    if (b.i != source && b.j != source) continue;
    const int other = b.i == source ? b.j : b.i;
    auto tgt = disc.centroid_estimates.find(other);
    if (tgt == disc.centroid_estimates.end()) continue;
    if (lower_demand_witness(src->second, tgt->second)) out.push_back(other);
  }
  return out;
}

/// PGD evasion for each victim toward a lower-demand neighbour. Among
/// eligible neighbours whose estimated boundary lies within eps_ev, the one
/// with the largest demand deficit is attacked; otherwise the nearest one.
inline EvasionResult craft_evasions(const LabelOracle& oracle, std::span<const Victim> victims,
                                    const Discovery& disc, const AttackConfig& cfg) {
  const auto before = oracle.queries();
  EvasionResult res;
  for (const auto& v : victims) {
    const auto targets = eligible_targets(disc, v.source);
    if (targets.empty()) {
      res.skipped.push_back(v.index);
      continue;
    }
    const Point& src = disc.centroid_estimates.at(v.source);
    int pick = kUnassigned;
    double pick_deficit = -std::numeric_limits<double>::infinity();
    int nearest = kUnassigned;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (int t : targets) {
      const auto* b = disc.find(v.source, t);
      const double s = b->side(v.point);
      const double to_cross = (t == b->j) ? -s : s;
      if (to_cross < nearest_d) {
        nearest_d = to_cross;
        nearest = t;
      }
      if (to_cross <= cfg.eps_ev) {
        const double def = demand_deficit(src, disc.centroid_estimates.at(t));
        if (def > pick_deficit) {
          pick_deficit = def;
          pick = t;
        }
      }
    }
    if (pick == kUnassigned) pick = nearest;
    const Point& tgt = disc.centroid_estimates.at(pick);

    Evasion e;
    e.index = v.index;
    e.source = v.source;
    e.target = pick;
    e.witness = *lower_demand_witness(src, tgt);
    for (int it = 0; it < cfg.pgd_iters; ++it) {
      e.gamma = project_l2_ball(e.gamma - cfg.eta_ev * evasion_gradient(v.point, e.gamma, tgt, src, cfg.tau_ev),
                                cfg.eps_ev);
    }
    e.crossed = oracle(v.point + e.gamma) == pick;
    res.evasions.push_back(e);
  }
  res.query_count = oracle.queries() - before;
  return res;
}

/// Picks up to poison_fraction of the batch, uniformly among members whose
/// probed label has an eligible lower-demand neighbour.
inline std::vector<Victim> select_victims(const LabelOracle& oracle, std::span<const Point> batch,
                                          const Discovery& disc, double poison_fraction, Rng& rng) {
  std::vector<Victim> pool;
  for (std::size_t m = 0; m < batch.size(); ++m) {
    const int label = oracle(batch[m]);
    if (!eligible_targets(disc, label).empty()) pool.push_back({m, batch[m], label});
  }
  const auto want = std::min(pool.size(), static_cast<std::size_t>(std::floor(poison_fraction * batch.size())));
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(want);
  std::sort(pool.begin(), pool.end(), [](const Victim& a, const Victim& b) { return a.index < b.index; });
  return pool;
}

/// Replaces each victim's reported features with its perturbed version,
/// mapped back to raw units and into the valid workload domain.
inline std::vector<Workload> causative_inject(const EvasionResult& poisoned, std::span<const Workload> stream,
                                              const FeatureNormalizer& normalizer) {
  std::vector<Workload> out(stream.begin(), stream.end());
  for (const auto& e : poisoned.evasions) {
    const Point p = normalizer.normalize(stream[e.index]) + e.gamma;
    out[e.index] = clamp_to_valid(normalizer.denormalize(p), normalizer.ranges());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reporting

inline double angle_between_degrees(const Point& a, const Point& b) {
  const double c = std::clamp(dot(a, b) / (norm(a) * norm(b)), -1.0, 1.0);
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

inline void to_json(nlohmann::json& j, const BoundaryEstimate& b) {
  j = {{"i", b.i},
       {"j", b.j},
       {"normal", b.plane.normal},
       {"bias", b.plane.bias},
       {"pairs_used", b.pairs_used},
       {"support_queries", b.support_queries}};
}

}  // namespace fogsim
