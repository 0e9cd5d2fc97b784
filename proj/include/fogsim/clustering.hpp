#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <json.hpp>

#include "fogsim/domain.hpp"
#include "fogsim/errors.hpp"
#include "fogsim/rng.hpp"
#include "fogsim/vec.hpp"

namespace fogsim {

inline constexpr int kUnassigned = -1;

/// Nearest-centroid index; equidistant points go to the lowest index.
inline int nearest_centroid(std::span<const Point> centroids, const Point& x) {
  int best = kUnassigned;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    const double d = squared_distance(centroids[i], x);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

inline std::vector<int> assign_all(std::span<const Point> centroids, std::span<const Point> pts) {
  std::vector<int> out(pts.size());
  for (std::size_t m = 0; m < pts.size(); ++m) out[m] = nearest_centroid(centroids, pts[m]);
  return out;
}

/// Fitted two-phase k-means classifier state.
struct ClusterModel {
  std::vector<Point> centroids;
  std::vector<int> assignments;     // one label per point the model has absorbed
  std::vector<std::size_t> counts;  // running member count n_i per cluster
  FeatureNormalizer normalizer;
  double silhouette = 0.0;
  int iterations_used = 0;

  std::size_t cluster_count() const { return centroids.size(); }
  int classify(const Point& x) const { return nearest_centroid(centroids, x); }
};

struct OnlineConfig {
  double zeta1 = 0.9;
  double zeta2 = 0.1;
  int level_count = 3;

  void validate() const {
    if (!(zeta1 > 0.0 && zeta1 < 1.0)) throw ConfigError("zeta1 must lie in (0,1)");
    if (!(zeta2 > 0.0 && zeta2 < 1.0)) throw ConfigError("zeta2 must lie in (0,1)");
    if (level_count < 2) throw ConfigError("level count l must be >= 2");
  }
};

struct KMeansOptions {
  int max_iters = 100;
  double tol = 1e-6;
  // Called after each iteration with the Lloyd objective of the assignment
  // step of that iteration.
  std::function<void(int, double)> on_iteration;
};

// ---------------------------------------------------------------------------
// Level-based initialization

inline std::size_t cluster_count_for_levels(int l) {
  std::size_t n = 1;
  for (std::size_t f = 0; f < kFeatures; ++f) n *= static_cast<std::size_t>(l);
  return n;
}

/// Inverse option: choose I, derive l = round(I^(1/5)).
inline int levels_for_cluster_count(std::size_t clusters) {
  if (clusters < 1) throw ConfigError("cluster count must be >= 1");
  const int l = static_cast<int>(std::lround(std::pow(static_cast<double>(clusters), 0.2)));
  return std::max(l, 1);
}

// Linear-interpolated empirical quantile of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Midpoints of the l equal-frequency intervals of every feature.
inline std::array<std::vector<double>, kFeatures> level_midpoints(std::span<const Point> batch, int l) {
  std::array<std::vector<double>, kFeatures> mids;
  std::vector<double> column(batch.size());
  for (std::size_t f = 0; f < kFeatures; ++f) {
    for (std::size_t m = 0; m < batch.size(); ++m) column[m] = batch[m][f];
    std::sort(column.begin(), column.end());
    for (int k = 0; k < l; ++k) {
      const double lo = sorted_quantile(column, static_cast<double>(k) / l);
      const double hi = sorted_quantile(column, static_cast<double>(k + 1) / l);
      mids[f].push_back(0.5 * (lo + hi));
    }
  }
  return mids;
}

/// Level-combination midpoint vectors in lexicographic order (feature 0 slowest).
inline std::vector<Point> level_combinations(const std::array<std::vector<double>, kFeatures>& mids) {
  const std::size_t l = mids[0].size();
  const std::size_t total = cluster_count_for_levels(static_cast<int>(l));
  std::vector<Point> out(total);
  for (std::size_t c = 0; c < total; ++c) {
    std::size_t rem = c;
    for (std::size_t f = kFeatures; f-- > 0;) {
      out[c][f] = mids[f][rem % l];
      rem /= l;
    }
  }
  return out;
}

/// Seeds I = l^5 centroids at the batch points nearest to every combination
/// of per-feature percentile-interval midpoints. A point already taken is
/// skipped in favour of the next-nearest unused one.
inline std::vector<Point> level_init(std::span<const Point> batch, int l) {
  if (l < 1) throw ConfigError("level count must be >= 1");
  const std::size_t clusters = cluster_count_for_levels(l);
  if (batch.size() < clusters) {
    throw InsufficientDataError("level initialization needs at least l^5 = " +
                                std::to_string(clusters) + " points, got " +
                                std::to_string(batch.size()));
  }
  const auto targets = level_combinations(level_midpoints(batch, l));
  std::vector<bool> used(batch.size(), false);
  std::vector<Point> init;
  init.reserve(clusters);
  for (const auto& target : targets) {
    std::size_t best = batch.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < batch.size(); ++m) {
      if (used[m]) continue;
      const double d = squared_distance(batch[m], target);
      if (d < best_d) {
        best_d = d;
        best = m;
      }
    }
    used[best] = true;
    init.push_back(batch[best]);
  }
  return init;
}

/// Baseline seeding: k distinct batch points drawn uniformly at random.
inline std::vector<Point> random_init(std::span<const Point> batch, std::size_t k, Rng& rng) {
  if (batch.size() < k) throw InsufficientDataError("random init needs at least k points");
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<Point> out;
  for (std::size_t c = 0; c < k; ++c) {
    std::uniform_int_distribution<std::size_t> pick(c, idx.size() - 1);
    std::swap(idx[c], idx[pick(rng)]);
    out.push_back(batch[idx[c]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Silhouette

/// Mean silhouette over all points. Singleton clusters contribute 0; empty
/// cluster labels are ignored. Requires at least two populated clusters.
inline double silhouette_score(std::span<const Point> points, std::span<const int> labels) {
  if (points.size() != labels.size()) throw std::invalid_argument("points/labels size mismatch");
  int max_label = -1;
  for (int lab : labels) max_label = std::max(max_label, lab);
  std::vector<std::size_t> sizes(static_cast<std::size_t>(max_label + 1), 0);
  for (int lab : labels) ++sizes[static_cast<std::size_t>(lab)];
  const auto populated = std::count_if(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 0; });
  if (populated < 2) throw UndefinedScoreError("silhouette needs at least two populated clusters");

  const std::size_t n = points.size();
  std::vector<double> sums(sizes.size());
  double total = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const auto own = static_cast<std::size_t>(labels[p]);
    if (sizes[own] == 1) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t q = 0; q < n; ++q) {
      if (q == p) continue;
      sums[static_cast<std::size_t>(labels[q])] += distance(points[p], points[q]);
    }
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      if (c == own || sizes[c] == 0) continue;
      b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Offline k-means

inline double lloyd_objective(std::span<const Point> batch, std::span<const Point> centroids,
                              std::span<const int> labels) {
  double s = 0.0;
  for (std::size_t m = 0; m < batch.size(); ++m) {
    s += squared_distance(batch[m], centroids[static_cast<std::size_t>(labels[m])]);
  }
  return s;
}

inline double safe_silhouette(std::span<const Point> points, std::span<const int> labels) {
  try {
    return silhouette_score(points, labels);
  } catch (const UndefinedScoreError&) {
    return 0.0;
  }
}

/// Lloyd iterations until the largest centroid displacement drops below
/// `tol` or `max_iters` is hit. An emptied cluster is re-seeded at the point
/// farthest from its current centroid.
inline ClusterModel kmeans_offline(std::span<const Point> batch, std::vector<Point> init,
                                   const FeatureNormalizer& normalizer,
                                   const KMeansOptions& opts = {}) {
  if (init.empty()) throw std::invalid_argument("kmeans_offline: empty init");
  if (batch.empty()) throw std::invalid_argument("kmeans_offline: empty batch");
  const std::size_t k = init.size();
  std::vector<Point> centroids = std::move(init);
  std::vector<int> labels(batch.size(), 0);
  std::vector<Point> sums(k);
  std::vector<std::size_t> sizes(k);
  int iter = 0;
  for (iter = 1; iter <= opts.max_iters; ++iter) {
    labels = assign_all(centroids, batch);
    if (opts.on_iteration) opts.on_iteration(iter, lloyd_objective(batch, centroids, labels));

    std::fill(sums.begin(), sums.end(), Point{});
    std::fill(sizes.begin(), sizes.end(), 0);
    for (std::size_t m = 0; m < batch.size(); ++m) {
      const auto c = static_cast<std::size_t>(labels[m]);
      sums[c] += batch[m];
      ++sizes[c];
    }
    std::vector<bool> taken(batch.size(), false);
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      Point next;
      if (sizes[c] > 0) {
        next = (1.0 / static_cast<double>(sizes[c])) * sums[c];
      } else {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t m = 0; m < batch.size(); ++m) {
          if (taken[m]) continue;
          const double d = squared_distance(batch[m], centroids[static_cast<std::size_t>(labels[m])]);
          if (d > far_d) {
            far_d = d;
            far = m;
          }
        }
        taken[far] = true;
        next = batch[far];
      }
      shift = std::max(shift, distance(next, centroids[c]));
      centroids[c] = next;
    }
    if (shift < opts.tol) break;
  }

  ClusterModel model;
  model.iterations_used = std::min(iter, opts.max_iters);
  model.centroids = std::move(centroids);
  model.assignments = assign_all(model.centroids, batch);
  model.counts.assign(k, 0);
  for (int lab : model.assignments) ++model.counts[static_cast<std::size_t>(lab)];
  model.normalizer = normalizer;
  model.silhouette = safe_silhouette(batch, model.assignments);
  return model;
}

/// Level-initialized offline fit.
inline ClusterModel fit_offline(std::span<const Point> batch, int l, const FeatureNormalizer& normalizer,
                                const KMeansOptions& opts = {}) {
  return kmeans_offline(batch, level_init(batch, l), normalizer, opts);
}

/// Mean absolute per-feature displacement between two centroid sets, in
/// normalized units (fraction of each feature's fitted range).
inline double mean_centroid_deviation(std::span<const Point> from, std::span<const Point> to) {
  if (from.size() != to.size() || from.empty()) throw std::invalid_argument("centroid set mismatch");
  double s = 0.0;
  for (std::size_t c = 0; c < from.size(); ++c) {
    for (std::size_t f = 0; f < kFeatures; ++f) s += std::abs(to[c][f] - from[c][f]);
  }
  return s / static_cast<double>(from.size() * kFeatures);
}

// ---------------------------------------------------------------------------
// Online phase

enum class OnlinePath { kNoOp, kOnline, kRecluster };

inline const char* to_string(OnlinePath p) {
  switch (p) {
    case OnlinePath::kNoOp: return "noop";
    case OnlinePath::kOnline: return "online";
    case OnlinePath::kRecluster: return "recluster";
  }
  return "?";
}

struct OnlineResult {
  ClusterModel model;
  std::vector<int> labels;
  OnlinePath path = OnlinePath::kNoOp;
  double batch_silhouette = 0.0;
};

/// Silhouette of the batch under the model's nearest-centroid labelling. A
/// batch landing entirely in one cluster cannot form a new scheme and scores 1.
inline double batch_silhouette(std::span<const Point> batch, std::span<const int> labels) {
  try {
    return silhouette_score(batch, labels);
  } catch (const UndefinedScoreError&) {
    return 1.0;
  }
}

/// Classifies a new batch. Silhouette >= zeta1 keeps the clustering and
/// nudges far-away centroids by a running mean; otherwise history plus the
/// batch is re-clustered from a fresh level initialization.
inline OnlineResult classify_online(const ClusterModel& model, std::span<const Point> new_batch,
                                    const OnlineConfig& cfg, std::span<const Point> history,
                                    const KMeansOptions& kopts = {}) {
  OnlineResult out;
  out.model = model;
  if (new_batch.empty()) return out;

  out.labels = assign_all(model.centroids, new_batch);
  out.batch_silhouette = batch_silhouette(new_batch, out.labels);

  if (out.batch_silhouette >= cfg.zeta1) {
    out.path = OnlinePath::kOnline;
    auto& m = out.model;
    for (std::size_t p = 0; p < new_batch.size(); ++p) {
      const auto c = static_cast<std::size_t>(out.labels[p]);
      if (distance(new_batch[p], m.centroids[c]) >= cfg.zeta2) {
        m.centroids[c] += (1.0 / static_cast<double>(m.counts[c] + 1)) * (new_batch[p] - m.centroids[c]);
      }
      ++m.counts[c];
      m.assignments.push_back(out.labels[p]);
    }
    return out;
  }

  out.path = OnlinePath::kRecluster;
  std::vector<Point> combined(history.begin(), history.end());
  combined.insert(combined.end(), new_batch.begin(), new_batch.end());
  const auto old_labels = assign_all(model.centroids, combined);
  const double old_score = safe_silhouette(combined, old_labels);

  ClusterModel refit;
  bool refit_ok = combined.size() >= cluster_count_for_levels(cfg.level_count);
  if (refit_ok) {
    refit = fit_offline(combined, cfg.level_count, model.normalizer, kopts);
    refit_ok = refit.silhouette >= old_score - 1e-9;
  }
  if (!refit_ok) {
    // Keep the current geometry when a refit would score worse.
    refit.centroids = model.centroids;
    refit.assignments = old_labels;
    refit.counts.assign(model.centroids.size(), 0);
    for (int lab : old_labels) ++refit.counts[static_cast<std::size_t>(lab)];
    refit.normalizer = model.normalizer;
    refit.silhouette = old_score;
    refit.iterations_used = 0;
  }
  out.model = std::move(refit);
  out.labels.assign(out.model.assignments.end() - static_cast<std::ptrdiff_t>(new_batch.size()),
                    out.model.assignments.end());
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const ClusterModel& m) {
  j = {{"centroids", m.centroids},
       {"assignments", m.assignments},
       {"counts", m.counts},
       {"normalizer", m.normalizer},
       {"silhouette", m.silhouette},
       {"iterations_used", m.iterations_used}};
}

inline void from_json(const nlohmann::json& j, ClusterModel& m) {
  m.centroids = j.at("centroids").get<std::vector<Point>>();
  m.assignments = j.value("assignments", std::vector<int>{});
  m.counts = j.value("counts", std::vector<std::size_t>(m.centroids.size(), 0));
  m.normalizer = j.at("normalizer").get<FeatureNormalizer>();
  m.silhouette = j.at("silhouette").get<double>();
  m.iterations_used = j.at("iterations_used").get<int>();
}

}  // namespace fogsim
