#pragma once

// Independent reference computations used by the unit tests and the
// acceptance binary. None of these call into the library's own versions.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <vector>

#include "fogsim/vec.hpp"

namespace oracle {

using fogsim::Point;

inline double euclid(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) s += (a[f] - b[f]) * (a[f] - b[f]);
  return std::sqrt(s);
}

/// Textbook silhouette: per point, a = mean distance to its own cluster's
/// other members, b = min over other clusters of the mean distance.
inline double silhouette(const std::vector<Point>& pts, const std::vector<int>& labels) {
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t p = 0; p < pts.size(); ++p) members[labels[p]].push_back(p);
  double total = 0.0;
  for (std::size_t p = 0; p < pts.size(); ++p) {
    const auto& own = members[labels[p]];
    if (own.size() == 1) continue;
    double a = 0.0;
    for (std::size_t q : own) {
      if (q != p) a += euclid(pts[p], pts[q]);
    }
    a /= static_cast<double>(own.size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, idx] : members) {
      if (label == labels[p]) continue;
      double s = 0.0;
      for (std::size_t q : idx) s += euclid(pts[p], pts[q]);
      b = std::min(b, s / static_cast<double>(idx.size()));
    }
    const double d = std::max(a, b);
    total += d > 0.0 ? (b - a) / d : 0.0;
  }
  return total / static_cast<double>(pts.size());
}

/// Pollaczek-Khinchine mean queueing delay of an M/D/1 queue.
inline double md1_mean_wait(double rate, double service) {
  const double rho = rate * service;
  return rho * service / (2.0 * (1.0 - rho));
}

/// Central finite-difference gradient of a scalar function of a 5-vector.
inline Point numeric_gradient(const std::function<double(const Point&)>& f, const Point& x, double h = 1e-6) {
  Point g{};
  for (std::size_t k = 0; k < x.size(); ++k) {
    Point hi = x, lo = x;
    hi[k] += h;
    lo[k] -= h;
    g[k] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Point& analytic, const Point& numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
    scale = std::max(scale, std::abs(analytic[k]));
    scale = std::max(scale, std::abs(numeric[k]));
  }
  return std::sqrt(diff) / std::max(scale, 1e-12);
}

}  // namespace oracle
