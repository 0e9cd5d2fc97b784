#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace fogsim {

inline constexpr std::size_t kFeatures = 5;

// Feature slots of a workload vector, in storage order.
enum Feature : std::size_t { kCpu = 0, kIo = 1, kE2e = 2, kSize = 3, kPer = 4 };

/// A point in the 5-D normalized feature space.
using Point = std::array<double, kFeatures>;

inline Point operator+(const Point& a, const Point& b) {
  Point r;
  for (std::size_t f = 0; f < kFeatures; ++f) r[f] = a[f] + b[f];
  return r;
}

inline Point operator-(const Point& a, const Point& b) {
  Point r;
  for (std::size_t f = 0; f < kFeatures; ++f) r[f] = a[f] - b[f];
  return r;
}

inline Point operator*(double s, const Point& a) {
  Point r;
  for (std::size_t f = 0; f < kFeatures; ++f) r[f] = s * a[f];
  return r;
}

inline Point& operator+=(Point& a, const Point& b) {
  for (std::size_t f = 0; f < kFeatures; ++f) a[f] += b[f];
  return a;
}

inline double dot(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t f = 0; f < kFeatures; ++f) s += a[f] * b[f];
  return s;
}

inline double squared_norm(const Point& a) { return dot(a, a); }
inline double norm(const Point& a) { return std::sqrt(squared_norm(a)); }

inline double squared_distance(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t f = 0; f < kFeatures; ++f) {
    const double d = a[f] - b[f];
    s += d * d;
  }
  return s;
}

inline double distance(const Point& a, const Point& b) {
  return std::sqrt(squared_distance(a, b));
}

/// Euclidean projection onto the closed l2 ball of the given radius.
inline Point project_l2_ball(const Point& v, double radius) {
  const double n = norm(v);
  if (n <= radius) return v;
  double s = radius / n;
  Point out = s * v;
  // Rounding can leave the scaled norm a few ulps above the radius.
  while (norm(out) > radius) {
    s = std::nextafter(s, 0.0);
    out = s * v;
  }
  return out;
}

}  // namespace fogsim
