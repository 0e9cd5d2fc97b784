#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fogsim/errors.hpp"
#include "fogsim/rng.hpp"
#include "fogsim/vec.hpp"

namespace fogsim {

inline constexpr std::array<const char*, kFeatures> kFeatureNames = {
    "cpu", "io", "e2e", "size", "per"};

/// Demand of one device request: FLOP, IOP, tolerated delay (s),
/// bytes to transmit and tolerated packet error rate.
struct Workload {
  double cpu = 0.0;
  double io = 0.0;
  double e2e = 0.0;
  double size = 0.0;
  double per = 0.0;

  Point as_array() const { return {cpu, io, e2e, size, per}; }
  static Workload from_array(const Point& a) { return {a[kCpu], a[kIo], a[kE2e], a[kSize], a[kPer]}; }

  bool valid() const {
    return cpu > 0.0 && io > 0.0 && e2e > 0.0 && size > 0.0 && per > 0.0 && per < 1.0;
  }
  bool operator==(const Workload&) const = default;
};

/// Capacity of a VM: FLOP/s, IOP/s, link bytes/s and link packet error rate.
struct VmOffer {
  double cpu_rate = 0.0;
  double io_rate = 0.0;
  double cap = 0.0;
  double per = 0.0;

  bool valid() const {
    return cpu_rate > 0.0 && io_rate > 0.0 && cap > 0.0 && per > 0.0 && per < 1.0;
  }
  bool operator==(const VmOffer&) const = default;
};

struct FeatureRange {
  double min = 0.0;
  double max = 0.0;
};

using FeatureRanges = std::array<FeatureRange, kFeatures>;

/// Per-feature min-max scaling fitted once on the offline batch and then
/// frozen. Out-of-range inputs map outside [0,1] without clamping.
class FeatureNormalizer {
 public:
  FeatureNormalizer() = default;
  explicit FeatureNormalizer(const FeatureRanges& ranges) : ranges_(ranges) {
    for (std::size_t f = 0; f < kFeatures; ++f) {
      if (!(ranges_[f].max > ranges_[f].min)) {
        throw DegenerateFeatureError(std::string("feature '") + kFeatureNames[f] +
                                     "' has max <= min");
      }
    }
  }

  Point normalize(const Workload& w) const {
    const Point raw = w.as_array();
    Point out;
    for (std::size_t f = 0; f < kFeatures; ++f) {
      out[f] = (raw[f] - ranges_[f].min) / (ranges_[f].max - ranges_[f].min);
    }
    return out;
  }

  Workload denormalize(const Point& p) const {
    Point raw;
    for (std::size_t f = 0; f < kFeatures; ++f) {
      raw[f] = ranges_[f].min + p[f] * (ranges_[f].max - ranges_[f].min);
    }
    return Workload::from_array(raw);
  }

  std::vector<Point> normalize(std::span<const Workload> batch) const {
    std::vector<Point> out;
    out.reserve(batch.size());
    for (const auto& w : batch) out.push_back(normalize(w));
    return out;
  }

  const FeatureRanges& ranges() const { return ranges_; }

 private:
  FeatureRanges ranges_{};
};

inline void validate_ranges(const FeatureRanges& ranges) {
  for (std::size_t f = 0; f < kFeatures; ++f) {
    const auto& r = ranges[f];
    if (!(r.min > 0.0) || !(r.max > r.min)) {
      throw ConfigError(std::string("invalid range for feature '") + kFeatureNames[f] +
                        "': need 0 < min < max");
    }
  }
  if (ranges[kPer].max >= 1.0) throw ConfigError("per range must stay below 1");
}

/// Draws `count` workloads with every feature independently uniform over its range.
inline std::vector<Workload> generate_workloads(std::size_t count, const FeatureRanges& ranges,
                                                Rng& rng) {
  if (count == 0) throw ConfigError("workload count must be >= 1");
  validate_ranges(ranges);
  std::vector<Workload> out;
  out.reserve(count);
  for (std::size_t m = 0; m < count; ++m) {
    Point raw;
    for (std::size_t f = 0; f < kFeatures; ++f) {
      std::uniform_real_distribution<double> dist(ranges[f].min, ranges[f].max);
      raw[f] = dist(rng);
    }
    out.push_back(Workload::from_array(raw));
  }
  return out;
}

inline std::vector<Workload> generate_workloads(std::size_t count, const FeatureRanges& ranges,
                                                std::uint64_t seed) {
  Rng rng(seed);
  return generate_workloads(count, ranges, rng);
}

inline FeatureNormalizer fit_normalizer(std::span<const Workload> batch) {
  if (batch.empty()) throw DegenerateFeatureError("cannot fit a normalizer on an empty batch");
  FeatureRanges ranges;
  for (auto& r : ranges) {
    r.min = std::numeric_limits<double>::infinity();
    r.max = -std::numeric_limits<double>::infinity();
  }
  for (const auto& w : batch) {
    const Point raw = w.as_array();
    for (std::size_t f = 0; f < kFeatures; ++f) {
      ranges[f].min = std::min(ranges[f].min, raw[f]);
      ranges[f].max = std::max(ranges[f].max, raw[f]);
    }
  }
  return FeatureNormalizer(ranges);
}

/// Maps an arbitrary (e.g. perturbed) feature vector back into the valid
/// workload domain: strictly positive fields, per below 1.
inline Workload clamp_to_valid(Workload w, const FeatureRanges& ref) {
  Point raw = w.as_array();
  for (std::size_t f = 0; f < kFeatures; ++f) {
    const double floor = ref[f].min * 1e-3;
    raw[f] = std::max(raw[f], floor);
  }
  raw[kPer] = std::min(raw[kPer], 0.999);
  return Workload::from_array(raw);
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const Workload& w) {
  j = {{"cpu", w.cpu}, {"io", w.io}, {"e2e", w.e2e}, {"size", w.size}, {"per", w.per}};
}
inline void from_json(const nlohmann::json& j, Workload& w) {
  w = {j.at("cpu").get<double>(), j.at("io").get<double>(), j.at("e2e").get<double>(),
       j.at("size").get<double>(), j.at("per").get<double>()};
}
inline void to_json(nlohmann::json& j, const VmOffer& o) {
  j = {{"cpu_rate", o.cpu_rate}, {"io_rate", o.io_rate}, {"cap", o.cap}, {"per", o.per}};
}
inline void from_json(const nlohmann::json& j, VmOffer& o) {
  o = {j.at("cpu_rate").get<double>(), j.at("io_rate").get<double>(), j.at("cap").get<double>(),
       j.at("per").get<double>()};
}
inline void to_json(nlohmann::json& j, const FeatureNormalizer& n) {
  j = nlohmann::json::object();
  for (std::size_t f = 0; f < kFeatures; ++f) {
    j[kFeatureNames[f]] = {{"min", n.ranges()[f].min}, {"max", n.ranges()[f].max}};
  }
}
inline void from_json(const nlohmann::json& j, FeatureNormalizer& n) {
  FeatureRanges r;
  for (std::size_t f = 0; f < kFeatures; ++f) {
    r[f] = {j.at(kFeatureNames[f]).at("min").get<double>(),
            j.at(kFeatureNames[f]).at("max").get<double>()};
  }
  n = FeatureNormalizer(r);
}

namespace csv {

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Reads data rows of a simple numeric CSV, skipping '#' comments and the
// header row (first non-comment line).
inline std::vector<std::vector<double>> read_numeric_rows(std::istream& in,
                                                          std::size_t expected_columns,
                                                          const std::string& what) {
  std::vector<std::vector<double>> rows;
  std::string line;
  bool header_seen = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    auto cells = split_line(line);
    if (cells.size() != expected_columns) {
      throw ConfigError(what + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(expected_columns) + " columns, got " +
                        std::to_string(cells.size()));
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw ConfigError(what + ":" + std::to_string(lineno) + ": not a number: '" + c + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace csv

inline void write_workloads_csv(std::ostream& out, std::span<const Workload> batch) {
  out << "# cpu: FLOP, io: IOP, e2e: seconds, size: bytes, per: probability\n";
  out << "cpu,io,e2e,size,per\n";
  for (const auto& w : batch) {
    out << csv::format_double(w.cpu) << ',' << csv::format_double(w.io) << ','
        << csv::format_double(w.e2e) << ',' << csv::format_double(w.size) << ','
        << csv::format_double(w.per) << '\n';
  }
}

inline std::vector<Workload> read_workloads_csv(std::istream& in) {
  std::vector<Workload> out;
  for (const auto& row : csv::read_numeric_rows(in, 5, "workloads")) {
    Workload w{row[0], row[1], row[2], row[3], row[4]};
    if (!w.valid()) throw ConfigError("workloads: invalid workload row");
    out.push_back(w);
  }
  return out;
}

inline void write_offers_csv(std::ostream& out, std::span<const VmOffer> offers) {
  out << "# cpu_rate: FLOP/s, io_rate: IOP/s, cap: bytes/s, per: probability\n";
  out << "cpu_rate,io_rate,cap,per\n";
  for (const auto& o : offers) {
    out << csv::format_double(o.cpu_rate) << ',' << csv::format_double(o.io_rate) << ','
        << csv::format_double(o.cap) << ',' << csv::format_double(o.per) << '\n';
  }
}

}  // namespace fogsim
