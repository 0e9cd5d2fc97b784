#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "fogsim/clustering.hpp"
#include "fogsim/errors.hpp"
#include "fogsim/matching.hpp"
#include "fogsim/rng.hpp"
#include "fogsim/vec.hpp"

namespace fogsim {

struct HardeningConfig {
  double iota = 1e-3;     // largest perturbation increment per ascent step
  double eta_at = 1e-3;   // ascent rate, also the centroid descent rate
  double eps_at = 0.04;   // radius of the perturbation set
  int pgd_iters = 50;
  std::size_t adv_set_size = 3000;
  int outer_epochs = 50;
  double temperature = 0.01;
  int robust_restarts = 4;
  std::size_t robust_eval_size = 500;  // leading training points scored for robust accuracy
  double robust_floor = 0.0;
  double max_centroid_step = 0.01;
  double t_classify = 0.0;  // measured seconds per classification
  double t_grad = 0.0;      // measured seconds per perturbation gradient

  void validate() const {
    if (!(iota > 0 && eta_at > 0 && eps_at > 0 && temperature > 0 && max_centroid_step > 0)) {
      throw ConfigError("hardening rates, radii and temperature must be positive");
    }
    if (iota > eps_at) throw ConfigError("iota must not exceed eps_at");
    if (pgd_iters < 1 || outer_epochs < 0 || robust_restarts < 1 || adv_set_size < 1) {
      throw ConfigError("invalid hardening iteration budget");
    }
  }
};

/// Which confusions count during training: harmful(y, k) says whether
/// serving a label-y request as cluster k is a violation. Empty = all.
class ConfusionMask {
 public:
  ConfusionMask() = default;
  explicit ConfusionMask(std::size_t clusters) : n_(clusters), bits_(clusters * clusters, 0) {}

  bool all() const { return bits_.empty(); }
  bool harmful(std::size_t y, std::size_t k) const { return all() || bits_[y * n_ + k] != 0; }
  void set(std::size_t y, std::size_t k, bool v) { bits_[y * n_ + k] = v ? 1 : 0; }

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Flags k as harmful for y when k's matched offer cannot serve y's corner
/// demand within deadline and PER tolerance.
inline ConfusionMask provisioning_mask(const MatchPlan& plan) {
  const std::size_t n = plan.clusters.size();
  ConfusionMask mask(n);
  for (std::size_t y = 0; y < n; ++y) {
    const auto& cy = plan.clusters[y];
    for (std::size_t k = 0; k < n; ++k) {
      if (k == y) continue;
      const auto& ck = plan.clusters[k];
      if (!cy.populated) {
        mask.set(y, k, false);
      } else if (!ck.populated || ck.per_infeasible) {
        mask.set(y, k, true);
      } else {
        const bool ok = alpha_tilde(cy.demand, ck.offer) <= plan.alpha && ck.offer.per <= cy.demand.per;
        mask.set(y, k, !ok);
      }
    }
  }
  return mask;
}

/// Differentiable relaxation of nearest-centroid labelling:
/// p_i proportional to exp(-||x - mu_i||^2 / T).
struct SoftClassifier {
  std::vector<Point> centroids;
  double temperature = 0.01;

  std::vector<double> probabilities(const Point& x) const {
    std::vector<double> logits(centroids.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < centroids.size(); ++i) {
      logits[i] = -squared_distance(x, centroids[i]) / temperature;
      top = std::max(top, logits[i]);
    }
    double z = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - top);
      z += l;
    }
    for (auto& l : logits) l /= z;
    return logits;
  }

  int hard_label(const Point& x) const { return nearest_centroid(centroids, x); }
};

inline std::vector<double> soft_assign(const SoftClassifier& cls, const Point& x) { return cls.probabilities(x); }

namespace detail {

// Softmax over label y and the clusters harmful for y.
inline std::vector<double> restricted_probs(const SoftClassifier& cls, const Point& x, std::size_t y,
                                            const ConfusionMask& mask, std::vector<std::size_t>& members) {
  members.clear();
  for (std::size_t k = 0; k < cls.centroids.size(); ++k) {
    if (k == y || mask.harmful(y, k)) members.push_back(k);
  }
  std::vector<double> q(members.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < members.size(); ++n) {
    q[n] = -squared_distance(x, cls.centroids[members[n]]) / cls.temperature;
    top = std::max(top, q[n]);
  }
  double z = 0.0;
  for (auto& v : q) {
    v = std::exp(v - top);
    z += v;
  }
  for (auto& v : q) v /= z;
  return q;
}

}  // namespace detail

/// Cross-entropy of the one-hot true label against the soft output.
inline double cross_entropy(const SoftClassifier& cls, const Point& x, int label, const ConfusionMask& mask = {}) {
  const auto y = static_cast<std::size_t>(label);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cls.centroids.size(); ++k) {
    if (k == y || mask.harmful(y, k)) top = std::max(top, -squared_distance(x, cls.centroids[k]) / cls.temperature);
  }
  double z = 0.0;
  for (std::size_t k = 0; k < cls.centroids.size(); ++k) {
    if (k == y || mask.harmful(y, k)) z += std::exp(-squared_distance(x, cls.centroids[k]) / cls.temperature - top);
  }
  const double ly = -squared_distance(x, cls.centroids[y]) / cls.temperature;
  return -(ly - top - std::log(z));
}

/// d(cross_entropy)/dx = (2/T) (sum_k q_k mu_k - mu_y).
inline Point cross_entropy_gradient(const SoftClassifier& cls, const Point& x, int label,
                                    const ConfusionMask& mask = {}) {
  std::vector<std::size_t> members;
  const auto q = detail::restricted_probs(cls, x, static_cast<std::size_t>(label), mask, members);
  Point mix{};
  for (std::size_t n = 0; n < members.size(); ++n) mix += q[n] * cls.centroids[members[n]];
  return (2.0 / cls.temperature) * (mix - cls.centroids[static_cast<std::size_t>(label)]);
}

namespace detail {

struct LossGrad {
  double loss = 0.0;
  Point grad{};
};

// Cross-entropy and its input gradient in one pass over the clusters.
inline LossGrad cross_entropy_with_gradient(const SoftClassifier& cls, const Point& x, int label,
                                            const ConfusionMask& mask, std::vector<double>& logits) {
  const auto y = static_cast<std::size_t>(label);
  const std::size_t k = cls.centroids.size();
  logits.assign(k, -std::numeric_limits<double>::infinity());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    if (c != y && !mask.harmful(y, c)) continue;
    logits[c] = -squared_distance(x, cls.centroids[c]) / cls.temperature;
    top = std::max(top, logits[c]);
  }
  double z = 0.0;
  Point mix{};
  for (std::size_t c = 0; c < k; ++c) {
    const double a = logits[c] - top;
    if (a < -60.0) continue;
    const double e = std::exp(a);
    z += e;
    mix += e * cls.centroids[c];
  }
  LossGrad out;
  out.loss = -(logits[y] - top - std::log(z));
  out.grad = (2.0 / cls.temperature) * ((1.0 / z) * mix - cls.centroids[y]);
  return out;
}

}  // namespace detail

/// PGD ascent on the cross-entropy inside the eps_at ball; each ascent
/// increment is capped at iota. Returns the highest-loss perturbation seen.
inline Point worst_case_perturbation(const SoftClassifier& cls, const Point& x, int label, const HardeningConfig& cfg,
                                     const ConfusionMask& mask = {}, Point start = {}) {
  std::vector<double> scratch;
  Point gamma = project_l2_ball(start, cfg.eps_at);
  auto lg = detail::cross_entropy_with_gradient(cls, x + gamma, label, mask, scratch);
  Point best = gamma;
  double best_loss = lg.loss;
  for (int it = 0; it < cfg.pgd_iters; ++it) {
    gamma = project_l2_ball(gamma + project_l2_ball(cfg.eta_at * lg.grad, cfg.iota), cfg.eps_at);
    lg = detail::cross_entropy_with_gradient(cls, x + gamma, label, mask, scratch);
    if (lg.loss > best_loss) {
      best_loss = lg.loss;
      best = gamma;
    }
  }
  return best;
}

inline Point random_in_ball(double radius, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Point d;
  for (auto& v : d) v = g(rng);
  const double n = norm(d);
  const double r = radius * std::pow(u(rng), 1.0 / static_cast<double>(kFeatures));
  return (n > 0.0 ? r / n : 0.0) * d;
}

/// Fraction of points whose hard label survives a restarted PGD attack; a
/// point fails when any restart lands it on a cluster counted by `mask`.
inline double robust_accuracy(const SoftClassifier& cls, std::span<const Point> points, std::span<const int> labels,
                              const HardeningConfig& cfg, const ConfusionMask& mask, Rng& rng, int restarts) {
  if (points.empty()) return 1.0;
  std::size_t survived = 0;
  for (std::size_t m = 0; m < points.size(); ++m) {
    const auto y = static_cast<std::size_t>(labels[m]);
    bool ok = true;
    for (int r = 0; r < restarts && ok; ++r) {
      const Point start = r == 0 ? Point{} : random_in_ball(cfg.eps_at, rng);
      const Point g = worst_case_perturbation(cls, points[m], labels[m], cfg, mask, start);
      const auto k = static_cast<std::size_t>(cls.hard_label(points[m] + g));
      if (k != y && mask.harmful(y, k)) ok = false;
    }
    if (ok) ++survived;
  }
  return static_cast<double>(survived) / static_cast<double>(points.size());
}

struct HardeningResult {
  ClusterModel model;
  double robust_before = 1.0;
  double robust_after = 1.0;
  int epochs = 0;
  bool below_floor = false;
};

/// Min-max hardening of the centroids. Inner: worst-case perturbation per
/// training point. Outer: gradient descent on the summed adversarial
/// cross-entropy with labels fixed at the clean assignment. The model keeps
/// its cluster count, normalizer and assignments.
inline HardeningResult adversarial_train(const ClusterModel& model, std::span<const Point> points,
                                         std::span<const int> labels, const HardeningConfig& cfg, Rng& rng,
                                         const ConfusionMask& mask = {}) {
  cfg.validate();
  HardeningResult res;
  res.model = model;
  if (cfg.outer_epochs == 0) {
    return res;
  }
  SoftClassifier cls{model.centroids, cfg.temperature};
  const std::size_t n_eval = std::min(points.size(), cfg.robust_eval_size);
  res.robust_before =
      robust_accuracy(cls, points.first(n_eval), labels.first(n_eval), cfg, mask, rng, cfg.robust_restarts);

  const std::size_t k = cls.centroids.size();
  std::vector<Point> grad(k);
  std::vector<std::size_t> members;
  for (int epoch = 0; epoch < cfg.outer_epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), Point{});
    for (std::size_t m = 0; m < points.size(); ++m) {
      const auto y = static_cast<std::size_t>(labels[m]);
      const Point xa = points[m] + worst_case_perturbation(cls, points[m], labels[m], cfg, mask);
      const auto q = detail::restricted_probs(cls, xa, y, mask, members);
      for (std::size_t n = 0; n < members.size(); ++n) {
        const std::size_t c = members[n];
        const double coeff = (c == y ? q[n] - 1.0 : q[n]) * 2.0 / cls.temperature;
        if (coeff == 0.0) continue;
        grad[c] += coeff * (xa - cls.centroids[c]);
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      cls.centroids[c] = cls.centroids[c] - project_l2_ball(cfg.eta_at * grad[c], cfg.max_centroid_step);
    }
    ++res.epochs;
  }
  res.model.centroids = cls.centroids;
  res.robust_after =
      robust_accuracy(cls, points.first(n_eval), labels.first(n_eval), cfg, mask, rng, cfg.robust_restarts);
  res.below_floor = res.robust_after < cfg.robust_floor;
  return res;
}

struct TrainingCost {
  double flop_scale = 0.0;      // |set| * dim * I * I_PGD
  double t_total = 0.0;         // |set| * t_c + |set| * I_PGD * t_grad
  double t_partitioned = 0.0;   // per node when the set is split over I nodes
};

inline TrainingCost training_cost_estimate(const HardeningConfig& cfg, std::size_t clusters) {
  TrainingCost c;
  const auto set = static_cast<double>(cfg.adv_set_size);
  const auto pgd = static_cast<double>(cfg.pgd_iters);
  c.flop_scale = set * static_cast<double>(kFeatures) * static_cast<double>(clusters) * pgd;
  c.t_total = set * cfg.t_classify + set * pgd * cfg.t_grad;
  c.t_partitioned = c.t_total / static_cast<double>(clusters);
  return c;
}

inline void to_json(nlohmann::json& j, const TrainingCost& c) {
  j = {{"flop_scale", c.flop_scale}, {"t_total", c.t_total}, {"t_partitioned", c.t_partitioned}};
}

}  // namespace fogsim
