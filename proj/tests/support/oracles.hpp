#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pilot/autodiff/tensor.hpp"

namespace oracle {

struct GradCheck {
  double max_rel = 0;  // |a - f| / max(|a| + |f|, floor)
  double max_abs = 0;
  std::size_t checked = 0;
};

// Central differences of value() with respect to every entry of params
// (or a random sample of at most max_entries per tensor), against the
// analytic gradients. params are perturbed in place and restored.
inline GradCheck finite_difference(const std::function<double()>& value, const std::vector<pilot::ad::Tensor*>& params,
                                   const std::vector<pilot::ad::Tensor>& analytic, double h = 1e-5,
                                   std::size_t max_entries = 0, unsigned seed = 0, double floor = 1e-6) {
  GradCheck out;
  std::mt19937_64 rng(seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    pilot::ad::Tensor& t = *params[p];
    std::vector<std::size_t> idx(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_entries && idx.size() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
    }
    for (std::size_t i : idx) {
      const double orig = t[i];
      t[i] = orig + h;
      const double up = value();
      t[i] = orig - h;
      const double down = value();
      t[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double a = analytic[p][i];
      const double err = std::abs(a - fd);
      out.max_abs = std::max(out.max_abs, err);
      out.max_rel = std::max(out.max_rel, err / std::max(std::abs(a) + std::abs(fd), floor));
      ++out.checked;
    }
  }
  return out;
}

inline pilot::ad::Tensor random_tensor(pilot::ad::Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  pilot::ad::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.storage()) v = u(rng);
  return t;
}

// Values bounded away from zero (for relu and friends).
inline pilot::ad::Tensor away_from_zero(pilot::ad::Shape shape, std::mt19937_64& rng, double margin = 0.05) {
  pilot::ad::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.storage()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

// KL(N(m1, v1) || N(m2, v2)) for one dimension, from the textbook formula.
inline double kl_1d(double m1, double v1, double m2, double v2) {
  return 0.5 * (std::log(v2 / v1) + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0);
}

inline double log_normal(double x, double m, double v) {
  return -0.5 * (std::log(2 * M_PI * v) + (x - m) * (x - m) / v);
}

// P(correct) for equidistant isotropic clusters, by brute-force simulation.
inline double simulate_blob_accuracy(std::size_t classes, double separation, std::size_t trials, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  const double a = separation / std::sqrt(2.0);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const double own = a + n01(rng);
    bool best = true;
    for (std::size_t k = 1; k < classes; ++k) best &= n01(rng) < own;
    hits += best;
  }
  return double(hits) / double(trials);
}

}  // namespace oracle
