#include "pilot/autodiff/optim.hpp"

#include <cmath>

#include "pilot/core/error.hpp"

namespace pilot::ad {

void adam_step(ParameterGroup& params, const std::vector<Tensor>& grads, AdamState& state, const AdamConfig& config) {
  if (!(config.lr > 0.0)) throw UsageError("adam: learning rate must be > 0, got " + std::to_string(config.lr));
  if (grads.size() != params.size()) throw ShapeError("adam: gradient count does not match parameter count");
  if (state.first_moment.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment.push_back(Tensor::zeros_like(params[i]));
      state.second_moment.push_back(Tensor::zeros_like(params[i]));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    if (g.shape() != p.shape()) {
      throw ShapeError("adam: gradient " + shape_str(g.shape()) + " vs parameter " + params.name(i) + " " +
                       shape_str(p.shape()));
    }
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g.data()) v *= k;
  }
  return norm;
}

}  // namespace pilot::ad
