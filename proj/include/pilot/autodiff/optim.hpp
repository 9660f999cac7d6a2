#pragma once

#include <vector>

#include "pilot/autodiff/params.hpp"

namespace pilot::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// One bias-corrected Adam update of every tensor in params.
void adam_step(ParameterGroup& params, const std::vector<Tensor>& grads, AdamState& state, const AdamConfig& config);

// Rescales grads so their global L2 norm is at most max_norm. Returns the norm
// before clipping.
double clip_gradients(std::vector<Tensor>& grads, double max_norm);

}  // namespace pilot::ad
