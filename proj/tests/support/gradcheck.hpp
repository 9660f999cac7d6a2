#pragma once

#include <functional>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "pilot/autodiff/ops.hpp"

namespace oracle {

using OpFn = std::function<pilot::ad::Var(pilot::ad::Graph&, const std::vector<pilot::ad::Var>&)>;

// Projects op's output onto a fixed random tensor to get a scalar, then
// compares reverse-mode gradients with central differences.
inline GradCheck check_op(const OpFn& op, std::vector<pilot::ad::Tensor> inputs, std::mt19937_64& rng,
                          double h = 1e-5) {
  using namespace pilot::ad;
  Tensor proj;
  {
    Graph g;
    std::vector<Var> c;
    for (const auto& t : inputs) c.push_back(g.constant(t));
    const Tensor out = op(g, c).value();
    proj = random_tensor(out.shape(), rng);
  }
  auto loss = [&](Graph& g, const std::vector<Var>& v) {
    const Var o = op(g, v);
    return o.shape().empty() ? scale(o, proj.item()) : sum(mul(o, g.constant(proj)));
  };
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
    const Gradients grads = g.backward(loss(g, leaves));
    for (const Var& l : leaves) analytic.push_back(grads[l]);
  }
  std::vector<Tensor*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  auto value = [&] {
    Graph g;
    std::vector<Var> c;
    for (const auto& t : inputs) c.push_back(g.constant(t));
    return loss(g, c).value().item();
  };
  return finite_difference(value, ptrs, analytic, h);
}

}  // namespace oracle
