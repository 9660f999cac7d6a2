#include "pilot/autodiff/graph.hpp"

#include "pilot/core/error.hpp"

namespace pilot::ad {

const Tensor& Gradients::operator[](Var v) const { return at(v.id()); }

const Tensor& Gradients::at(std::size_t id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw UsageError("gradients: node " + std::to_string(id) + " is not a requires_grad leaf");
  return it->second;
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n{"leaf", std::move(value), {}, {}, requires_grad, true};
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
#ifndef NDEBUG
  if (!value.all_finite()) throw NumericalError(std::string("forward: non-finite output of op '") + op + "'");
#endif
  Node n{op, std::move(value), {}, {}, false, false};
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.graph_ != this) throw UsageError(std::string("op '") + op + "': input belongs to another graph");
    n.inputs.push_back(v.id());
    n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Gradients Graph::backward(Var loss) const {
  if (loss.graph_ != this) throw UsageError("backward: loss belongs to another graph");
  const Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root.value.shape()));
  }

  std::vector<Tensor> grads(loss.id() + 1);
  std::vector<bool> has(loss.id() + 1, false);
  grads[loss.id()] = Tensor(root.value.shape(), 1.0);
  has[loss.id()] = true;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!has[id] || !n.needs_grad || n.is_leaf) continue;
    if (!grads[id].all_finite()) {
      throw NumericalError("backward: non-finite gradient flowing into op '" + std::string(n.op) + "' (node " +
                           std::to_string(id) + ")");
    }
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : n.inputs) {
      in_values.push_back(&nodes_[in].value);
      if (nodes_[in].needs_grad) {
        if (!has[in]) {
          grads[in] = Tensor::zeros_like(nodes_[in].value);
          has[in] = true;
        }
        in_grads.push_back(&grads[in]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.backward(BackwardContext{n.value, grads[id], in_values, in_grads});
  }

  Gradients out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.is_leaf || !n.needs_grad) continue;
    if (id <= loss.id() && has[id]) {
      if (!grads[id].all_finite()) {
        throw NumericalError("backward: non-finite gradient at leaf node " + std::to_string(id));
      }
      out.grads_.emplace(id, std::move(grads[id]));
    } else {
      out.grads_.emplace(id, Tensor::zeros_like(n.value));
    }
  }
  return out;
}

}  // namespace pilot::ad
