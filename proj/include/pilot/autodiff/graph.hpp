#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "pilot/autodiff/tensor.hpp"

namespace pilot::ad {

class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

struct BackwardContext {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::span<const Tensor* const> in_values;
  // Null where the corresponding input does not need a gradient.
  std::span<Tensor* const> in_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

// Gradient of a scalar loss with respect to every requires_grad leaf.
class Gradients {
 public:
  const Tensor& operator[](Var v) const;
  const Tensor& at(std::size_t id) const;
  bool contains(Var v) const { return grads_.count(v.id()) != 0; }
  std::size_t size() const { return grads_.size(); }
  const std::unordered_map<std::size_t, Tensor>& map() const { return grads_; }

 private:
  friend class Graph;
  std::unordered_map<std::size_t, Tensor> grads_;
};

// Tape of recorded operations. Nodes are appended in execution order, which is
// a topological order, so backward is a single reverse sweep.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op node. The backward rule is dropped when no input needs a
  // gradient, so no-grad evaluation records values only.
  Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

  Gradients backward(Var loss) const;

  bool needs_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const char* op(std::size_t id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    const char* op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

}  // namespace pilot::ad
