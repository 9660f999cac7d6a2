#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pilot/autodiff/graph.hpp"

namespace pilot::ad {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Ordered collection of trainable tensors optimised together.
class ParameterGroup {
 public:
  ParameterGroup() = default;
  explicit ParameterGroup(std::string prefix) : prefix_(std::move(prefix)) {}

  // Returns the index of the new entry.
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const noexcept { return entries_.size(); }
  Tensor& operator[](std::size_t i) { return entries_.at(i).value; }
  const Tensor& operator[](std::size_t i) const { return entries_.at(i).value; }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  std::vector<NamedTensor>& entries() noexcept { return entries_; }
  const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
  const std::string& prefix() const noexcept { return prefix_; }
  std::size_t find(const std::string& name) const;  // throws when absent
  std::size_t num_values() const;

  // Registers every tensor as a requires_grad leaf of g, in entry order.
  std::vector<Var> bind(Graph& g) const;
  // Same, but as constants: the group is read-only in this graph.
  std::vector<Var> bind_constant(Graph& g) const;

  // FNV-1a over names, shapes and raw bytes.
  std::uint64_t checksum() const;

 private:
  std::string prefix_;
  std::vector<NamedTensor> entries_;
};

std::vector<Tensor> collect_gradients(const Gradients& grads, const std::vector<Var>& leaves);

double global_norm(const std::vector<Tensor>& grads);

}  // namespace pilot::ad
