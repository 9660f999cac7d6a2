#include "pilot/autodiff/params.hpp"

#include <cmath>
#include <cstring>

#include "pilot/core/error.hpp"

namespace pilot::ad {

std::size_t ParameterGroup::add(std::string name, Tensor value) {
  for (const auto& e : entries_)
    if (e.name == name) throw UsageError("parameter group '" + prefix_ + "': duplicate name " + name);
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.size() - 1;
}

std::size_t ParameterGroup::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw UsageError("parameter group '" + prefix_ + "': no parameter named " + name);
}

std::size_t ParameterGroup::num_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::vector<Var> ParameterGroup::bind(Graph& g) const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(g.leaf(e.value, true));
  return out;
}

std::vector<Var> ParameterGroup::bind_constant(Graph& g) const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(g.constant(e.value));
  return out;
}

std::uint64_t ParameterGroup::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : entries_) {
    feed(e.name.data(), e.name.size());
    for (std::size_t d : e.value.shape()) feed(&d, sizeof d);
    feed(e.value.data().data(), e.value.size() * sizeof(double));
  }
  return h;
}

std::vector<Tensor> collect_gradients(const Gradients& grads, const std::vector<Var>& leaves) {
  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (const Var& v : leaves) out.push_back(grads[v]);
  return out;
}

double global_norm(const std::vector<Tensor>& grads) {
  double acc = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) acc += v * v;
  return std::sqrt(acc);
}

}  // namespace pilot::ad
