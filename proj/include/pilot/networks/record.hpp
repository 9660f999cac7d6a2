#pragma once

#include <vector>

#include "pilot/autodiff/tensor.hpp"

namespace pilot::net {

// Widths of each recorded layer. Layer 0 is the input, the last layer holds the
// logits. Offsets index into the flattened per-example record.
class RecordLayout {
 public:
  RecordLayout() = default;
  explicit RecordLayout(std::vector<std::size_t> widths);

  std::size_t num_layers() const noexcept { return widths_.size(); }
  std::size_t width(std::size_t layer) const { return widths_.at(layer); }
  std::size_t offset(std::size_t layer) const { return offsets_.at(layer); }
  std::size_t total() const noexcept { return total_; }
  std::size_t logits_layer() const noexcept { return widths_.size() - 1; }
  // Positions outside the logits layer.
  std::size_t maskable() const noexcept { return total_ - widths_.back(); }
  std::size_t layer_of(std::size_t position) const;
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }

  bool operator==(const RecordLayout&) const = default;

 private:
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

// Raw pre-activations of one batched forward pass; layers[l] is [N, width(l)].
struct ActivationRecord {
  RecordLayout layout;
  std::vector<ad::Tensor> layers;

  std::size_t batch() const { return layers.empty() ? 0 : layers[0].dim(0); }
  // [N, layout.total()]
  ad::Tensor flatten() const;
  static ActivationRecord unflatten(const ad::Tensor& flat, const RecordLayout& layout);
};

}  // namespace pilot::net
