#include "pilot/networks/record.hpp"

#include <algorithm>
#include <cstring>

#include "pilot/core/error.hpp"

namespace pilot::net {

RecordLayout::RecordLayout(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw ShapeError("record layout needs an input and an output layer");
  offsets_.reserve(widths_.size());
  for (std::size_t w : widths_) {
    offsets_.push_back(total_);
    total_ += w;
  }
}

std::size_t RecordLayout::layer_of(std::size_t position) const {
  if (position >= total_) throw ShapeError("record position " + std::to_string(position) + " out of range");
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), position);
  return static_cast<std::size_t>(it - offsets_.begin()) - 1;
}

ad::Tensor ActivationRecord::flatten() const {
  const std::size_t n = batch();
  const std::size_t total = layout.total();
  ad::Tensor out(ad::Shape{n, total});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t w = layout.width(l);
    if (layers[l].size() != n * w) throw ShapeError("activation record: layer " + std::to_string(l) + " has wrong size");
    for (std::size_t i = 0; i < n; ++i)
      std::memcpy(&out[i * total + layout.offset(l)], &layers[l][i * w], w * sizeof(double));
  }
  return out;
}

ActivationRecord ActivationRecord::unflatten(const ad::Tensor& flat, const RecordLayout& layout) {
  if (flat.rank() != 2 || flat.dim(1) != layout.total()) {
    throw ShapeError("activation record: flat tensor " + ad::shape_str(flat.shape()) + " does not match layout total " +
                     std::to_string(layout.total()));
  }
  const std::size_t n = flat.dim(0);
  ActivationRecord rec{layout, {}};
  for (std::size_t l = 0; l < layout.num_layers(); ++l) {
    const std::size_t w = layout.width(l);
    ad::Tensor t(ad::Shape{n, w});
    for (std::size_t i = 0; i < n; ++i)
      std::memcpy(&t[i * w], &flat[i * layout.total() + layout.offset(l)], w * sizeof(double));
    rec.layers.push_back(std::move(t));
  }
  return rec;
}

}  // namespace pilot::net
