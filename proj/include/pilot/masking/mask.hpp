#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pilot/autodiff/tensor.hpp"
#include "pilot/core/rng.hpp"
#include "pilot/networks/record.hpp"

namespace pilot::mask {

// x_drop: iid Bernoulli(rate) over the input layer only.
// x_aug:  with probability rate the whole input layer, else nothing.
// a_drop: iid Bernoulli(rate) over every non-logit position.
// a_aug:  with probability rate one non-logit layer, chosen uniformly, in full.
enum class MaskMode { x_drop, x_aug, a_drop, a_aug };

std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& name);

struct MaskPrior {
  MaskMode mode = MaskMode::a_aug;
  double rate = 0.5;

  void validate() const;  // rate must lie in (0, 1)
};

struct Mask {
  ad::Tensor bits;  // [N, layout.total()], entries 0 or 1
  MaskPrior prior;
  std::uint64_t seed = 0;
  // For the aug modes: the layer masked for each example, or -1.
  std::vector<int> layer_choice;

  std::size_t count() const;
  bool none() const { return count() == 0; }
};

Mask sample_mask(const MaskPrior& prior, const net::RecordLayout& layout, std::size_t batch, Rng& rng,
                 std::uint64_t seed = 0);

// An all-zero mask of the right shape.
Mask empty_mask(const net::RecordLayout& layout, std::size_t batch);

// out[i] = mask[i] ? imputed[i] : recorded[i]
ad::Tensor splice(const ad::Tensor& recorded, const ad::Tensor& imputed, const ad::Tensor& mask);

}  // namespace pilot::mask
