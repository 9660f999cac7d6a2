#include "pilot/masking/mask.hpp"

#include "pilot/core/error.hpp"

namespace pilot::mask {

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::x_drop: return "x_drop";
    case MaskMode::x_aug: return "x_aug";
    case MaskMode::a_drop: return "a_drop";
    case MaskMode::a_aug: return "a_aug";
  }
  return "?";
}

MaskMode parse_mask_mode(const std::string& name) {
  if (name == "x_drop" || name == "x-drop") return MaskMode::x_drop;
  if (name == "x_aug" || name == "x-aug") return MaskMode::x_aug;
  if (name == "a_drop" || name == "a-drop") return MaskMode::a_drop;
  if (name == "a_aug" || name == "a-aug") return MaskMode::a_aug;
  throw ConfigError("mask.mode", "unknown mask mode '" + name + "' (x_drop, x_aug, a_drop, a_aug)");
}

void MaskPrior::validate() const {
  if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("mask.rate", "must lie in (0,1), got " + std::to_string(rate));
}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (double b : bits.data()) n += b != 0.0;
  return n;
}

Mask empty_mask(const net::RecordLayout& layout, std::size_t batch) {
  Mask m;
  m.bits = ad::Tensor(ad::Shape{batch, layout.total()});
  m.layer_choice.assign(batch, -1);
  return m;
}

Mask sample_mask(const MaskPrior& prior, const net::RecordLayout& layout, std::size_t batch, Rng& rng,
                 std::uint64_t seed) {
  prior.validate();
  Mask m = empty_mask(layout, batch);
  m.prior = prior;
  m.seed = seed;
  const std::size_t total = layout.total();
  const std::size_t maskable_layers = layout.num_layers() - 1;
  for (std::size_t i = 0; i < batch; ++i) {
    double* row = m.bits.data().data() + i * total;
    auto fill_layer = [&](std::size_t l) {
      for (std::size_t j = 0; j < layout.width(l); ++j) row[layout.offset(l) + j] = 1.0;
      m.layer_choice[i] = static_cast<int>(l);
    };
    switch (prior.mode) {
      case MaskMode::x_drop:
        for (std::size_t j = 0; j < layout.width(0); ++j) row[j] = rng.bernoulli(prior.rate) ? 1.0 : 0.0;
        break;
      case MaskMode::x_aug:
        if (rng.bernoulli(prior.rate)) fill_layer(0);
        break;
      case MaskMode::a_drop:
        for (std::size_t j = 0; j < layout.maskable(); ++j) row[j] = rng.bernoulli(prior.rate) ? 1.0 : 0.0;
        break;
      case MaskMode::a_aug:
        if (rng.bernoulli(prior.rate)) fill_layer(rng.index(maskable_layers));
        break;
    }
  }
  return m;
}

ad::Tensor splice(const ad::Tensor& recorded, const ad::Tensor& imputed, const ad::Tensor& mask) {
  if (recorded.shape() != imputed.shape() || recorded.size() != mask.size()) {
    throw ShapeError("splice: recorded " + ad::shape_str(recorded.shape()) + ", imputed " + ad::shape_str(imputed.shape()) +
                     ", mask " + ad::shape_str(mask.shape()));
  }
  ad::Tensor out = recorded;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i] != 0.0) out[i] = imputed[i];
  return out;
}

}  // namespace pilot::mask
