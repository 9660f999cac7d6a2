#include "pilot/networks/classifier.hpp"

#include <cmath>
#include <cstring>

#include "pilot/core/error.hpp"

namespace pilot::net {

void ClassifierSpec::validate() const {
  if (num_classes < 2) throw UsageError("classifier: num_classes must be >= 2");
  if (input_shape.empty() || input_size() == 0) throw UsageError("classifier: empty input shape");
  if (kind == ClassifierKind::mlp) {
    if (hidden.empty()) throw UsageError("classifier: an MLP needs at least one hidden layer");
  } else {
    if (input_shape.size() != 3) throw UsageError("classifier: a CNN needs a {C,H,W} input shape, got " + ad::shape_str(input_shape));
    if (conv_channels.empty()) throw UsageError("classifier: a CNN needs at least one conv layer");
    if (kernel % 2 == 0) throw UsageError("classifier: conv kernel must be odd");
    if (pool == 0 || input_shape[1] < pool || input_shape[2] < pool) throw UsageError("classifier: pool window too large");
  }
  for (std::size_t h : hidden)
    if (h == 0) throw UsageError("classifier: zero-width hidden layer");
  for (std::size_t c : conv_channels)
    if (c == 0) throw UsageError("classifier: zero-channel conv layer");
}

Classifier::Classifier(ClassifierSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Classifier::Classifier(ClassifierSpec spec, Rng& rng) : Classifier(std::move(spec)) { build(&rng); }

void Classifier::build(Rng* rng) {
  std::vector<std::size_t> widths{spec_.input_size()};
  auto init = [rng](ad::Shape shape, std::size_t fan_in, double gain) {
    ad::Tensor t(std::move(shape));
    if (rng) {
      const double sd = std::sqrt(gain / static_cast<double>(fan_in));
      for (double& v : t.data()) v = rng->normal(0.0, sd);
    }
    return t;
  };
  std::size_t bn_slots = 0;
  auto add_bn = [&](Layer& layer, std::size_t features, const std::string& tag) {
    if (!spec_.batch_norm) return;
    layer.gamma = params_.add(tag + ".gamma", ad::Tensor(ad::Shape{features}, 1.0));
    layer.beta = params_.add(tag + ".beta", ad::Tensor(ad::Shape{features}, 0.0));
    layer.bn_slot = bn_slots++;
    running_mean_.emplace_back(ad::Shape{features}, 0.0);
    running_var_.emplace_back(ad::Shape{features}, 1.0);
  };

  std::size_t in = spec_.input_size();
  if (spec_.kind == ClassifierKind::cnn) {
    std::size_t c = spec_.input_shape[0];
    const std::size_t h = spec_.input_shape[1], w = spec_.input_shape[2];
    const std::size_t k = spec_.kernel;
    for (std::size_t i = 0; i < spec_.conv_channels.size(); ++i) {
      const std::size_t o = spec_.conv_channels[i];
      const std::string tag = "conv" + std::to_string(i);
      Layer layer;
      layer.conv = true;
      layer.weight = params_.add(tag + ".W", init({o, c, k, k}, c * k * k, 2.0));
      weight_indices_.push_back(layer.weight);
      layer.bias = params_.add(tag + ".b", ad::Tensor(ad::Shape{o}));
      add_bn(layer, o, tag);
      layer.channels = o;
      layer.height = h;
      layer.width = w;
      layer.record_layer = widths.size();
      layer.pool_after = i + 1 == spec_.conv_channels.size();
      widths.push_back(o * h * w);
      plan_.push_back(layer);
      c = o;
    }
    in = c * (h / spec_.pool) * (w / spec_.pool);
  }
  for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
    const std::size_t out = spec_.hidden[i];
    const std::string tag = "dense" + std::to_string(i);
    Layer layer;
    layer.weight = params_.add(tag + ".W", init({in, out}, in, 2.0));
    weight_indices_.push_back(layer.weight);
    layer.bias = params_.add(tag + ".b", ad::Tensor(ad::Shape{out}));
    add_bn(layer, out, tag);
    layer.record_layer = widths.size();
    widths.push_back(out);
    plan_.push_back(layer);
    in = out;
  }
  Layer head;
  head.output = true;
  head.weight = params_.add("out.W", init({in, spec_.num_classes}, in, 1.0));
  weight_indices_.push_back(head.weight);
  head.bias = params_.add("out.b", ad::Tensor(ad::Shape{spec_.num_classes}));
  head.record_layer = widths.size();
  widths.push_back(spec_.num_classes);
  plan_.push_back(head);
  layout_ = RecordLayout(std::move(widths));
}

GraphPass Classifier::forward(ad::Graph& g, const std::vector<ad::Var>& psi, ad::Var x, const ForwardOptions& opts) const {
  if (psi.size() != params_.size()) throw ShapeError("classifier forward: expected " + std::to_string(params_.size()) + " parameter nodes");
  const ad::Shape& xs = x.shape();
  ad::Shape expected{xs.empty() ? 0 : xs[0]};
  expected.insert(expected.end(), spec_.input_shape.begin(), spec_.input_shape.end());
  const bool flat_ok = xs.size() == 2 && xs[1] == spec_.input_size();
  if (xs != expected && !flat_ok) {
    throw ShapeError("classifier forward: input shape " + ad::shape_str(xs) + ", expected " + ad::shape_str(expected));
  }
  const std::size_t n = xs[0];
  if (opts.train && spec_.batch_norm && n < 2) throw UsageError("batch norm: training mode needs a batch of at least 2, got " + std::to_string(n));

  const std::vector<ad::Tensor>* masks = opts.splice ? opts.splice->masks : nullptr;
  if (masks && masks->size() != layout_.num_layers()) throw ShapeError("classifier forward: mask has wrong number of layers");
  auto splice_at = [&](std::size_t layer, ad::Var flat) {
    if (!masks || (*masks)[layer].empty()) return flat;
    const ad::Tensor& m = (*masks)[layer];
    if (m.size() != flat.size()) {
      throw ShapeError("classifier forward: mask for layer " + std::to_string(layer) + " has shape " + ad::shape_str(m.shape()) +
                       ", layer is " + ad::shape_str(flat.shape()));
    }
    return ad::select(m, opts.splice->insert(layer, flat), flat);
  };

  GraphPass pass;
  ad::Var h = splice_at(0, xs.size() == 2 ? x : ad::reshape(x, {n, spec_.input_size()}));
  pass.pre.push_back(h);
  if (spec_.kind == ClassifierKind::cnn) h = ad::reshape(h, expected);

  for (const Layer& layer : plan_) {
    ad::Var pre = layer.conv ? ad::conv2d(h, psi[layer.weight], psi[layer.bias])
                             : ad::add(ad::matmul(h, psi[layer.weight]), psi[layer.bias]);
    if (layer.output) {
      pass.pre.push_back(pre);
      pass.logits = pre;
      break;
    }
    if (layer.gamma != kNone) {
      if (opts.train) {
        auto bn = ad::batch_norm(pre, psi[layer.gamma], psi[layer.beta], kBatchNormEps);
        pre = bn.out;
        pass.bn_mean.push_back(std::move(bn.batch_mean));
        pass.bn_var.push_back(std::move(bn.batch_var));
      } else {
        const ad::Tensor& gamma = params_[layer.gamma];
        const ad::Tensor& beta = params_[layer.beta];
        const ad::Tensor& rm = running_mean_[layer.bn_slot];
        const ad::Tensor& rv = running_var_[layer.bn_slot];
        const std::size_t f = gamma.size();
        const std::size_t spatial = layer.conv ? layer.height * layer.width : 1;
        ad::Shape s = layer.conv ? ad::Shape{f, layer.height, layer.width} : ad::Shape{f};
        ad::Tensor mul_t(s), add_t(s);
        for (std::size_t c = 0; c < f; ++c) {
          const double k = gamma[c] / std::sqrt(rv[c] + kBatchNormEps);
          for (std::size_t i = 0; i < spatial; ++i) {
            mul_t[c * spatial + i] = k;
            add_t[c * spatial + i] = beta[c] - rm[c] * k;
          }
        }
        pre = ad::add(ad::mul(pre, g.constant(std::move(mul_t))), g.constant(std::move(add_t)));
      }
    }
    const std::size_t width = layout_.width(layer.record_layer);
    ad::Var flat = splice_at(layer.record_layer, layer.conv ? ad::reshape(pre, {n, width}) : pre);
    pass.pre.push_back(flat);
    pre = layer.conv ? ad::reshape(flat, {n, layer.channels, layer.height, layer.width}) : flat;
    h = ad::relu(pre);
    if (!layer.conv && opts.on_hidden) h = opts.on_hidden(layer.record_layer, h);
    if (layer.pool_after) {
      h = ad::maxpool2d(h, spec_.pool);
      const ad::Shape& ps = h.shape();
      h = ad::reshape(h, {n, ps[1] * ps[2] * ps[3]});
    }
  }
  return pass;
}

void Classifier::update_running_stats(const GraphPass& pass) {
  if (pass.bn_mean.size() != running_mean_.size()) return;
  for (std::size_t i = 0; i < running_mean_.size(); ++i) {
    const ad::Tensor& bm = pass.bn_mean[i];
    const ad::Tensor& bv = pass.bn_var[i];
    for (std::size_t c = 0; c < bm.size(); ++c) {
      running_mean_[i][c] = kBatchNormMomentum * running_mean_[i][c] + (1.0 - kBatchNormMomentum) * bm[c];
      running_var_[i][c] = kBatchNormMomentum * running_var_[i][c] + (1.0 - kBatchNormMomentum) * bv[c];
    }
  }
}

RecordedPass Classifier::forward_record(const ad::Tensor& x) const {
  ad::Graph g;
  const auto psi = params_.bind_constant(g);
  GraphPass pass = forward(g, psi, g.constant(x), {});
  RecordedPass out{pass.logits.value(), ActivationRecord{layout_, {}}};
  for (const ad::Var& v : pass.pre) out.record.layers.push_back(v.value());
  return out;
}

ad::Tensor Classifier::logits(const ad::Tensor& x) const {
  ad::Graph g;
  const auto psi = params_.bind_constant(g);
  return forward(g, psi, g.constant(x), {}).logits.value();
}

ad::Tensor Classifier::predict(const ad::Tensor& x) const {
  ad::Graph g;
  const auto psi = params_.bind_constant(g);
  return ad::softmax(forward(g, psi, g.constant(x), {}).logits).value();
}

std::vector<ad::Tensor> split_mask(const ad::Tensor& flat_mask, const RecordLayout& layout) {
  if (flat_mask.rank() != 2 || flat_mask.dim(1) != layout.total()) {
    throw ShapeError("mask shape " + ad::shape_str(flat_mask.shape()) + " does not match record width " +
                     std::to_string(layout.total()));
  }
  const std::size_t n = flat_mask.dim(0);
  std::vector<ad::Tensor> out(layout.num_layers());
  for (std::size_t l = 0; l < layout.num_layers(); ++l) {
    const std::size_t w = layout.width(l), off = layout.offset(l);
    bool any = false;
    ad::Tensor t(ad::Shape{n, w});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double b = flat_mask[i * layout.total() + off + j];
        t[i * w + j] = b;
        any = any || b != 0.0;
      }
    if (!any) continue;
    if (l == layout.logits_layer()) throw UsageError("mask: logits layer positions must never be masked");
    out[l] = std::move(t);
  }
  return out;
}

RecordedPass Classifier::forward_spliced(const ActivationRecord& record, const ad::Tensor& mask,
                                         const ad::Tensor& imputed) const {
  if (imputed.shape() != mask.shape()) throw ShapeError("forward_spliced: imputed values and mask differ in shape");
  if (record.layout != layout_) throw ShapeError("forward_spliced: record layout does not match the classifier");
  const auto masks = split_mask(mask, layout_);
  const auto imputed_layers = ActivationRecord::unflatten(imputed, layout_);
  ad::Graph g;
  const auto psi = params_.bind_constant(g);
  Splice splice{&masks, [&](std::size_t layer, ad::Var) {
                  return ad::stop_gradient(g.constant(imputed_layers.layers[layer]));
                }};
  ForwardOptions opts;
  opts.splice = &splice;
  GraphPass pass = forward(g, psi, g.constant(record.layers.at(0)), opts);
  RecordedPass out{pass.logits.value(), ActivationRecord{layout_, {}}};
  for (const ad::Var& v : pass.pre) out.record.layers.push_back(v.value());
  return out;
}

void Classifier::save(io::Container& c, const std::string& prefix) const {
  for (const auto& e : params_.entries()) c.put(prefix + e.name, e.value);
  for (std::size_t i = 0; i < running_mean_.size(); ++i) {
    c.put(prefix + "bn" + std::to_string(i) + ".running_mean", running_mean_[i]);
    c.put(prefix + "bn" + std::to_string(i) + ".running_var", running_var_[i]);
  }
}

Classifier Classifier::load(const io::Container& c, const ClassifierSpec& spec, const std::string& prefix) {
  Classifier model(spec);
  model.build(nullptr);
  auto fetch = [&](const std::string& name, ad::Tensor& dst) {
    ad::Tensor t = c.tensor(prefix + name);
    if (t.shape() != dst.shape()) {
      throw DataError("checkpoint: tensor " + prefix + name + " has shape " + ad::shape_str(t.shape()) + ", model expects " +
                      ad::shape_str(dst.shape()));
    }
    dst = std::move(t);
  };
  for (auto& e : model.params_.entries()) fetch(e.name, e.value);
  for (std::size_t i = 0; i < model.running_mean_.size(); ++i) {
    fetch("bn" + std::to_string(i) + ".running_mean", model.running_mean_[i]);
    fetch("bn" + std::to_string(i) + ".running_var", model.running_var_[i]);
  }
  return model;
}

}  // namespace pilot::net
