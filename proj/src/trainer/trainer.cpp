#include "pilot/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "pilot/core/error.hpp"

namespace pilot::train {

namespace {

#ifdef NDEBUG
constexpr bool kDebugChecks = false;
#else
constexpr bool kDebugChecks = true;
#endif

std::size_t count_correct(const ad::Tensor& logits, std::span<const int> y) {
  const std::size_t c = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double* row = logits.storage().data() + i * c;
    const auto best = static_cast<int>(std::max_element(row, row + c) - row);
    hits += best == y[i];
  }
  return hits;
}

double max_abs(const std::vector<ad::Tensor>& grads) {
  double m = 0;
  for (const auto& t : grads)
    for (double v : t.storage()) m = std::max(m, std::abs(v));
  return m;
}

void check_batch(const ad::Tensor& x, std::span<const int> y) {
  if (y.empty()) throw UsageError("training step: empty batch");
  if (x.rank() < 1 || x.dim(0) != y.size()) {
    throw ShapeError("training step: " + std::to_string(y.size()) + " labels for input of shape " + ad::shape_str(x.shape()));
  }
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::vanilla: return "vanilla";
    case Method::pilot: return "pilot";
    case Method::add_noise: return "add_noise";
    case Method::sub_noise: return "sub_noise";
    case Method::dropout: return "dropout";
    case Method::l2: return "l2";
    case Method::batch_norm: return "batch_norm";
    case Method::data_aug: return "data_aug";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '-', '_');
  for (Method m : {Method::vanilla, Method::pilot, Method::add_noise, Method::sub_noise, Method::dropout, Method::l2,
                   Method::batch_norm, Method::data_aug}) {
    if (s == to_string(m)) return m;
  }
  if (s == "add") return Method::add_noise;
  if (s == "sub") return Method::sub_noise;
  throw ConfigError("train.method", "unknown method '" + name +
                                        "' (vanilla, pilot, add_noise, sub_noise, dropout, l2, batch_norm, data_aug)");
}

bool uses_mask(Method m) { return m == Method::pilot || m == Method::add_noise || m == Method::sub_noise; }

void TrainConfig::validate() const {
  if (uses_mask(method)) mask.validate();
  if (epochs == 0) throw ConfigError("train.epochs", "must be at least 1");
  if (batch_size == 0) throw ConfigError("train.batch_size", "must be at least 1");
  if (!(lr > 0)) throw ConfigError("train.lr", "must be positive");
  if (!(dgm_lr > 0)) throw ConfigError("train.dgm_lr", "must be positive");
  if (!(clip_norm >= 0)) throw ConfigError("train.clip_norm", "must be non-negative");
  if (!(l2_lambda >= 0)) throw ConfigError("train.l2_lambda", "must be non-negative");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("train.dropout_rate", "must lie in [0, 1)");
  if (!(augment.probability >= 0 && augment.probability <= 1)) throw ConfigError("train.aug_prob", "must lie in [0, 1]");
  if (!(noise_variance >= 0)) throw ConfigError("train.noise_variance", "must be non-negative");
  if (n_impute == 0) throw ConfigError("train.n_impute", "must be at least 1");
}

void TrainLog::append(const EpochRow& row) {
  if (!rows.empty() && row.epoch <= rows.back().epoch) {
    throw UsageError("train log: epoch " + std::to_string(row.epoch) + " after " + std::to_string(rows.back().epoch));
  }
  rows.push_back(row);
}

std::string TrainLog::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss_act,loss_dgm,kl,recon,penalty,grad_norm_psi,grad_norm_dgm,train_acc,val_acc\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.loss_act << ',' << r.loss_dgm << ',' << r.kl << ',' << r.recon << ',' << r.penalty << ','
       << r.grad_norm_psi << ',' << r.grad_norm_dgm << ',' << r.train_acc << ',' << r.val_acc << '\n';
  }
  return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << csv();
}

ad::Var classifier_loss(ad::Var logits, std::span<const int> labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("classifier loss: logits " + ad::shape_str(logits.shape()) + " for " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t n = labels.size(), c = logits.shape()[1];
  ad::Tensor onehot({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DataError("classifier loss: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " outside [0, " + std::to_string(c) + ")");
    }
    onehot[i * c + labels[i]] = 1.0;
  }
  ad::Graph& g = logits.graph();
  return ad::scale(ad::sum(ad::mul(ad::log_softmax(logits), g.constant(std::move(onehot)))), -1.0 / double(n));
}

ad::Var dropout_mask_apply(ad::Var h, double rate, Rng& rng, bool train) {
  if (!(rate >= 0 && rate < 1)) throw UsageError("dropout: rate " + std::to_string(rate) + " outside [0, 1)");
  if (!train || rate == 0) return h;
  const double keep = 1.0 / (1.0 - rate);
  ad::Tensor m(h.shape());
  for (double& v : m.storage()) v = rng.bernoulli(rate) ? 0.0 : keep;
  return ad::mul(h, h.graph().constant(std::move(m)));
}

ad::Var l2_penalty(const net::Classifier& model, const std::vector<ad::Var>& psi, double lambda) {
  ad::Graph& g = psi.at(0).graph();
  ad::Var total = g.constant(ad::Tensor::scalar(0.0));
  for (std::size_t i : model.weight_indices()) total = ad::add(total, ad::sum(ad::square(psi.at(i))));
  return ad::scale(total, lambda);
}

ad::Var insert_noise(ad::Var fresh, Method method, double variance, bool propagate, Rng& rng) {
  if (!(variance >= 0)) throw UsageError("noise variance must be non-negative");
  const double sd = std::sqrt(variance);
  ad::Tensor eps(fresh.shape());
  for (double& v : eps.storage()) v = sd * rng.normal();
  ad::Graph& g = fresh.graph();
  if (method == Method::sub_noise) return g.constant(std::move(eps));
  if (method != Method::add_noise) throw UsageError("insert_noise: method " + to_string(method) + " is not a noise method");
  ad::Var out = ad::add(fresh, g.constant(std::move(eps)));
  return propagate ? out : ad::stop_gradient(out);
}

// ---- augmentation ----

void flip_horizontal(std::span<double> image, const ad::Shape& s) {
  const std::size_t c = s.at(0), h = s.at(1), w = s.at(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r) {
      double* row = image.data() + (ch * h + r) * w;
      std::reverse(row, row + w);
    }
}

void rotate_nearest(std::span<double> image, const ad::Shape& s, double degrees) {
  const std::size_t c = s.at(0), h = s.at(1), w = s.at(2);
  const double t = degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(t), st = std::sin(t);
  const double cy = (double(h) - 1) / 2, cx = (double(w) - 1) / 2;
  std::vector<double> src(image.begin(), image.end());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col) {
      // inverse map each output pixel back into the source
      const double dy = double(r) - cy, dx = double(col) - cx;
      const long sy = std::lround(cy + ct * dy - st * dx);
      const long sx = std::lround(cx + st * dy + ct * dx);
      const bool inside = sy >= 0 && sx >= 0 && sy < long(h) && sx < long(w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        image[(ch * h + r) * w + col] = inside ? src[(ch * h + std::size_t(sy)) * w + std::size_t(sx)] : 0.0;
      }
    }
}

void shift_channels(std::span<double> image, const ad::Shape& s, std::span<const double> offsets) {
  const std::size_t c = s.at(0), plane = s.at(1) * s.at(2);
  if (offsets.size() != c) throw ShapeError("shift_channels: one offset per channel required");
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) image[ch * plane + i] += offsets[ch];
}

Augmented augment_data(const ad::Tensor& x, const ad::Shape& image_shape, const AugmentConfig& config, Rng& rng) {
  if (image_shape.size() != 3) {
    throw UsageError("data augmentation needs image-shaped inputs {C, H, W}, got " + ad::shape_str(image_shape));
  }
  const std::size_t per = ad::shape_size(image_shape);
  if (x.rank() < 1 || (x.dim(0) > 0 && x.size() / x.dim(0) != per) || x.size() % std::max<std::size_t>(per, 1)) {
    throw ShapeError("data augmentation: input " + ad::shape_str(x.shape()) + " does not hold images of " +
                     ad::shape_str(image_shape));
  }
  const std::size_t n = x.dim(0);
  Augmented out{x, std::vector<Transform>(n, Transform::none)};
  std::vector<double> offsets(image_shape[0]);
  for (std::size_t i = 0; i < n; ++i) {
    if (!rng.bernoulli(config.probability)) continue;
    std::span<double> img(out.x.storage().data() + i * per, per);
    const auto t = static_cast<Transform>(rng.index(3));
    out.applied[i] = t;
    switch (t) {
      case Transform::channel_shift: {
        const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
        const double range = *hi - *lo;
        for (double& o : offsets) o = rng.uniform(-config.channel_shift, config.channel_shift) * range;
        shift_channels(img, image_shape, offsets);
        break;
      }
      case Transform::rotation:
        rotate_nearest(img, image_shape, rng.uniform(-config.max_rotation_deg, config.max_rotation_deg));
        break;
      case Transform::flip:
        flip_horizontal(img, image_shape);
        break;
      case Transform::none:
        break;
    }
  }
  return out;
}

// ---- Trainer ----

Trainer::Trainer(const TrainConfig& config, net::Classifier& classifier, dgm::ActivationDgm* dgm)
    : config_(config), classifier_(classifier), dgm_(dgm) {
  config_.validate();
  if (config_.method == Method::pilot && !dgm_) throw UsageError("pilot training needs an activation DGM");
  if (config_.method == Method::batch_norm && !classifier_.spec().batch_norm) {
    throw UsageError("batch_norm method needs a classifier built with batch normalisation");
  }
}

void Trainer::update_psi(std::vector<ad::Tensor> grads, StepStats& stats) {
  stats.grad_norm_psi = ad::clip_gradients(grads, config_.clip_norm);
  ad::adam_step(classifier_.params(), grads, psi_state_, ad::AdamConfig{.lr = config_.lr});
}

double Trainer::vanilla_loss(const ad::Tensor& x, std::span<const int> y) const {
  check_batch(x, y);
  ad::Graph g;
  const auto psi = classifier_.params().bind_constant(g);
  net::ForwardOptions opts;
  opts.train = true;
  const auto pass = classifier_.forward(g, psi, g.constant(x), opts);
  return classifier_loss(pass.logits, y).value().item();
}

StepStats Trainer::step(const ad::Tensor& x, std::span<const int> y, Rng& rng) {
  switch (config_.method) {
    case Method::pilot: return pilot_step(x, y, rng);
    case Method::add_noise:
    case Method::sub_noise: return noise_step(x, y, rng);
    default: return plain_step(x, y, rng);
  }
}

StepStats Trainer::vanilla_step(const ad::Tensor& x, std::span<const int> y, Rng& rng) {
  TrainConfig saved = config_;
  config_.method = Method::vanilla;
  StepStats s = plain_step(x, y, rng);
  config_ = saved;
  return s;
}

StepStats Trainer::plain_step(const ad::Tensor& x, std::span<const int> y, Rng& rng) {
  check_batch(x, y);
  StepStats stats;
  ad::Graph g;
  const auto psi = classifier_.params().bind(g);
  ad::Tensor input = config_.method == Method::data_aug
                         ? augment_data(x, classifier_.spec().input_shape, config_.augment, rng).x
                         : x;
  net::ForwardOptions opts;
  opts.train = true;
  if (config_.method == Method::dropout) {
    opts.on_hidden = [&](std::size_t, ad::Var h) { return dropout_mask_apply(h, config_.dropout_rate, rng, true); };
  }
  const net::GraphPass pass = classifier_.forward(g, psi, g.constant(std::move(input)), opts);
  ad::Var loss = classifier_loss(pass.logits, y);
  stats.loss_act = loss.value().item();
  if (!std::isfinite(stats.loss_act)) {
    throw NumericalError(to_string(config_.method) + " step " + std::to_string(steps_) + ": classifier loss is not finite");
  }
  if (config_.method == Method::l2) loss = ad::add(loss, l2_penalty(classifier_, psi, config_.l2_lambda));
  stats.correct = count_correct(pass.logits.value(), y);
  update_psi(ad::collect_gradients(g.backward(loss), psi), stats);
  if (classifier_.spec().batch_norm) classifier_.update_running_stats(pass);
  ++steps_;
  return stats;
}

StepStats Trainer::noise_step(const ad::Tensor& x, std::span<const int> y, Rng& rng) {
  const mask::Mask m = mask::sample_mask(config_.mask, classifier_.layout(), y.size(), rng);
  return noise_step(x, y, m, rng);
}

StepStats Trainer::noise_step(const ad::Tensor& x, std::span<const int> y, const mask::Mask& mask, Rng& rng) {
  check_batch(x, y);
  if (config_.method != Method::add_noise && config_.method != Method::sub_noise) {
    throw UsageError("noise step under method " + to_string(config_.method));
  }
  StepStats stats;
  stats.masked = mask.count();
  ad::Graph g;
  const auto psi = classifier_.params().bind(g);
  const auto masks = net::split_mask(mask.bits, classifier_.layout());
  net::Splice splice{&masks, [&](std::size_t, ad::Var fresh) {
                       return insert_noise(fresh, config_.method, config_.noise_variance,
                                           config_.propagate_noise_gradients, rng);
                     }};
  net::ForwardOptions opts;
  opts.train = true;
  opts.splice = &splice;
  const net::GraphPass pass = classifier_.forward(g, psi, g.constant(x), opts);
  ad::Var loss = classifier_loss(pass.logits, y);
  stats.loss_act = loss.value().item();
  if (!std::isfinite(stats.loss_act)) {
    throw NumericalError("noise step " + std::to_string(steps_) + ": classifier loss is not finite");
  }
  stats.correct = count_correct(pass.logits.value(), y);
  update_psi(ad::collect_gradients(g.backward(loss), psi), stats);
  if (classifier_.spec().batch_norm) classifier_.update_running_stats(pass);
  ++steps_;
  return stats;
}

StepStats Trainer::pilot_step(const ad::Tensor& x, std::span<const int> y, Rng& rng) {
  const mask::Mask m = mask::sample_mask(config_.mask, classifier_.layout(), y.size(), rng);
  return pilot_step(x, y, m, rng);
}

StepStats Trainer::pilot_step(const ad::Tensor& x, std::span<const int> y, const mask::Mask& mask, Rng& rng) {
  check_batch(x, y);
  if (!dgm_) throw UsageError("pilot step needs an activation DGM");
  const bool check = config_.check_separation || kDebugChecks;
  const auto& layout = classifier_.layout();
  StepStats stats;
  stats.masked = mask.count();

  ad::Graph g;
  const auto psi = classifier_.params().bind(g);
  const auto dgm_vars = dgm_->bind(g, true);
  const ad::Var xv = g.constant(x);

  net::ForwardOptions clean_opts;
  clean_opts.train = true;
  const net::GraphPass clean = classifier_.forward(g, psi, xv, clean_opts);
  stats.correct = count_correct(clean.logits.value(), y);
  // The record enters the DGM as data: nothing flows back into Psi from here.
  const ad::Tensor a = ad::stop_gradient(ad::concat(clean.pre, 1)).value();
  if (dgm_->config().standardize && !dgm_->standardizer().frozen()) dgm_->standardizer().observe(a);

  const auto masks = net::split_mask(mask.bits, layout);
  ad::Var loss_act;
  for (std::size_t k = 0; k < config_.n_impute; ++k) {
    net::ActivationRecord imputed;
    if (!mask.none()) imputed = net::ActivationRecord::unflatten(dgm_->impute(a, mask.bits, rng), layout);
    net::Splice splice{&masks, [&](std::size_t layer, ad::Var) {
                         return ad::stop_gradient(g.constant(imputed.layers.at(layer)));
                       }};
    net::ForwardOptions opts;
    opts.train = true;
    opts.splice = &splice;
    const net::GraphPass pass = classifier_.forward(g, psi, xv, opts);
    ad::Var l = classifier_loss(pass.logits, y);
    loss_act = k == 0 ? l : ad::add(loss_act, l);
  }
  if (config_.n_impute > 1) loss_act = ad::scale(loss_act, 1.0 / double(config_.n_impute));
  stats.loss_act = loss_act.value().item();
  if (!std::isfinite(stats.loss_act)) {
    throw NumericalError("pilot step " + std::to_string(steps_) + ": classifier loss is not finite (" +
                         std::to_string(stats.masked) + " masked positions)");
  }

  const dgm::LambdaTerms terms = dgm_->lambda(g, dgm_vars, a, mask.bits, rng);
  const ad::Var loss_dgm = ad::neg(terms.lambda);
  stats.loss_dgm = loss_dgm.value().item();
  stats.kl = terms.kl.value().item();
  stats.recon = terms.recon.value().item();
  stats.penalty = terms.penalty.value().item();

  const ad::Gradients g_act = g.backward(loss_act);
  const ad::Gradients g_dgm = g.backward(loss_dgm);
  std::vector<ad::Tensor> grad_psi = ad::collect_gradients(g_act, psi);
  std::vector<ad::Tensor> grad_theta = ad::collect_gradients(g_dgm, dgm_vars.theta);
  std::vector<ad::Tensor> grad_phi = ad::collect_gradients(g_dgm, dgm_vars.phi);

  std::uint64_t theta_sum = 0, phi_sum = 0;
  if (check) {
    stats.cross_psi = max_abs(ad::collect_gradients(g_dgm, psi));
    stats.cross_dgm = std::max(max_abs(ad::collect_gradients(g_act, dgm_vars.theta)),
                               max_abs(ad::collect_gradients(g_act, dgm_vars.phi)));
    if (stats.cross_psi != 0 || stats.cross_dgm != 0) {
      throw Error(ErrorKind::internal, "pilot step " + std::to_string(steps_) + ": gradient separation violated (" +
                                           std::to_string(stats.cross_psi) + ", " + std::to_string(stats.cross_dgm) + ")");
    }
    theta_sum = dgm_->theta().checksum();
    phi_sum = dgm_->phi().checksum();
  }

  update_psi(std::move(grad_psi), stats);
  if (classifier_.spec().batch_norm) classifier_.update_running_stats(clean);

  std::uint64_t psi_sum = 0;
  if (check) {
    if (dgm_->theta().checksum() != theta_sum || dgm_->phi().checksum() != phi_sum) {
      throw Error(ErrorKind::internal, "pilot step: classifier update wrote DGM parameters");
    }
    psi_sum = classifier_.params().checksum();
  }

  // One clipping group for the DGM; Adam is elementwise, so two states over
  // the two parameter groups behave like a single optimiser.
  std::vector<ad::Tensor> joint = std::move(grad_theta);
  const std::size_t n_theta = joint.size();
  for (auto& t : grad_phi) joint.push_back(std::move(t));
  stats.grad_norm_dgm = ad::clip_gradients(joint, config_.clip_norm);
  std::vector<ad::Tensor> gphi(std::make_move_iterator(joint.begin() + long(n_theta)), std::make_move_iterator(joint.end()));
  joint.resize(n_theta);
  const ad::AdamConfig dgm_adam{.lr = config_.dgm_lr};
  ad::adam_step(dgm_->theta(), joint, theta_state_, dgm_adam);
  ad::adam_step(dgm_->phi(), gphi, phi_state_, dgm_adam);

  if (check && classifier_.params().checksum() != psi_sum) {
    throw Error(ErrorKind::internal, "pilot step: DGM update wrote classifier parameters");
  }
  ++steps_;
  return stats;
}

// ---- training loop ----

double accuracy(const net::Classifier& model, const data::Dataset& d, std::size_t batch) {
  if (d.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t b = 0; b < d.size(); b += batch) {
    const std::size_t e = std::min(d.size(), b + batch);
    hits += count_correct(model.logits(d.x.rows(b, e)), std::span<const int>(d.y).subspan(b, e - b));
  }
  return double(hits) / double(d.size());
}

TrainResult train(const TrainConfig& config, const net::ClassifierSpec& spec, const dgm::DgmConfig& dgm_config,
                  const data::Dataset& train_set, const data::Dataset* val, const EpochHook& hook) {
  config.validate();
  if (train_set.size() == 0) throw DataError("training set '" + train_set.name + "' is empty");
  train_set.validate();
  net::ClassifierSpec model_spec = spec;
  if (config.method == Method::batch_norm) model_spec.batch_norm = true;
  model_spec.validate();
  if (config.method == Method::pilot) dgm_config.validate();

  Rng master(config.seed);
  Rng init_rng = master.fork(1);
  Rng dgm_rng = master.fork(2);
  Rng shuffle_rng = master.fork(3);
  Rng step_rng = master.fork(4);

  TrainResult result{ModelBundle{model_spec, config, net::Classifier(model_spec, init_rng), std::nullopt, dgm_config, {}},
                     {}};
  ModelBundle& bundle = result.model;
  if (config.method == Method::pilot) bundle.dgm.emplace(dgm_config, bundle.classifier.layout().total(), dgm_rng);
  Trainer trainer(config, bundle.classifier, bundle.dgm ? &*bundle.dgm : nullptr);

  const std::size_t n = train_set.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t warmup = bundle.dgm ? static_cast<std::size_t>(std::ceil(dgm_config.standardize_warmup *
                                                                               double(per_epoch * config.epochs)))
                                        : 0;
  if (bundle.dgm && (warmup == 0 || !dgm_config.standardize)) bundle.dgm->standardizer().freeze();

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<int> yb;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    EpochRow row;
    row.epoch = epoch;
    std::size_t seen = 0, hits = 0, steps = 0;
    for (std::size_t b = 0; b < n; b += config.batch_size) {
      const std::size_t e = std::min(n, b + config.batch_size);
      if (model_spec.batch_norm && e - b < 2) continue;
      const std::span<const std::size_t> idx(order.data() + b, e - b);
      const ad::Tensor xb = train_set.x.gather_rows(idx);
      yb.resize(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) yb[k] = train_set.y[idx[k]];
      const StepStats s = trainer.step(xb, yb, step_rng);
      row.loss_act += s.loss_act;
      row.loss_dgm += s.loss_dgm;
      row.kl += s.kl;
      row.recon += s.recon;
      row.penalty += s.penalty;
      row.grad_norm_psi += s.grad_norm_psi;
      row.grad_norm_dgm += s.grad_norm_dgm;
      hits += s.correct;
      seen += idx.size();
      ++steps;
      if (bundle.dgm && !bundle.dgm->standardizer().frozen() && trainer.steps() >= warmup) {
        bundle.dgm->standardizer().freeze();
      }
    }
    if (steps > 0) {
      const double inv = 1.0 / double(steps);
      for (double* v : {&row.loss_act, &row.loss_dgm, &row.kl, &row.recon, &row.penalty, &row.grad_norm_psi,
                        &row.grad_norm_dgm}) {
        *v *= inv;
      }
    }
    row.train_acc = seen ? double(hits) / double(seen) : 0.0;
    row.val_acc = val && val->size() ? accuracy(bundle.classifier, *val) : std::nan("");
    result.log.append(row);
    if (hook) hook(bundle, row);
  }
  if (bundle.dgm) bundle.dgm->standardizer().freeze();
  return result;
}

}  // namespace pilot::train
