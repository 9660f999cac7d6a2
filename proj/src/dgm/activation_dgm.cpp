#include "pilot/dgm/activation_dgm.hpp"

#include <cmath>
#include <numbers>

#include "pilot/core/error.hpp"

namespace pilot::dgm {

void HyperpriorConfig::validate() const {
  if (!(sigma_mu > 0.0)) throw ConfigError("dgm.hyperprior.sigma_mu", "must be > 0");
  if (!(sigma_sigma > 0.0)) throw ConfigError("dgm.hyperprior.sigma_sigma", "must be > 0");
}

void DgmConfig::validate() const {
  if (latent_dim == 0) throw ConfigError("dgm.latent_dim", "must be >= 1");
  if (hidden.empty()) throw ConfigError("dgm.hidden", "needs at least one hidden layer");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("dgm.hidden", "zero-width layer");
  if (!(decoder_variance > 0.0)) throw ConfigError("dgm.decoder_variance", "must be > 0");
  if (n_z == 0) throw ConfigError("dgm.n_z", "must be >= 1");
  if (!(standardize_warmup >= 0.0 && standardize_warmup <= 1.0)) throw ConfigError("dgm.standardize_warmup", "must lie in [0,1]");
  hyperprior.validate();
}

ad::Var reparam_sample(const DiagonalGaussian& g, ad::Var eps) {
  if (eps.shape() != g.mean.shape()) {
    throw ShapeError("reparam_sample: eps " + ad::shape_str(eps.shape()) + " vs mean " + ad::shape_str(g.mean.shape()));
  }
  return ad::add(g.mean, ad::mul(ad::exp(ad::scale(g.log_var, 0.5)), eps));
}

ad::Var kl_diag(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  if (q.mean.shape() != p.mean.shape()) throw ShapeError("kl_diag: dimension mismatch");
  ad::Var log_ratio = ad::sub(p.log_var, q.log_var);
  ad::Var spread = ad::div(ad::add(ad::exp(q.log_var), ad::square(ad::sub(q.mean, p.mean))), ad::exp(p.log_var));
  return ad::scale(ad::sum(ad::shift(ad::add(log_ratio, spread), -1.0)), 0.5);
}

ad::Var gaussian_loglik(ad::Var mean, const ad::Tensor& target, const ad::Tensor& mask, double variance) {
  if (mean.shape() != target.shape() || mask.shape() != target.shape()) {
    throw ShapeError("gaussian_loglik: mean " + ad::shape_str(mean.shape()) + ", target " + ad::shape_str(target.shape()) +
                     ", mask " + ad::shape_str(mask.shape()));
  }
  ad::Graph& g = mean.graph();
  double count = 0.0;
  for (double b : mask.data()) count += b;
  ad::Var sq = ad::square(ad::sub(mean, g.constant(target)));
  ad::Var masked = ad::sum(ad::mul(sq, g.constant(mask)));
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * variance) * count;
  return ad::shift(ad::scale(masked, -0.5 / variance), log_norm);
}

ad::Var hyperprior_penalty(const DiagonalGaussian& prior, const HyperpriorConfig& config) {
  const double inv = 1.0 / (2.0 * config.sigma_mu * config.sigma_mu);
  ad::Var mean_term = config.form == PenaltyForm::squared_mean ? ad::scale(ad::sum(ad::square(prior.mean)), inv)
                                                               : ad::scale(ad::sum(prior.mean), inv);
  ad::Var log_sigma = ad::scale(prior.log_var, 0.5);
  ad::Var sigma = ad::exp(log_sigma);
  ad::Var gamma_term = ad::scale(ad::sum(ad::sub(log_sigma, sigma)), -config.sigma_sigma);
  return ad::add(mean_term, gamma_term);
}

Standardizer::Standardizer(std::size_t dim) : dim_(dim), mean_(ad::Shape{dim}), m2_(ad::Shape{dim}) {}

void Standardizer::observe(const ad::Tensor& flat) {
  if (frozen_) return;
  if (flat.rank() != 2 || flat.dim(1) != dim_) throw ShapeError("standardizer: expected [N," + std::to_string(dim_) + "]");
  // Chan et al. parallel update of mean and sum of squared deviations.
  const std::size_t n = flat.dim(0);
  if (n == 0) return;
  ad::Tensor bm(ad::Shape{dim_}), bm2(ad::Shape{dim_});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim_; ++j) bm[j] += flat[i * dim_ + j];
  for (std::size_t j = 0; j < dim_; ++j) bm[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim_; ++j) {
      const double d = flat[i * dim_ + j] - bm[j];
      bm2[j] += d * d;
    }
  const double na = static_cast<double>(count_), nb = static_cast<double>(n), nt = na + nb;
  for (std::size_t j = 0; j < dim_; ++j) {
    const double delta = bm[j] - mean_[j];
    mean_[j] += delta * nb / nt;
    m2_[j] += bm2[j] + delta * delta * na * nb / nt;
  }
  count_ += n;
}

ad::Tensor Standardizer::stddev() const {
  ad::Tensor sd(ad::Shape{dim_}, 1.0);
  if (count_ < 2) return sd;
  for (std::size_t j = 0; j < dim_; ++j) sd[j] = std::sqrt(std::max(m2_[j] / static_cast<double>(count_), 1e-6));
  return sd;
}

ad::Tensor Standardizer::forward(const ad::Tensor& flat) const {
  if (flat.rank() != 2 || flat.dim(1) != dim_) throw ShapeError("standardizer: expected [N," + std::to_string(dim_) + "]");
  if (count_ < 2) return flat;
  const ad::Tensor sd = stddev();
  ad::Tensor out = flat;
  for (std::size_t i = 0; i < flat.dim(0); ++i)
    for (std::size_t j = 0; j < dim_; ++j) out[i * dim_ + j] = (flat[i * dim_ + j] - mean_[j]) / sd[j];
  return out;
}

ad::Tensor Standardizer::inverse(const ad::Tensor& flat) const {
  if (flat.rank() != 2 || flat.dim(1) != dim_) throw ShapeError("standardizer: expected [N," + std::to_string(dim_) + "]");
  if (count_ < 2) return flat;
  const ad::Tensor sd = stddev();
  ad::Tensor out = flat;
  for (std::size_t i = 0; i < flat.dim(0); ++i)
    for (std::size_t j = 0; j < dim_; ++j) out[i * dim_ + j] = flat[i * dim_ + j] * sd[j] + mean_[j];
  return out;
}

void Standardizer::save(io::Container& c, const std::string& prefix) const {
  c.put(prefix + "mean", mean_);
  c.put(prefix + "m2", m2_);
  c.meta()[prefix + "count"] = count_;
  c.meta()[prefix + "frozen"] = frozen_;
}

void Standardizer::load(const io::Container& c, const std::string& prefix) {
  mean_ = c.tensor(prefix + "mean");
  m2_ = c.tensor(prefix + "m2");
  if (mean_.size() != dim_ || m2_.size() != dim_) throw DataError("checkpoint: standardizer statistics have the wrong size");
  count_ = c.meta().value(prefix + "count", std::size_t{0});
  frozen_ = c.meta().value(prefix + "frozen", true);
}

ActivationDgm::ActivationDgm(DgmConfig config, std::size_t record_dim, Rng& rng)
    : config_(std::move(config)), dim_(record_dim), standardizer_(record_dim) {
  config_.validate();
  if (dim_ == 0) throw UsageError("activation dgm: empty record");
  const std::size_t dz = config_.latent_dim;
  encoder_ = make_mlp(phi_, "enc", 2 * dim_, 2 * dz, rng);
  prior_ = make_mlp(theta_, "prior", 2 * dim_, 2 * dz, rng);
  decoder_ = make_mlp(theta_, "dec", 2 * dim_ + dz, dim_, rng);
}

ActivationDgm::Mlp ActivationDgm::make_mlp(ad::ParameterGroup& group, const std::string& tag, std::size_t in,
                                           std::size_t out, Rng& rng) {
  Mlp mlp;
  std::vector<std::size_t> widths = config_.hidden;
  widths.push_back(out);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool last = i + 1 == widths.size();
    ad::Tensor w(ad::Shape{in, widths[i]});
    // Output heads start at zero: N(0, I) posteriors/priors and a zero decoder mean.
    if (!last) {
      const double sd = std::sqrt(2.0 / static_cast<double>(in));
      for (double& v : w.data()) v = rng.normal(0.0, sd);
    }
    const std::string name = tag + ".l" + std::to_string(i);
    mlp.weight.push_back(group.add(name + ".W", std::move(w)));
    mlp.bias.push_back(group.add(name + ".b", ad::Tensor(ad::Shape{widths[i]})));
    in = widths[i];
  }
  return mlp;
}

ad::Var ActivationDgm::run_mlp(const Mlp& mlp, const std::vector<ad::Var>& vars, ad::Var x) {
  for (std::size_t i = 0; i < mlp.weight.size(); ++i) {
    x = ad::add(ad::matmul(x, vars[mlp.weight[i]]), vars[mlp.bias[i]]);
    if (i + 1 < mlp.weight.size()) x = ad::relu(x);
  }
  return x;
}

DiagonalGaussian ActivationDgm::split_head(ad::Var out) const {
  const std::size_t dz = config_.latent_dim;
  return {ad::slice(out, 1, 0, dz), ad::slice(out, 1, dz, 2 * dz)};
}

ActivationDgm::Bound ActivationDgm::bind(ad::Graph& g, bool trainable) const {
  return trainable ? Bound{theta_.bind(g), phi_.bind(g)} : Bound{theta_.bind_constant(g), phi_.bind_constant(g)};
}

namespace {
void check_record(const char* op, ad::Var v, std::size_t dim) {
  if (v.shape().size() != 2 || v.shape()[1] != dim) {
    throw ShapeError(std::string(op) + ": expected [N," + std::to_string(dim) + "], got " + ad::shape_str(v.shape()));
  }
}
}  // namespace

DiagonalGaussian ActivationDgm::encode(const Bound& p, ad::Var record, ad::Var mask) const {
  check_record("encode(record)", record, dim_);
  check_record("encode(mask)", mask, dim_);
  return split_head(run_mlp(encoder_, p.phi, ad::concat({record, mask}, 1)));
}

DiagonalGaussian ActivationDgm::prior(const Bound& p, ad::Var observed, ad::Var mask) const {
  check_record("prior(observed)", observed, dim_);
  check_record("prior(mask)", mask, dim_);
  return split_head(run_mlp(prior_, p.theta, ad::concat({observed, mask}, 1)));
}

ad::Var ActivationDgm::decode(const Bound& p, ad::Var observed, ad::Var mask, ad::Var z) const {
  check_record("decode(observed)", observed, dim_);
  check_record("decode(mask)", mask, dim_);
  if (z.shape().size() != 2 || z.shape()[1] != config_.latent_dim) throw ShapeError("decode: latent has wrong width");
  return run_mlp(decoder_, p.theta, ad::concat({observed, mask, z}, 1));
}

ad::Tensor ActivationDgm::standardized(const ad::Tensor& a) const {
  return config_.standardize ? standardizer_.forward(a) : a;
}

ad::Tensor ActivationDgm::zero_fill(const ad::Tensor& a, const ad::Tensor& mask) {
  if (a.shape() != mask.shape()) throw ShapeError("zero_fill: record and mask differ in shape");
  ad::Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i] != 0.0) out[i] = 0.0;
  return out;
}

LambdaTerms ActivationDgm::lambda(ad::Graph& g, const Bound& p, const ad::Tensor& a, const ad::Tensor& mask,
                                  const std::vector<ad::Tensor>& eps) const {
  if (a.rank() != 2 || a.dim(1) != dim_ || mask.shape() != a.shape()) {
    throw ShapeError("lambda: record " + ad::shape_str(a.shape()) + " / mask " + ad::shape_str(mask.shape()) +
                     " do not match record width " + std::to_string(dim_));
  }
  if (eps.empty()) throw UsageError("lambda: need at least one latent noise draw");
  const double n = static_cast<double>(a.dim(0));
  const ad::Tensor target = standardized(a);
  ad::Var record = g.constant(target);
  ad::Var m = g.constant(mask);
  ad::Var observed = g.constant(zero_fill(target, mask));

  const DiagonalGaussian q = encode(p, record, m);
  const DiagonalGaussian pz = prior(p, observed, m);
  ad::Var recon;
  for (std::size_t s = 0; s < eps.size(); ++s) {
    ad::Var z = reparam_sample(q, g.constant(eps[s]));
    ad::Var ll = gaussian_loglik(decode(p, observed, m, z), target, mask, config_.decoder_variance);
    recon = s == 0 ? ll : ad::add(recon, ll);
  }
  recon = ad::scale(recon, 1.0 / (static_cast<double>(eps.size()) * n));
  ad::Var kl = ad::scale(kl_diag(q, pz), 1.0 / n);
  ad::Var penalty = ad::scale(hyperprior_penalty(pz, config_.hyperprior), 1.0 / n);
  ad::Var lam = ad::sub(ad::sub(recon, kl), penalty);
  for (const auto& [name, v] : {std::pair{"reconstruction", recon}, {"kl", kl}, {"penalty", penalty}}) {
    if (!std::isfinite(v.value().item())) throw NumericalError(std::string("lambda: non-finite ") + name + " term");
  }
  return {lam, recon, kl, penalty};
}

LambdaTerms ActivationDgm::lambda(ad::Graph& g, const Bound& p, const ad::Tensor& a, const ad::Tensor& mask,
                                  Rng& rng) const {
  std::vector<ad::Tensor> eps;
  for (std::size_t s = 0; s < config_.n_z; ++s) {
    ad::Tensor e(ad::Shape{a.rank() ? a.dim(0) : 0, config_.latent_dim});
    for (double& v : e.data()) v = rng.normal();
    eps.push_back(std::move(e));
  }
  return lambda(g, p, a, mask, eps);
}

ad::Tensor ActivationDgm::impute(const ad::Tensor& a, const ad::Tensor& mask, Rng& rng) const {
  if (a.rank() != 2 || a.dim(1) != dim_ || mask.shape() != a.shape()) throw ShapeError("impute: record/mask shape mismatch");
  ad::Tensor out(a.shape());
  bool any = false;
  for (double b : mask.data()) any = any || b != 0.0;
  if (!any) return out;

  ad::Graph g;
  const Bound p = bind(g, false);
  ad::Var m = g.constant(mask);
  ad::Var observed = g.constant(zero_fill(standardized(a), mask));
  const DiagonalGaussian pz = prior(p, observed, m);
  ad::Tensor eps(pz.mean.shape());
  for (double& v : eps.data()) v = rng.normal();
  ad::Tensor mean = decode(p, observed, m, reparam_sample(pz, g.constant(std::move(eps)))).value();
  if (config_.impute_sample) {
    const double sd = std::sqrt(config_.decoder_variance);
    for (double& v : mean.data()) v += sd * rng.normal();
  }
  if (config_.standardize) mean = standardizer_.inverse(mean);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i] != 0.0) out[i] = mean[i];
  return out;
}

void ActivationDgm::save(io::Container& c) const {
  for (const auto& e : theta_.entries()) c.put("theta." + e.name, e.value);
  for (const auto& e : phi_.entries()) c.put("phi." + e.name, e.value);
  standardizer_.save(c, "dgm.standardizer.");
}

void ActivationDgm::load(const io::Container& c) {
  auto fetch = [&](ad::ParameterGroup& group, const std::string& prefix) {
    for (auto& e : group.entries()) {
      ad::Tensor t = c.tensor(prefix + e.name);
      if (t.shape() != e.value.shape()) throw DataError("checkpoint: tensor " + prefix + e.name + " has the wrong shape");
      e.value = std::move(t);
    }
  };
  fetch(theta_, "theta.");
  fetch(phi_, "phi.");
  standardizer_.load(c, "dgm.standardizer.");
}

}  // namespace pilot::dgm
