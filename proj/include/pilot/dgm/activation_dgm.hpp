#pragma once

#include <vector>

#include "pilot/autodiff/ops.hpp"
#include "pilot/autodiff/params.hpp"
#include "pilot/core/rng.hpp"
#include "pilot/networks/tensor_container.hpp"

namespace pilot::dgm {

enum class PenaltyForm {
  squared_mean,    // mu^2 / (2 sigma_mu^2): the Normal(0, sigma_mu) log-density
  literal_linear,  // mu / (2 sigma_mu^2)
};

struct HyperpriorConfig {
  double sigma_mu = 10.0;
  double sigma_sigma = 1.0;
  PenaltyForm form = PenaltyForm::squared_mean;

  void validate() const;
};

struct DgmConfig {
  std::size_t latent_dim = 64;
  std::vector<std::size_t> hidden{256, 256};
  double decoder_variance = 0.1;
  HyperpriorConfig hyperprior;
  std::size_t n_z = 1;
  bool standardize = true;
  // Fraction of training steps during which standardisation statistics are
  // still accumulated; frozen afterwards.
  double standardize_warmup = 0.1;
  // Impute with a draw from the decoder likelihood instead of its mean.
  bool impute_sample = false;

  void validate() const;
};

// Diagonal Gaussian held as graph nodes; the variance is exp(log_var) > 0.
struct DiagonalGaussian {
  ad::Var mean;     // [N, d]
  ad::Var log_var;  // [N, d]
};

// z = mean + exp(log_var / 2) * eps
ad::Var reparam_sample(const DiagonalGaussian& g, ad::Var eps);

// Sum over batch rows and dimensions of KL(q || p).
ad::Var kl_diag(const DiagonalGaussian& q, const DiagonalGaussian& p);

// Sum over positions with mask == 1 of log N(target | mean, variance).
ad::Var gaussian_loglik(ad::Var mean, const ad::Tensor& target, const ad::Tensor& mask, double variance);

// Normal-Gamma hyperprior penalty on the conditional prior's outputs, summed
// over rows and latent dimensions. Subtracted from the log-likelihood.
ad::Var hyperprior_penalty(const DiagonalGaussian& prior, const HyperpriorConfig& config);

// Per-position standardisation of flattened records.
class Standardizer {
 public:
  explicit Standardizer(std::size_t dim = 0);

  void observe(const ad::Tensor& flat);  // no-op once frozen
  void freeze() { frozen_ = true; }
  bool frozen() const noexcept { return frozen_; }
  std::size_t observations() const noexcept { return count_; }

  ad::Tensor forward(const ad::Tensor& flat) const;
  ad::Tensor inverse(const ad::Tensor& flat) const;
  ad::Tensor mean() const { return mean_; }
  ad::Tensor stddev() const;

  void save(io::Container& c, const std::string& prefix) const;
  void load(const io::Container& c, const std::string& prefix);

 private:
  std::size_t dim_ = 0;
  std::size_t count_ = 0;
  bool frozen_ = false;
  ad::Tensor mean_;
  ad::Tensor m2_;
};

struct LambdaTerms {
  ad::Var lambda;   // batch mean of recon - kl - penalty
  ad::Var recon;    // batch means of each term
  ad::Var kl;
  ad::Var penalty;
};

class ActivationDgm {
 public:
  ActivationDgm(DgmConfig config, std::size_t record_dim, Rng& rng);

  struct Bound {
    std::vector<ad::Var> theta;
    std::vector<ad::Var> phi;
  };

  const DgmConfig& config() const noexcept { return config_; }
  std::size_t record_dim() const noexcept { return dim_; }
  // Conditional prior and decoder.
  ad::ParameterGroup& theta() noexcept { return theta_; }
  const ad::ParameterGroup& theta() const noexcept { return theta_; }
  // Variational encoder.
  ad::ParameterGroup& phi() noexcept { return phi_; }
  const ad::ParameterGroup& phi() const noexcept { return phi_; }
  Standardizer& standardizer() noexcept { return standardizer_; }
  const Standardizer& standardizer() const noexcept { return standardizer_; }

  Bound bind(ad::Graph& g, bool trainable) const;

  // Inputs are standardised [N, D] records and [N, D] masks as graph nodes.
  // encode sees the full record; prior and decode see it with masked
  // positions zero-filled.
  DiagonalGaussian encode(const Bound& p, ad::Var record, ad::Var mask) const;
  DiagonalGaussian prior(const Bound& p, ad::Var observed, ad::Var mask) const;
  ad::Var decode(const Bound& p, ad::Var observed, ad::Var mask, ad::Var z) const;

  // Lower bound on log p(a_b | a_{1-b}, b) for raw records `a` under `mask`.
  // eps holds one [N, latent_dim] standard-normal draw per z sample.
  LambdaTerms lambda(ad::Graph& g, const Bound& p, const ad::Tensor& a, const ad::Tensor& mask,
                     const std::vector<ad::Tensor>& eps) const;
  LambdaTerms lambda(ad::Graph& g, const Bound& p, const ad::Tensor& a, const ad::Tensor& mask, Rng& rng) const;

  // Draws z from the conditional prior and returns decoder means (or samples)
  // in raw activation units at masked positions, zero elsewhere.
  ad::Tensor impute(const ad::Tensor& a, const ad::Tensor& mask, Rng& rng) const;

  // Standardised record and its zero-filled observed part.
  ad::Tensor standardized(const ad::Tensor& a) const;
  static ad::Tensor zero_fill(const ad::Tensor& a, const ad::Tensor& mask);

  void save(io::Container& c) const;
  void load(const io::Container& c);

 private:
  struct Mlp {
    std::vector<std::size_t> weight, bias;
  };
  Mlp make_mlp(ad::ParameterGroup& group, const std::string& tag, std::size_t in, std::size_t out, Rng& rng);
  static ad::Var run_mlp(const Mlp& mlp, const std::vector<ad::Var>& vars, ad::Var x);
  DiagonalGaussian split_head(ad::Var out) const;

  DgmConfig config_;
  std::size_t dim_;
  ad::ParameterGroup theta_{"theta"};
  ad::ParameterGroup phi_{"phi"};
  Mlp encoder_, prior_, decoder_;
  Standardizer standardizer_;
};

}  // namespace pilot::dgm
