#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pilot/autodiff/optim.hpp"
#include "pilot/core/error.hpp"
#include "pilot/dgm/activation_dgm.hpp"

using namespace pilot;
using ad::Tensor;
using dgm::DiagonalGaussian;

namespace {

dgm::DgmConfig small_config() {
  dgm::DgmConfig c;
  c.latent_dim = 3;
  c.hidden = {8};
  c.standardize = false;
  return c;
}

Tensor rand_t(ad::Shape s, unsigned seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  return oracle::random_tensor(std::move(s), rng, lo, hi);
}

Tensor bernoulli(ad::Shape s, unsigned seed, double p = 0.5) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  Tensor t(std::move(s));
  for (double& v : t.storage()) v = b(rng);
  return t;
}

void zero(ad::ParameterGroup& g) {
  for (auto& e : g.entries()) std::fill(e.value.storage().begin(), e.value.storage().end(), 0.0);
}

double scalar(ad::Var v) { return v.value().item(); }

}  // namespace

TEST_CASE("kl_diag examples") {
  ad::Graph g;
  auto c = [&](double v) { return g.constant(Tensor::matrix({{v}})); };
  CHECK(scalar(dgm::kl_diag({c(0.3), c(-0.2)}, {c(0.3), c(-0.2)})) == doctest::Approx(0.0));
  CHECK(scalar(dgm::kl_diag({c(0), c(0)}, {c(1), c(0)})) == doctest::Approx(0.5));
  CHECK_THROWS_AS(dgm::kl_diag({c(0), c(0)}, {g.constant(Tensor::matrix({{0, 0}})), g.constant(Tensor::matrix({{0, 0}}))}),
                  ShapeError);
  // Against the textbook formula, summed over dimensions.
  Tensor mq = rand_t({2, 3}, 1), lq = rand_t({2, 3}, 2), mp = rand_t({2, 3}, 3), lp = rand_t({2, 3}, 4);
  double want = 0;
  for (std::size_t i = 0; i < 6; ++i) want += oracle::kl_1d(mq[i], std::exp(lq[i]), mp[i], std::exp(lp[i]));
  CHECK(scalar(dgm::kl_diag({g.constant(mq), g.constant(lq)}, {g.constant(mp), g.constant(lp)})) ==
        doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("gaussian_loglik examples") {
  ad::Graph g;
  const double base = -0.5 * std::log(2 * M_PI * 0.1);
  Tensor t = Tensor::matrix({{0.5, 1.0, -2.0}});
  CHECK(scalar(dgm::gaussian_loglik(g.constant(t), t, Tensor::matrix({{1, 0, 1}}), 0.1)) == doctest::Approx(2 * base));
  CHECK(scalar(dgm::gaussian_loglik(g.constant(t), t, Tensor::matrix({{0, 0, 0}}), 0.1)) == 0.0);
  CHECK(scalar(dgm::gaussian_loglik(g.constant(Tensor::matrix({{0.1}})), Tensor::matrix({{0.0}}), Tensor::matrix({{1}}),
                                    0.1)) == doctest::Approx(base - 0.05));
}

TEST_CASE("hyperprior penalty examples") {
  ad::Graph g;
  dgm::HyperpriorConfig h;
  auto zeros = g.constant(Tensor::matrix({{0, 0}}));
  CHECK(scalar(dgm::hyperprior_penalty({zeros, zeros}, h)) == doctest::Approx(2.0));
  CHECK(scalar(dgm::hyperprior_penalty({g.constant(Tensor::matrix({{10}})), g.constant(Tensor::matrix({{0}}))}, h)) ==
        doctest::Approx(0.5 + 1.0));
  h.form = dgm::PenaltyForm::literal_linear;
  CHECK(scalar(dgm::hyperprior_penalty({g.constant(Tensor::matrix({{10}})), g.constant(Tensor::matrix({{0}}))}, h)) ==
        doctest::Approx(0.05 + 1.0));

  ad::Graph k;
  auto mu = k.leaf(Tensor::matrix({{0.0}}), true);
  dgm::HyperpriorConfig sq;
  auto grads = k.backward(dgm::hyperprior_penalty({mu, k.constant(Tensor::matrix({{0.3}}))}, sq));
  CHECK(grads[mu][0] == 0.0);
}

TEST_CASE("hyperprior penalty gradients match finite differences") {
  for (auto form : {dgm::PenaltyForm::squared_mean, dgm::PenaltyForm::literal_linear}) {
    for (int inst = 0; inst < 20; ++inst) {
      dgm::HyperpriorConfig h;
      h.form = form;
      h.sigma_mu = 0.5 + inst * 0.3;
      h.sigma_sigma = 0.2 + inst * 0.1;
      Tensor m = rand_t({3, 2}, inst), lv = rand_t({3, 2}, 50 + inst);
      ad::Graph g;
      auto vm = g.leaf(m, true), vl = g.leaf(lv, true);
      auto grads = g.backward(dgm::hyperprior_penalty({vm, vl}, h));
      auto value = [&] {
        ad::Graph e;
        return scalar(dgm::hyperprior_penalty({e.constant(m), e.constant(lv)}, h));
      };
      CHECK(oracle::finite_difference(value, {&m, &lv}, {grads[vm], grads[vl]}).max_rel < 1e-4);
    }
  }
}

TEST_CASE("reparameterised samples") {
  ad::Graph g;
  Tensor mean = Tensor::matrix({{1.0, -2.0}});
  CHECK(dgm::reparam_sample({g.constant(mean), g.constant(Tensor::matrix({{0.4, 0.1}}))},
                            g.constant(Tensor::matrix({{0, 0}}))).value() == mean);
  const std::size_t n = 100000;
  Tensor eps({n, 1});
  Rng rng(7);
  for (double& v : eps.storage()) v = rng.normal();
  auto z = dgm::reparam_sample({g.constant(Tensor({n, 1}, 1.0)), g.constant(Tensor({n, 1}, std::log(4.0)))},
                               g.constant(eps)).value();
  double m = 0, v = 0;
  for (double s : z.data()) m += s;
  m /= n;
  for (double s : z.data()) v += (s - m) * (s - m);
  v /= n - 1;
  CHECK(std::abs(m - 1) < 0.02);
  CHECK(std::abs(v - 4) < 0.1);
}

TEST_CASE("zero-initialised networks give standard normals") {
  Rng rng(1);
  dgm::ActivationDgm d(small_config(), 5, rng);
  zero(d.theta());
  zero(d.phi());
  ad::Graph g;
  auto p = d.bind(g, false);
  auto a = g.constant(rand_t({2, 5}, 1));
  auto m = g.constant(bernoulli({2, 5}, 2));
  for (const DiagonalGaussian& q : {d.prior(p, a, m), d.encode(p, a, m)}) {
    for (double v : q.mean.value().data()) CHECK(v == 0.0);
    for (double v : q.log_var.value().data()) CHECK(v == 0.0);
  }
}

TEST_CASE("prior and impute ignore masked positions") {
  Rng rng(2);
  auto cfg = small_config();
  cfg.standardize = true;
  dgm::ActivationDgm d(cfg, 6, rng);
  d.standardizer().observe(rand_t({20, 6}, 9, -3, 3));
  Tensor a = rand_t({4, 6}, 3), mask = bernoulli({4, 6}, 4);
  Tensor poked = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (mask[i]) poked[i] += 7.5;

  auto prior_of = [&](const Tensor& rec) {
    ad::Graph g;
    auto p = d.bind(g, false);
    auto q = d.prior(p, g.constant(dgm::ActivationDgm::zero_fill(d.standardized(rec), mask)), g.constant(mask));
    return std::pair{q.mean.value(), q.log_var.value()};
  };
  CHECK(prior_of(a) == prior_of(poked));
  Rng r1(5), r2(5);
  Tensor ia = d.impute(a, mask, r1), ib = d.impute(poked, mask, r2);
  CHECK(ia == ib);
  for (std::size_t i = 0; i < ia.size(); ++i)
    if (!mask[i]) CHECK(ia[i] == 0.0);
  Rng r3(5);
  const Tensor none = d.impute(a, Tensor(a.shape()), r3);
  for (double v : none.data()) CHECK(v == 0.0);
}

TEST_CASE("same inputs give the same network outputs") {
  Rng rng(3);
  dgm::ActivationDgm d(small_config(), 4, rng);
  Tensor a = rand_t({3, 4}, 1), m = bernoulli({3, 4}, 2);
  auto run = [&] {
    ad::Graph g;
    auto p = d.bind(g, false);
    return d.encode(p, g.constant(a), g.constant(m)).mean.value();
  };
  CHECK(run() == run());
}

TEST_CASE("lambda terms") {
  Rng rng(4);
  dgm::ActivationDgm d(small_config(), 5, rng);
  Tensor a = rand_t({6, 5}, 5);
  SUBCASE("empty mask leaves -KL - penalty") {
    ad::Graph g;
    auto t = d.lambda(g, d.bind(g, false), a, Tensor(a.shape()), rng);
    CHECK(scalar(t.recon) == 0.0);
    CHECK(scalar(t.lambda) == doctest::Approx(-scalar(t.kl) - scalar(t.penalty)));
  }
  SUBCASE("bounded by the reconstruction term") {
    for (int i = 0; i < 10; ++i) {
      ad::Graph g;
      auto t = d.lambda(g, d.bind(g, false), a, bernoulli(a.shape(), 10 + i), rng);
      CHECK(scalar(t.kl) >= 0);
      CHECK(scalar(t.penalty) >= 0);
      CHECK(scalar(t.lambda) <= scalar(t.recon));
    }
  }
  SUBCASE("shape errors") {
    ad::Graph g;
    CHECK_THROWS_AS(d.lambda(g, d.bind(g, false), rand_t({2, 4}, 1), Tensor({2, 4}), rng), ShapeError);
  }
}

TEST_CASE("lambda gradient with respect to theta and phi matches finite differences") {
  for (int inst = 0; inst < 20; ++inst) {
    Rng rng(300 + inst);
    auto cfg = small_config();
    cfg.n_z = 1 + inst % 2;
    cfg.standardize = inst % 3 == 0;
    dgm::ActivationDgm d(cfg, 5, rng);
    if (cfg.standardize) d.standardizer().observe(rand_t({10, 5}, inst, -2, 2));
    Tensor a = rand_t({4, 5}, 400 + inst), mask = bernoulli({4, 5}, 500 + inst);
    std::vector<Tensor> eps;
    for (std::size_t s = 0; s < cfg.n_z; ++s) eps.push_back(rand_t({4, 3}, 600 + inst + 17 * s, -2, 2));

    ad::Graph g;
    auto p = d.bind(g, true);
    auto grads = g.backward(d.lambda(g, p, a, mask, eps).lambda);
    std::vector<Tensor> analytic = ad::collect_gradients(grads, p.theta);
    for (auto& t : ad::collect_gradients(grads, p.phi)) analytic.push_back(t);
    std::vector<Tensor*> ptrs;
    for (auto& e : d.theta().entries()) ptrs.push_back(&e.value);
    for (auto& e : d.phi().entries()) ptrs.push_back(&e.value);
    auto value = [&] {
      ad::Graph h;
      return scalar(d.lambda(h, d.bind(h, false), a, mask, eps).lambda);
    };
    CHECK(oracle::finite_difference(value, ptrs, analytic, 1e-5, 12, inst).max_rel < 1e-4);
  }
}

TEST_CASE("training raises lambda and improves imputation") {
  Rng rng(8);
  auto cfg = small_config();
  cfg.latent_dim = 4;
  cfg.hidden = {32, 32};
  dgm::ActivationDgm d(cfg, 6, rng);
  // Records with strong correlations, so masked parts are predictable.
  Tensor a({64, 6});
  Rng data(9);
  for (std::size_t i = 0; i < 64; ++i) {
    const double u = data.normal(), v = data.normal();
    const double row[6] = {u, v, u + v, u - v, 2 * u, -v};
    for (std::size_t j = 0; j < 6; ++j) a.at(i, j) = row[j];
  }
  Tensor mask = bernoulli({64, 6}, 10, 0.3);
  auto lam = [&] {
    Rng r(11);
    ad::Graph g;
    return scalar(d.lambda(g, d.bind(g, false), a, mask, r).lambda);
  };
  auto impute_error = [&] {
    Rng r(12);
    Tensor imp = d.impute(a, mask, r);
    double e = 0, n = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (mask[i]) e += std::abs(imp[i] - a[i]), n += 1;
    return e / n;
  };
  const double before = lam(), err_before = impute_error();
  ad::AdamState ts, ps;
  ad::AdamConfig ac;
  ac.lr = 3e-3;
  for (int step = 0; step < 500; ++step) {
    ad::Graph g;
    auto p = d.bind(g, true);
    auto t = d.lambda(g, p, a, bernoulli({64, 6}, 1000 + step, 0.3), rng);
    auto grads = g.backward(ad::neg(t.lambda));
    ad::adam_step(d.theta(), ad::collect_gradients(grads, p.theta), ts, ac);
    ad::adam_step(d.phi(), ad::collect_gradients(grads, p.phi), ps, ac);
  }
  CHECK(lam() > before);
  CHECK(impute_error() < err_before);
}

TEST_CASE("standardizer") {
  dgm::Standardizer s(2);
  Tensor a = Tensor::matrix({{1, 10}, {3, 10}, {5, 10}});
  s.observe(a.rows(0, 1));
  s.observe(a.rows(1, 3));
  CHECK(s.mean()[0] == doctest::Approx(3));
  CHECK(s.mean()[1] == doctest::Approx(10));
  Tensor f = s.forward(a);
  CHECK(f.at(0, 0) == doctest::Approx(-f.at(2, 0)));
  CHECK(std::isfinite(f.at(0, 1)));
  Tensor back = s.inverse(f);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(back[i] == doctest::Approx(a[i]));
  s.freeze();
  s.observe(Tensor::matrix({{100, 100}}));
  CHECK(s.mean()[0] == doctest::Approx(3));
  CHECK(s.observations() == 3);
}

TEST_CASE("save and load") {
  Rng rng(13);
  auto cfg = small_config();
  cfg.standardize = true;
  dgm::ActivationDgm d(cfg, 5, rng);
  d.standardizer().observe(rand_t({7, 5}, 2));
  io::Container c;
  d.save(c);
  Rng other(99);
  dgm::ActivationDgm e(cfg, 5, other);
  e.load(io::Container::deserialize(c.serialize()));
  CHECK(e.theta().checksum() == d.theta().checksum());
  CHECK(e.phi().checksum() == d.phi().checksum());
  CHECK(e.standardizer().mean() == d.standardizer().mean());
}

TEST_CASE("config validation") {
  auto c = small_config();
  c.decoder_variance = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  dgm::HyperpriorConfig h;
  h.sigma_mu = -1;
  CHECK_THROWS_AS(h.validate(), Error);
}
