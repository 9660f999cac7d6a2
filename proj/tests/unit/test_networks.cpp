#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pilot/core/error.hpp"
#include "pilot/masking/mask.hpp"
#include "pilot/networks/classifier.hpp"
#include "pilot/trainer/trainer.hpp"

using namespace pilot;
using ad::Tensor;

namespace {

net::ClassifierSpec mlp_spec(std::size_t in = 4, std::vector<std::size_t> hidden = {6, 5}, std::size_t classes = 3) {
  net::ClassifierSpec s;
  s.kind = net::ClassifierKind::mlp;
  s.input_shape = {in};
  s.hidden = std::move(hidden);
  s.num_classes = classes;
  return s;
}

net::ClassifierSpec cnn_spec() {
  net::ClassifierSpec s;
  s.kind = net::ClassifierKind::cnn;
  s.input_shape = {2, 4, 4};
  s.conv_channels = {3, 2};
  s.hidden = {5};
  s.num_classes = 3;
  return s;
}

Tensor rand_x(ad::Shape shape, unsigned seed) {
  std::mt19937_64 rng(seed);
  return oracle::random_tensor(std::move(shape), rng);
}

}  // namespace

TEST_CASE("matmul and relu examples") {
  ad::Graph g;
  auto m = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(ad::matmul(g.constant(m), g.constant(Tensor::matrix({{1, 0}, {0, 1}}))).value() == m);
  CHECK(ad::relu(g.constant(Tensor::vector({-1, 0, 2}))).value() == Tensor::vector({0, 0, 2}));
  ad::Graph h;
  auto x = h.leaf(Tensor::vector({1, 2, 3}), true);
  CHECK(h.backward(ad::sum(ad::square(x)))[x] == Tensor::vector({2, 4, 6}));
}

TEST_CASE("softmax examples") {
  ad::Graph g;
  auto p = ad::softmax(g.constant(Tensor::matrix({{std::log(1.0), std::log(3.0)}}))).value();
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[1] == doctest::Approx(0.75));
  auto u = ad::softmax(g.constant(Tensor::matrix({{7, 7, 7, 7}}))).value();
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("batch norm normalises per feature") {
  ad::Graph g;
  auto x = g.constant(rand_x({50, 3}, 5));
  auto r = ad::batch_norm(x, g.constant(Tensor(ad::Shape{3}, 2.0)), g.constant(Tensor(ad::Shape{3}, 3.0)), 1e-5);
  for (std::size_t f = 0; f < 3; ++f) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 50; ++i) m += r.out.value().at(i, f);
    m /= 50;
    for (std::size_t i = 0; i < 50; ++i) v += std::pow(r.out.value().at(i, f) - m, 2);
    v /= 50;
    CHECK(m == doctest::Approx(3.0));
    CHECK(std::sqrt(v) == doctest::Approx(2.0).epsilon(1e-3));
  }
}

TEST_CASE("record layout") {
  net::RecordLayout l({4, 6, 5, 3});
  CHECK(l.total() == 18);
  CHECK(l.maskable() == 15);
  CHECK(l.offset(2) == 10);
  CHECK(l.layer_of(9) == 1);
  CHECK(l.layer_of(15) == 3);
  Rng rng(1);
  net::Classifier c(mlp_spec(), rng);
  CHECK(c.layout() == l);
}

TEST_CASE("zero network gives uniform predictions and zero activations") {
  Rng rng(2);
  net::Classifier c(mlp_spec(), rng);
  for (auto& e : c.params().entries()) std::fill(e.value.storage().begin(), e.value.storage().end(), 0.0);
  auto pass = c.forward_record(rand_x({5, 4}, 1));
  for (std::size_t l = 1; l < pass.record.layers.size(); ++l)
    for (double v : pass.record.layers[l].data()) CHECK(v == 0.0);
  const Tensor probs = c.predict(rand_x({5, 4}, 1));
  for (double p : probs.data()) CHECK(p == doctest::Approx(1.0 / 3));
}

TEST_CASE("identity first layer records the input as its pre-activation") {
  Rng rng(3);
  net::Classifier c(mlp_spec(3, {3}, 2), rng);
  auto& w = c.params()[c.weight_indices()[0]];
  std::fill(w.storage().begin(), w.storage().end(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  for (auto& e : c.params().entries())
    if (e.value.rank() == 1) std::fill(e.value.storage().begin(), e.value.storage().end(), 0.0);
  Tensor x = rand_x({4, 3}, 2);
  CHECK(c.forward_record(x).record.layers[1] == x);
}

TEST_CASE("record splicing") {
  Rng rng(4);
  for (const auto& spec : {mlp_spec(), cnn_spec()}) {
    net::Classifier c(spec, rng);
    ad::Shape xs{3};
    xs.insert(xs.end(), spec.input_shape.begin(), spec.input_shape.end());
    Tensor x = rand_x(xs, 7);
    auto clean = c.forward_record(x);
    const Tensor flat = clean.record.flatten();

    SUBCASE("empty mask is bit-identical") {
      auto m = mask::empty_mask(c.layout(), 3);
      CHECK(c.forward_spliced(clean.record, m.bits, Tensor(flat.shape())).logits == clean.logits);
    }
    SUBCASE("self-splice of every non-logit layer is bit-identical") {
      for (std::size_t l = 0; l + 1 < c.layout().num_layers(); ++l) {
        Tensor m(flat.shape());
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < c.layout().width(l); ++j) m.at(i, c.layout().offset(l) + j) = 1;
        auto out = c.forward_spliced(clean.record, m, flat);
        CHECK(out.logits == clean.logits);
        CHECK(out.record.flatten() == flat);
      }
    }
    SUBCASE("perturbing one hidden unit changes the logits") {
      Tensor m(flat.shape());
      const std::size_t pos = c.layout().offset(1) + 1;
      m.at(0, pos) = 1;
      Tensor imp = flat;
      imp.at(0, pos) += 0.5;
      auto out = c.forward_spliced(clean.record, m, imp);
      CHECK(out.logits != clean.logits);
      CHECK(out.record.layers[1].at(0, 1) == imp.at(0, pos));
    }
  }
}

TEST_CASE("gradient through the imputation barrier is zero") {
  Rng rng(5);
  net::Classifier c(mlp_spec(), rng);
  Tensor x = rand_x({2, 4}, 9);
  auto rec = c.forward_record(x).record;
  auto masks = net::split_mask(
      [&] {
        Tensor m({2, c.layout().total()});
        m.at(1, c.layout().offset(1) + 2) = 1;
        return m;
      }(),
      c.layout());
  CHECK(masks[0].empty());
  CHECK_FALSE(masks[1].empty());
  ad::Graph g;
  auto psi = c.params().bind(g);
  auto imp = g.leaf(rec.layers[1], true);
  net::Splice splice{&masks, [&](std::size_t, ad::Var) { return ad::stop_gradient(imp); }};
  net::ForwardOptions opts;
  opts.splice = &splice;
  auto pass = c.forward(g, psi, g.constant(x), opts);
  auto grads = g.backward(ad::sum(pass.logits));
  const Tensor& gi = grads.contains(imp) ? grads[imp] : Tensor(rec.layers[1].shape());
  for (double v : gi.data()) CHECK(v == 0.0);
}

TEST_CASE("classifier cross-entropy gradient matches finite differences") {
  for (const auto& spec : {mlp_spec(), cnn_spec()}) {
    for (int inst = 0; inst < 20; ++inst) {
      Rng rng(100 + inst);
      auto s = spec;
      net::Classifier c(s, rng);
      ad::Shape xs{4};
      xs.insert(xs.end(), spec.input_shape.begin(), spec.input_shape.end());
      Tensor x = rand_x(xs, 200 + inst);
      std::vector<int> y{0, 2, 1, 2};
      ad::Graph g;
      auto psi = c.params().bind(g);
      auto loss = train::classifier_loss(c.forward(g, psi, g.constant(x), {}).logits, y);
      auto analytic = ad::collect_gradients(g.backward(loss), psi);
      std::vector<Tensor*> ptrs;
      for (auto& e : c.params().entries()) ptrs.push_back(&e.value);
      auto value = [&] {
        ad::Graph h;
        auto p = c.params().bind_constant(h);
        return train::classifier_loss(c.forward(h, p, h.constant(x), {}).logits, y).value().item();
      };
      auto r = oracle::finite_difference(value, ptrs, analytic, 1e-5, 40, inst);
      CHECK(r.max_rel < 1e-4);
    }
  }
}

TEST_CASE("batch-norm running statistics and save/load") {
  Rng rng(6);
  auto spec = mlp_spec();
  spec.batch_norm = true;
  net::Classifier c(spec, rng);
  ad::Graph g;
  auto psi = c.params().bind_constant(g);
  net::ForwardOptions opts;
  opts.train = true;
  auto pass = c.forward(g, psi, g.constant(rand_x({8, 4}, 3)), opts);
  const Tensor before = c.running_mean()[0];
  c.update_running_stats(pass);
  CHECK(c.running_mean()[0] != before);

  io::Container box;
  c.save(box);
  auto back = net::Classifier::load(io::Container::deserialize(box.serialize()), spec);
  Tensor x = rand_x({3, 4}, 4);
  CHECK(back.logits(x) == c.logits(x));
}

TEST_CASE("container round trip and errors") {
  io::Container c;
  c.meta()["kind"] = "test";
  c.put("a", Tensor::matrix({{1.5, -2}, {0.1, 1e300}}));
  c.put_u8("b", {3}, {0, 128, 255});
  c.put_i64("c", {2}, {-5, 9});
  auto back = io::Container::deserialize(c.serialize());
  CHECK(back.meta()["kind"] == "test");
  CHECK(back.tensor("a") == c.tensor("a"));
  CHECK(back.tensor("b") == Tensor::vector({0, 128, 255}));
  CHECK(back.integers("c") == std::vector<std::int64_t>{-5, 9});
  CHECK_THROWS_AS(back.entry("missing"), DataError);
  auto bytes = c.serialize();
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS_AS(io::Container::deserialize(bytes), DataError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(io::Container::deserialize(bytes), DataError);
}

TEST_CASE("classifier spec validation") {
  auto s = mlp_spec();
  s.num_classes = 1;
  CHECK_THROWS_AS(s.validate(), Error);
  auto k = cnn_spec();
  k.kernel = 2;
  CHECK_THROWS_AS(k.validate(), Error);
}
