#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "pilot/autodiff/optim.hpp"
#include "pilot/core/error.hpp"

using namespace pilot::ad;
using oracle::random_tensor;

namespace {

using Maker = std::function<std::vector<Tensor>(std::mt19937_64&)>;

double worst_rel(const oracle::OpFn& op, const Maker& make, int instances = 20) {
  double worst = 0;
  for (int i = 0; i < instances; ++i) {
    std::mt19937_64 rng(1000 + i);
    auto r = oracle::check_op(op, make(rng), rng);
    worst = std::max(worst, r.max_rel);
  }
  return worst;
}

Tensor positive(Shape s, std::mt19937_64& rng) { return random_tensor(std::move(s), rng, 0.5, 2.0); }

// Distinct values so that max pooling has no near-ties.
Tensor distinct(Shape s, std::mt19937_64& rng) {
  Tensor t(std::move(s));
  std::vector<double> v(t.size());
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = 0.1 * v[i];
  return t;
}

}  // namespace

TEST_CASE("elementwise binary ops with broadcasting") {
  auto same = [](std::mt19937_64& r) {
    return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({3, 4}, r)};
  };
  auto row = [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({4}, r)}; };
  auto scalar = [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({}, r)}; };
  auto pos = [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor({3, 4}, r), positive({4}, r)}; };
  auto lead = [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor({4}, r), random_tensor({3, 4}, r)}; };

  using V = const std::vector<Var>&;
  for (const Maker& m : {Maker(same), Maker(row), Maker(scalar), Maker(lead)}) {
    CHECK(worst_rel([](Graph&, V v) { return add(v[0], v[1]); }, m) < 1e-4);
    CHECK(worst_rel([](Graph&, V v) { return sub(v[0], v[1]); }, m) < 1e-4);
    CHECK(worst_rel([](Graph&, V v) { return mul(v[0], v[1]); }, m) < 1e-4);
  }
  CHECK(worst_rel([](Graph&, V v) { return div(v[0], v[1]); }, pos) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return div(v[1], v[0]); }, [](std::mt19937_64& r) {
          return std::vector<Tensor>{positive({3, 4}, r), random_tensor({3, 4}, r)};
        }) < 1e-4);
}

TEST_CASE("broadcast shapes") {
  Graph g;
  Var a = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(add(a, g.constant(Tensor::vector({10, 20}))).value() == Tensor::matrix({{11, 22}, {13, 24}}));
  CHECK(mul(g.constant(Tensor::scalar(2)), a).value() == Tensor::matrix({{2, 4}, {6, 8}}));
  CHECK_THROWS_AS(add(a, g.constant(Tensor::vector({1, 2, 3}))), pilot::ShapeError);
}

TEST_CASE("unary ops") {
  using V = const std::vector<Var>&;
  auto any = [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor({2, 5}, r)}; };
  auto pos = [](std::mt19937_64& r) { return std::vector<Tensor>{positive({2, 5}, r)}; };
  auto apart = [](std::mt19937_64& r) { return std::vector<Tensor>{oracle::away_from_zero({2, 5}, r)}; };
  CHECK(worst_rel([](Graph&, V v) { return scale(v[0], -1.7); }, any) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return shift(v[0], 0.3); }, any) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return neg(v[0]); }, any) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return relu(v[0]); }, apart) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return exp(v[0]); }, any) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return log(v[0]); }, pos) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return square(v[0]); }, any) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return sqrt(v[0]); }, pos) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return sum(v[0]); }, any) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return mean(v[0]); }, any) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return softmax(v[0]); }, any) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return log_softmax(v[0]); }, any) < 1e-4);
}

TEST_CASE("matmul, conv2d and maxpool") {
  using V = const std::vector<Var>&;
  CHECK(worst_rel([](Graph&, V v) { return matmul(v[0], v[1]); },
                  [](std::mt19937_64& r) {
                    return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({4, 2}, r)};
                  }) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return conv2d(v[0], v[1], v[2]); },
                  [](std::mt19937_64& r) {
                    return std::vector<Tensor>{random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r),
                                               random_tensor({3}, r)};
                  }) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return maxpool2d(v[0], 2); },
                  [](std::mt19937_64& r) { return std::vector<Tensor>{distinct({2, 2, 4, 4}, r)}; }) < 1e-4);
}

TEST_CASE("structural ops") {
  using V = const std::vector<Var>&;
  auto two = [](std::mt19937_64& r) { return std::vector<Tensor>{random_tensor({3, 2}, r), random_tensor({3, 4}, r)}; };
  CHECK(worst_rel([](Graph&, V v) { return concat({v[0], v[1]}, 1); }, two) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return concat({v[1], v[1]}, 0); }, two) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return slice(v[1], 1, 1, 3); }, two) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return slice(v[1], 0, 1, 2); }, two) < 1e-4);
  CHECK(worst_rel([](Graph&, V v) { return reshape(v[1], {2, 6}); }, two) < 1e-4);
  Tensor m({3, 4});
  for (std::size_t i = 0; i < m.size(); i += 3) m[i] = 1;
  CHECK(worst_rel([m](Graph&, V v) { return select(m, v[0], v[1]); },
                  [](std::mt19937_64& r) {
                    return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({3, 4}, r)};
                  }) < 1e-4);
}

TEST_CASE("batch norm gradient, dense and spatial") {
  using V = const std::vector<Var>&;
  auto bn = [](Graph&, V v) { return batch_norm(v[0], v[1], v[2], 1e-5).out; };
  CHECK(worst_rel(bn, [](std::mt19937_64& r) {
          return std::vector<Tensor>{random_tensor({6, 3}, r), positive({3}, r), random_tensor({3}, r)};
        }) < 1e-4);
  CHECK(worst_rel(bn, [](std::mt19937_64& r) {
          return std::vector<Tensor>{random_tensor({3, 2, 2, 2}, r), positive({2}, r), random_tensor({2}, r)};
        }) < 1e-4);
}

TEST_CASE("stop_gradient passes the value and blocks the gradient") {
  Graph g;
  Var x = g.leaf(Tensor::vector({1.5, -2}), true);
  Var y = stop_gradient(x);
  CHECK(y.value() == x.value());
  Var loss = add(sum(square(y)), sum(x));
  auto grads = g.backward(loss);
  CHECK(grads[x] == Tensor::vector({1, 1}));
}

TEST_CASE("no-grad evaluation records no backward work") {
  Graph g;
  Var x = g.constant(Tensor::vector({1, 2}));
  Var y = exp(x);
  CHECK_FALSE(g.needs_grad(y));
}

TEST_CASE("kernels give identical results across thread counts") {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({64, 33}, rng), b = random_tensor({33, 17}, rng);
  auto run = [&] {
    Graph g;
    return matmul(g.constant(a), g.constant(b)).value();
  };
  set_num_threads(1);
  Tensor one = run();
  set_num_threads(4);
  Tensor four = run();
  set_num_threads(1);
  CHECK(one == four);
}

TEST_CASE("Adam step and clipping") {
  ParameterGroup p;
  p.add("w", Tensor::vector({1.0, -1.0}));
  AdamState s;
  AdamConfig c;
  c.lr = 0.1;
  adam_step(p, {Tensor::vector({2.0, -0.5})}, s, c);
  // First bias-corrected step moves every coordinate by lr * sign(g).
  CHECK(p[0][0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[0][1] == doctest::Approx(-0.9).epsilon(1e-6));

  std::vector<Tensor> g{Tensor::vector({3, 4})};
  CHECK(clip_gradients(g, 1.0) == doctest::Approx(5.0));
  CHECK(global_norm(g) == doctest::Approx(1.0));
  std::vector<Tensor> small{Tensor::vector({0.3, 0.4})};
  clip_gradients(small, 1.0);
  CHECK(small[0] == Tensor::vector({0.3, 0.4}));
}

TEST_CASE("checksum changes with values") {
  ParameterGroup a;
  a.add("w", Tensor::vector({1, 2}));
  const auto before = a.checksum();
  a[0][1] = 2.0000000001;
  CHECK(a.checksum() != before);
}
