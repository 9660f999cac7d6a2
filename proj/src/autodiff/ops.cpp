#include "pilot/autodiff/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <numbers>

#include "kernels.hpp"
#include "pilot/core/error.hpp"

namespace pilot::ad {

namespace {

std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> n = [] {
    if (const char* env = std::getenv("PILOT_NUM_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v > 0) return static_cast<std::size_t>(v);
    }
    return std::size_t{1};
  }();
  return n;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct Broadcast {
  Shape shape;
  std::size_t n, na, nb;
};

Broadcast broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return {a.shape(), a.size(), a.size(), b.size()};
  if (b.size() == 1 || (b.size() > 0 && is_suffix(b.shape(), a.shape()))) {
    return {a.shape(), a.size(), a.size(), b.size()};
  }
  if (a.size() == 1 || (a.size() > 0 && is_suffix(a.shape(), b.shape()))) {
    return {b.shape(), b.size(), a.size(), b.size()};
  }
  shape_fail(op, a.shape(), b.shape());
}

// Visits f(i, ia, ib) for every output element; the smaller operand repeats.
template <class F>
void for_each_pair(std::size_t n, std::size_t na, std::size_t nb, F&& f) {
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
  } else if (na == n) {
    for (std::size_t i0 = 0; i0 < n; i0 += nb)
      for (std::size_t j = 0; j < nb; ++j) f(i0 + j, i0 + j, j);
  } else {
    for (std::size_t i0 = 0; i0 < n; i0 += na)
      for (std::size_t j = 0; j < na; ++j) f(i0 + j, j, i0 + j);
  }
}

template <class Fwd, class Bwd>
Var binary(const char* op, Var a, Var b, Fwd fwd, Bwd bwd) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast bc = broadcast(op, av, bv);
  Tensor out(bc.shape);
  const double* pa = av.data().data();
  const double* pb = bv.data().data();
  double* po = out.data().data();
  for_each_pair(bc.n, bc.na, bc.nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = fwd(pa[ia], pb[ib]); });
  const Var in[] = {a, b};
  return a.graph().record(op, std::move(out), in, [bc, bwd](const BackwardContext& ctx) {
    const double* xa = ctx.in_values[0]->data().data();
    const double* xb = ctx.in_values[1]->data().data();
    const double* y = ctx.out_value.data().data();
    const double* g = ctx.out_grad.data().data();
    double* ga = ctx.in_grads[0] ? ctx.in_grads[0]->data().data() : nullptr;
    double* gb = ctx.in_grads[1] ? ctx.in_grads[1]->data().data() : nullptr;
    for_each_pair(bc.n, bc.na, bc.nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      bwd(xa[ia], xb[ib], y[i], g[i], ga ? &ga[ia] : nullptr, gb ? &gb[ib] : nullptr);
    });
  });
}

template <class Fwd, class Bwd>
Var unary(const char* op, Var a, Fwd fwd, Bwd bwd) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  const double* pa = av.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < av.size(); ++i) po[i] = fwd(pa[i]);
  const Var in[] = {a};
  return a.graph().record(op, std::move(out), in, [bwd](const BackwardContext& ctx) {
    const double* x = ctx.in_values[0]->data().data();
    const double* y = ctx.out_value.data().data();
    const double* g = ctx.out_grad.data().data();
    double* gx = ctx.in_grads[0]->data().data();
    const std::size_t n = ctx.out_value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += bwd(x[i], y[i], g[i]);
  });
}

std::size_t product(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

}  // namespace

void set_num_threads(std::size_t n) { thread_setting().store(std::max<std::size_t>(1, n)); }
std::size_t num_threads() { return thread_setting().load(); }

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double, double g, double* ga, double* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double out, double g, double* ga, double* gb) {
        if (ga) *ga += g / y;
        if (gb) *gb -= g * out / y;
      });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double, double g) { return g * factor; });
}

Var shift(Var a, double offset) {
  return unary(
      "shift", a, [offset](double x) { return x + offset; }, [](double, double, double g) { return g; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_fail("matmul", av.shape(), bv.shape());
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor out(Shape{n, m});
  kernels::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), n, k, m);
  const Var in[] = {a, b};
  return a.graph().record("matmul", std::move(out), in, [n, k, m](const BackwardContext& ctx) {
    const double* g = ctx.out_grad.data().data();
    if (ctx.in_grads[0]) kernels::gemm_nt(g, ctx.in_values[1]->data().data(), ctx.in_grads[0]->data().data(), n, m, k);
    if (ctx.in_grads[1]) kernels::gemm_tn(ctx.in_values[0]->data().data(), g, ctx.in_grads[1]->data().data(), n, k, m);
  });
}

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, o, k, pad;
  std::size_t ckk() const { return c * k * k; }
  std::size_t hw() const { return h * w; }
};

// cols [C*k*k, H*W] for one sample.
void im2col(const ConvGeom& g, const double* x, double* cols) {
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((ci * g.k + ky) * g.k + kx) * g.hw();
        for (std::size_t y = 0; y < g.h; ++y) {
          const long sy = static_cast<long>(y + ky) - static_cast<long>(g.pad);
          for (std::size_t xx = 0; xx < g.w; ++xx) {
            const long sx = static_cast<long>(xx + kx) - static_cast<long>(g.pad);
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(g.h) && sx < static_cast<long>(g.w);
            row[y * g.w + xx] = inside ? x[(ci * g.h + sy) * g.w + sx] : 0.0;
          }
        }
      }
}

void col2im(const ConvGeom& g, const double* cols, double* dx) {
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((ci * g.k + ky) * g.k + kx) * g.hw();
        for (std::size_t y = 0; y < g.h; ++y) {
          const long sy = static_cast<long>(y + ky) - static_cast<long>(g.pad);
          if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
          for (std::size_t xx = 0; xx < g.w; ++xx) {
            const long sx = static_cast<long>(xx + kx) - static_cast<long>(g.pad);
            if (sx < 0 || sx >= static_cast<long>(g.w)) continue;
            dx[(ci * g.h + sy) * g.w + sx] += row[y * g.w + xx];
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var w, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0) {
    shape_fail("conv2d", xv.shape(), wv.shape());
  }
  if (bv.size() != wv.dim(0)) shape_fail("conv2d(bias)", wv.shape(), bv.shape());
  const ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(2) / 2};
  Tensor out(Shape{g.n, g.o, g.h, g.w});
  std::vector<double> cols(g.ckk() * g.hw());
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(g, xv.data().data() + s * g.c * g.hw(), cols.data());
    double* os = out.data().data() + s * g.o * g.hw();
    for (std::size_t oc = 0; oc < g.o; ++oc) std::fill(os + oc * g.hw(), os + (oc + 1) * g.hw(), bv[oc]);
    kernels::gemm_nn(wv.data().data(), cols.data(), os, g.o, g.ckk(), g.hw());
  }
  const Var in[] = {x, w, bias};
  return x.graph().record("conv2d", std::move(out), in, [g](const BackwardContext& ctx) {
    const double* xd = ctx.in_values[0]->data().data();
    const double* wd = ctx.in_values[1]->data().data();
    const double* gd = ctx.out_grad.data().data();
    std::vector<double> cols(g.ckk() * g.hw());
    std::vector<double> dcols(ctx.in_grads[0] ? g.ckk() * g.hw() : 0);
    for (std::size_t s = 0; s < g.n; ++s) {
      const double* gs = gd + s * g.o * g.hw();
      if (ctx.in_grads[2]) {
        double* gb = ctx.in_grads[2]->data().data();
        for (std::size_t oc = 0; oc < g.o; ++oc) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.hw(); ++i) acc += gs[oc * g.hw() + i];
          gb[oc] += acc;
        }
      }
      if (ctx.in_grads[1]) {
        im2col(g, xd + s * g.c * g.hw(), cols.data());
        kernels::gemm_nt(gs, cols.data(), ctx.in_grads[1]->data().data(), g.o, g.hw(), g.ckk());
      }
      if (ctx.in_grads[0]) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        kernels::gemm_tn(wd, gs, dcols.data(), g.o, g.ckk(), g.hw());
        col2im(g, dcols.data(), ctx.in_grads[0]->data().data() + s * g.c * g.hw());
      }
    }
  });
}

Var maxpool2d(Var x, std::size_t window) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || window == 0 || xv.dim(2) < window || xv.dim(3) < window) {
    throw ShapeError("maxpool2d: cannot pool shape " + shape_str(xv.shape()) + " with window " + std::to_string(window));
  }
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / window, ow = w / window;
  Tensor out(Shape{n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const double* xd = xv.data().data();
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
        std::size_t best = p * h * w + (y * window) * w + xx * window;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = p * h * w + (y * window + dy) * w + xx * window + dx;
            if (xd[idx] > xd[best]) best = idx;
          }
        (*argmax)[o] = best;
        out[o] = xd[best];
      }
  const Var in[] = {x};
  return x.graph().record("maxpool2d", std::move(out), in, [argmax](const BackwardContext& ctx) {
    double* gx = ctx.in_grads[0]->data().data();
    const double* g = ctx.out_grad.data().data();
    for (std::size_t i = 0; i < argmax->size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y, double g) { return g * y; });
}

Var log(Var a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double, double g) { return g / x; });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double, double g) { return 2.0 * x * g; });
}

Var sqrt(Var a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y, double g) { return 0.5 * g / y; });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  const Var in[] = {a};
  return a.graph().record("sum", Tensor::scalar(acc), in, [](const BackwardContext& ctx) {
    const double g = ctx.out_grad[0];
    for (double& v : ctx.in_grads[0]->data()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  const Var in[] = {a};
  return a.graph().record("mean", Tensor::scalar(acc / static_cast<double>(n)), in, [n](const BackwardContext& ctx) {
    const double g = ctx.out_grad[0] / static_cast<double>(n);
    for (double& v : ctx.in_grads[0]->data()) v += g;
  });
}

Var softmax(Var a) {
  const Tensor& av = a.value();
  if (av.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t d = av.shape().back();
  const std::size_t rows = d ? av.size() / d : 0;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * d;
    double* y = out.data().data() + r * d;
    const double mx = *std::max_element(x, x + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < d; ++j) y[j] /= z;
  }
  const Var in[] = {a};
  return a.graph().record("softmax", std::move(out), in, [rows, d](const BackwardContext& ctx) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = ctx.out_value.data().data() + r * d;
      const double* g = ctx.out_grad.data().data() + r * d;
      double* gx = ctx.in_grads[0]->data().data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) gx[j] += y[j] * (g[j] - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& av = a.value();
  if (av.rank() == 0) throw ShapeError("log_softmax: scalar input");
  const std::size_t d = av.shape().back();
  const std::size_t rows = d ? av.size() / d : 0;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data().data() + r * d;
    double* y = out.data().data() + r * d;
    const double mx = *std::max_element(x, x + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < d; ++j) y[j] = x[j] - lse;
  }
  const Var in[] = {a};
  return a.graph().record("log_softmax", std::move(out), in, [rows, d](const BackwardContext& ctx) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = ctx.out_value.data().data() + r * d;
      const double* g = ctx.out_grad.data().data() + r * d;
      double* gx = ctx.in_grads[0]->data().data() + r * d;
      double gs = 0.0;
      for (std::size_t j = 0; j < d; ++j) gs += g[j];
      for (std::size_t j = 0; j < d; ++j) gx[j] += g[j] - std::exp(y[j]) * gs;
    }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_fail("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) shape_fail("concat", first, s);
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = product(first, 0, axis);
  std::vector<std::size_t> inner(parts.size());
  std::size_t total_inner = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    inner[p] = product(parts[p].shape(), axis, first.size());
    total_inner += inner[p];
  }
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].value().data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data().data() + o * total_inner + offset, src + o * inner[p], inner[p] * sizeof(double));
    offset += inner[p];
  }
  return parts[0].graph().record("concat", std::move(out), parts, [outer, inner, total_inner](const BackwardContext& ctx) {
    const double* g = ctx.out_grad.data().data();
    std::size_t off = 0;
    for (std::size_t p = 0; p < inner.size(); ++p) {
      if (Tensor* gp = ctx.in_grads[p]) {
        for (std::size_t o = 0; o < outer; ++o) {
          double* dst = gp->data().data() + o * inner[p];
          const double* src = g + o * total_inner + off;
          for (std::size_t j = 0; j < inner[p]; ++j) dst[j] += src[j];
        }
      }
      off += inner[p];
    }
  });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(s));
  }
  const std::size_t outer = product(s, 0, axis);
  const std::size_t inner = product(s, axis + 1, s.size());
  const std::size_t src_row = s[axis] * inner;
  const std::size_t len = (end - begin) * inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const double* src = a.value().data().data();
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data().data() + o * len, src + o * src_row + begin * inner, len * sizeof(double));
  const Var in[] = {a};
  return a.graph().record("slice", std::move(out), in, [outer, src_row, len, begin, inner](const BackwardContext& ctx) {
    const double* g = ctx.out_grad.data().data();
    double* gx = ctx.in_grads[0]->data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      double* dst = gx + o * src_row + begin * inner;
      for (std::size_t j = 0; j < len; ++j) dst[j] += g[o * len + j];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const Var in[] = {a};
  return a.graph().record("reshape", std::move(out), in, [](const BackwardContext& ctx) {
    const double* g = ctx.out_grad.data().data();
    double* gx = ctx.in_grads[0]->data().data();
    for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) gx[i] += g[i];
  });
}

Var select(const Tensor& mask, Var when_set, Var otherwise) {
  const Tensor& a = when_set.value();
  const Tensor& b = otherwise.value();
  if (a.shape() != b.shape()) shape_fail("select", a.shape(), b.shape());
  if (mask.size() != a.size()) shape_fail("select(mask)", mask.shape(), a.shape());
  Tensor out(a.shape());
  auto bits = std::make_shared<std::vector<bool>>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool set = mask[i] != 0.0;
    (*bits)[i] = set;
    out[i] = set ? a[i] : b[i];
  }
  const Var in[] = {when_set, otherwise};
  return when_set.graph().record("select", std::move(out), in, [bits](const BackwardContext& ctx) {
    const double* g = ctx.out_grad.data().data();
    double* ga = ctx.in_grads[0] ? ctx.in_grads[0]->data().data() : nullptr;
    double* gb = ctx.in_grads[1] ? ctx.in_grads[1]->data().data() : nullptr;
    for (std::size_t i = 0; i < bits->size(); ++i) {
      if ((*bits)[i]) {
        if (ga) ga[i] += g[i];
      } else if (gb) {
        gb[i] += g[i];
      }
    }
  });
}

Var stop_gradient(Var a) {
  return a.graph().record("stop_gradient", a.value(), {}, {});
}

BatchNormResult batch_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 && xv.rank() != 4) throw ShapeError("batch_norm: expected [N,F] or [N,F,H,W], got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), f = xv.dim(1);
  const std::size_t spatial = xv.rank() == 4 ? xv.dim(2) * xv.dim(3) : 1;
  if (gamma.size() != f || beta.size() != f) shape_fail("batch_norm(gamma/beta)", xv.shape(), gamma.shape());
  const double count = static_cast<double>(n * spatial);

  Tensor mean_t(Shape{f}), var_t(Shape{f});
  const double* xd = xv.data().data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < f; ++c)
      for (std::size_t i = 0; i < spatial; ++i) mean_t[c] += xd[(s * f + c) * spatial + i];
  for (std::size_t c = 0; c < f; ++c) mean_t[c] /= count;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < f; ++c)
      for (std::size_t i = 0; i < spatial; ++i) {
        const double d = xd[(s * f + c) * spatial + i] - mean_t[c];
        var_t[c] += d * d;
      }
  for (std::size_t c = 0; c < f; ++c) var_t[c] /= count;

  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(f);
  for (std::size_t c = 0; c < f; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var_t[c] + eps);
  Tensor out(xv.shape());
  const double* gd = gamma.value().data().data();
  const double* bd = beta.value().data().data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < f; ++c)
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t idx = (s * f + c) * spatial + i;
        (*xhat)[idx] = (xd[idx] - mean_t[c]) * (*inv_std)[c];
        out[idx] = gd[c] * (*xhat)[idx] + bd[c];
      }

  const Var in[] = {x, gamma, beta};
  Var y = x.graph().record("batch_norm", std::move(out), in, [xhat, inv_std, n, f, spatial, count](const BackwardContext& ctx) {
    const double* g = ctx.out_grad.data().data();
    const double* gam = ctx.in_values[1]->data().data();
    std::vector<double> sum_g(f, 0.0), sum_gx(f, 0.0);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < f; ++c)
        for (std::size_t i = 0; i < spatial; ++i) {
          const std::size_t idx = (s * f + c) * spatial + i;
          sum_g[c] += g[idx];
          sum_gx[c] += g[idx] * (*xhat)[idx];
        }
    if (ctx.in_grads[1])
      for (std::size_t c = 0; c < f; ++c) (*ctx.in_grads[1])[c] += sum_gx[c];
    if (ctx.in_grads[2])
      for (std::size_t c = 0; c < f; ++c) (*ctx.in_grads[2])[c] += sum_g[c];
    if (ctx.in_grads[0]) {
      double* gx = ctx.in_grads[0]->data().data();
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < f; ++c) {
          const double k = gam[c] * (*inv_std)[c] / count;
          for (std::size_t i = 0; i < spatial; ++i) {
            const std::size_t idx = (s * f + c) * spatial + i;
            gx[idx] += k * (count * g[idx] - sum_g[c] - (*xhat)[idx] * sum_gx[c]);
          }
        }
    }
  });
  return {y, std::move(mean_t), std::move(var_t)};
}

}  // namespace pilot::ad
