#pragma once

#include <span>
#include <vector>

#include "pilot/autodiff/graph.hpp"

namespace pilot::ad {

// Elementwise binary ops. Operands either share a shape, or the smaller one is
// a scalar or matches the trailing dimensions of the larger (e.g. a [D] bias
// against an [N, D] batch). The result has the larger operand's shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double factor);
Var shift(Var a, double offset);
Var neg(Var a);

// [N, K] x [K, M] -> [N, M]
Var matmul(Var a, Var b);
// x [N, C, H, W], w [O, C, k, k], bias [O]; stride 1, zero padding k/2, odd k.
Var conv2d(Var x, Var w, Var bias);
// Non-overlapping max pooling with a square window of `window`.
Var maxpool2d(Var x, std::size_t window);

Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);

Var sum(Var a);
Var mean(Var a);

// Along the last axis.
Var softmax(Var a);
Var log_softmax(Var a);

Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);

// out[i] = mask[i] != 0 ? when_set[i] : otherwise[i]. The mask is data, not a node.
Var select(const Tensor& mask, Var when_set, Var otherwise);

// Forward value is the input, bit for bit; no gradient passes back.
Var stop_gradient(Var a);

// Training-mode batch normalisation. x is [N, F] or [N, F, H, W]; statistics
// are taken per feature F over every other axis. Biased batch variance is
// used for normalisation, as in the usual formulation.
struct BatchNormResult {
  Var out;
  Tensor batch_mean;  // [F]
  Tensor batch_var;   // [F], biased
};
BatchNormResult batch_norm(Var x, Var gamma, Var beta, double eps);

// Kernel parallelism cap (defaults to PILOT_NUM_THREADS, else 1). Row
// partitioning keeps every reduction in a fixed order, so results do not
// depend on the thread count.
void set_num_threads(std::size_t n);
std::size_t num_threads();

}  // namespace pilot::ad
