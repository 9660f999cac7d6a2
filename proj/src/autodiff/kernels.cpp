#include "kernels.hpp"

#include <algorithm>
#include <thread>
#include <vector>

#include "pilot/autodiff/ops.hpp"

namespace pilot::ad::kernels {

void parallel_for(std::size_t n, std::size_t work_per_item,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t threads = std::min(num_threads(), n);
  if (threads <= 1 || n * work_per_item < (1u << 16)) {
    body(0, n);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(0, std::min(n, chunk));
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  parallel_for(n, k * m, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      double* ci = c + i * m;
      const double* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = ai[p];
        if (aip == 0.0) continue;
        const double* bp = b + p * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
      }
    }
  });
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m, std::size_t k) {
  parallel_for(n, k * m, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const double* ai = a + i * m;
      double* ci = c + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * m;
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += ai[j] * bp[j];
        ci[p] += acc;
      }
    }
  });
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  parallel_for(k, n * m, [=](std::size_t p0, std::size_t p1) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* ai = a + i * k;
      const double* bi = b + i * m;
      for (std::size_t p = p0; p < p1; ++p) {
        const double aip = ai[p];
        if (aip == 0.0) continue;
        double* cp = c + p * m;
        for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
      }
    }
  });
}

}  // namespace pilot::ad::kernels
