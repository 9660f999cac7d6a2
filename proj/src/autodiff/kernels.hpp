#pragma once

#include <cstddef>
#include <functional>

namespace pilot::ad::kernels {

// Runs body(begin, end) over [0, n), possibly split into contiguous chunks on
// worker threads. work_per_item is a rough flop count used to skip threading
// for small problems.
void parallel_for(std::size_t n, std::size_t work_per_item,
                  const std::function<void(std::size_t, std::size_t)>& body);

// C[N,M] += A[N,K] * B[K,M]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m);
// C[N,K] += A[N,M] * B[K,M]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m, std::size_t k);
// C[K,M] += A[N,K]^T * B[N,M]
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m);

}  // namespace pilot::ad::kernels
