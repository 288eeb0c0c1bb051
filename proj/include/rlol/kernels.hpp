#pragma once

#include <cstddef>

namespace rlol::kernels {

// Row-major GEMM variants. Each output element is accumulated over the inner
// index in ascending order, independent of how many rows are in the batch, so
// a row's result does not depend on which other rows share the call.

/// C[m x n] (+)= A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

/// C[m x n] (+)= A^T * B with A[k x m], B[k x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

/// C[m x n] (+)= A * B^T with A[m x k], B[n x k]
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

}  // namespace rlol::kernels
