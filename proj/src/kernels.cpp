#include "rlol/kernels.hpp"

#include <algorithm>
#include <vector>

namespace rlol::kernels {

namespace {

template <class T>
inline void block4(std::size_t n, std::size_t k, const T* a0, const T* a1, const T* a2, const T* a3,
                   const T* b, T* c0, T* c1, T* c2, T* c3) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n;
        const T s0 = a0[p], s1 = a1[p], s2 = a2[p], s3 = a3[p];
        for (std::size_t j = 0; j < n; ++j) {
            const T bj = brow[j];
            c0[j] += s0 * bj;
            c1[j] += s1 * bj;
            c2[j] += s2 * bj;
            c3[j] += s3 * bj;
        }
    }
}

}  // namespace

template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    std::size_t i = 0;
    // Four rows share each loaded row of B.
    for (; i + 4 <= m; i += 4) {
        block4(n, k, a + i * k, a + (i + 1) * k, a + (i + 2) * k, a + (i + 3) * k, b, c + i * n,
               c + (i + 1) * n, c + (i + 2) * n, c + (i + 3) * n);
    }
    if (i == m) return;
    // Tail rows go through the same block code (zero-padded) so every row is
    // computed by identical instructions regardless of its position.
    const std::size_t rest = m - i;
    std::vector<T> pa(4 * k, T(0));
    std::vector<T> pc(4 * n, T(0));
    std::copy(a + i * k, a + m * k, pa.begin());
    std::copy(c + i * n, c + m * n, pc.begin());
    block4(n, k, pa.data(), pa.data() + k, pa.data() + 2 * k, pa.data() + 3 * k, b, pc.data(),
           pc.data() + n, pc.data() + 2 * n, pc.data() + 3 * n);
    std::copy(pc.begin(), pc.begin() + rest * n, c + i * n);
}

template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T s = arow[i];
            if (s == T(0)) continue;
            T* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += s * brow[j];
        }
    }
}

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
    std::vector<T> bt(k * n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + r] = b[r * k + p];
    gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

template void gemm_nn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void gemm_tn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_tn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
template void gemm_nt<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_nt<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);

}  // namespace rlol::kernels
