#include "kernels_impl.hpp"

#include <immintrin.h>

#include <cmath>

namespace nfm::kernels::detail {

namespace {

// Four rows of c, `width` (4 or 8) columns starting at j.
template <int Width>
inline void gemm_block4(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                        std::size_t j) {
    constexpr int kVecs = Width / 4;
    __m256d acc[4][kVecs];
    for (auto& row : acc)
        for (auto& v : row) v = _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
        __m256d bv[kVecs];
        for (int v = 0; v < kVecs; ++v) bv[v] = _mm256_loadu_pd(b + p * n + j + 4 * v);
        for (int r = 0; r < 4; ++r) {
            const __m256d av = _mm256_broadcast_sd(a + r * k + p);
            for (int v = 0; v < kVecs; ++v) acc[r][v] = _mm256_fmadd_pd(av, bv[v], acc[r][v]);
        }
    }
    for (int r = 0; r < 4; ++r)
        for (int v = 0; v < kVecs; ++v) _mm256_storeu_pd(c + r * n + j + 4 * v, acc[r][v]);
}

template <int Width>
inline void gemm_block1(std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                        std::size_t j) {
    constexpr int kVecs = Width / 4;
    __m256d acc[kVecs];
    for (auto& v : acc) v = _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_broadcast_sd(a + p);
        for (int v = 0; v < kVecs; ++v)
            acc[v] = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j + 4 * v), acc[v]);
    }
    for (int v = 0; v < kVecs; ++v) _mm256_storeu_pd(c + j + 4 * v, acc[v]);
}

inline void gemm_tail(std::size_t rows, std::size_t n, std::size_t k, const double* a,
                      const double* b, double* c, std::size_t j0) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = j0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s = std::fma(a[r * k + p], b[p * n + j], s);
            c[r * n + j] = s;
        }
}

}  // namespace

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
               double* c) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) gemm_block4<8>(n, k, ai, b, ci, j);
        for (; j + 4 <= n; j += 4) gemm_block4<4>(n, k, ai, b, ci, j);
        gemm_tail(4, n, k, ai, b, ci, j);
    }
    for (; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) gemm_block1<8>(n, k, ai, b, ci, j);
        for (; j + 4 <= n; j += 4) gemm_block1<4>(n, k, ai, b, ci, j);
        gemm_tail(1, n, k, ai, b, ci, j);
    }
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
    double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; i < n; ++i) s = std::fma(a[i], b[i], s);
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void mul_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

}  // namespace nfm::kernels::detail
