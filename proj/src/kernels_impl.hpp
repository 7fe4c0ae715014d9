#pragma once

#include <cstddef>

namespace nfm::kernels::detail {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c);
double dot_scalar(const double* a, const double* b, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
void mul_scalar(const double* a, const double* b, double* out, std::size_t n);

#if defined(NFM_HAVE_AVX2)
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
               double* c);
double dot_avx2(const double* a, const double* b, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
void mul_avx2(const double* a, const double* b, double* out, std::size_t n);
#endif

}  // namespace nfm::kernels::detail
