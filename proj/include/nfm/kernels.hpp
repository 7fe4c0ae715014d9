#pragma once

#include <cstddef>
#include <string_view>

// Dense inner-loop kernels. Every entry point has a portable scalar reference
// and, where the build and the CPU allow it, an AVX2/FMA variant. The active
// table is chosen once at first use; NFM_KERNELS=scalar|avx2 overrides it.
//
// Per-element accumulation order is fixed (ascending reduction index), so a
// given table produces results that do not depend on how rows are blocked or
// permuted. Tables differ from each other only in rounding (FMA vs mul+add).

namespace nfm::kernels {

struct Table {
    std::string_view name;
    // c[m x n] = a[m x k] * b[k x n], all row-major, c overwritten.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c);
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // out = a .* b
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
};

const Table& scalar();

// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const Table* avx2();

const Table& active();

// Selects a table by name ("scalar", "avx2"); returns false if unavailable.
bool select(std::string_view name);

}  // namespace nfm::kernels
