#include "nfm/kernels.hpp"

#include <cstdlib>

#include "kernels_impl.hpp"

namespace nfm::kernels {

namespace {

constexpr Table kScalar{"scalar", detail::gemm_scalar, detail::dot_scalar, detail::axpy_scalar,
                        detail::mul_scalar};

#if defined(NFM_HAVE_AVX2)
constexpr Table kAvx2{"avx2", detail::gemm_avx2, detail::dot_avx2, detail::axpy_avx2,
                      detail::mul_avx2};
#endif

const Table* pick_default() {
    if (const char* env = std::getenv("NFM_KERNELS")) {
        const std::string_view want(env);
        if (want == "scalar") return &kScalar;
        if (want == "avx2" && avx2()) return avx2();
    }
    if (const Table* t = avx2()) return t;
    return &kScalar;
}

const Table*& current() {
    static const Table* table = pick_default();
    return table;
}

}  // namespace

const Table& scalar() { return kScalar; }

const Table* avx2() {
#if defined(NFM_HAVE_AVX2)
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &kAvx2 : nullptr;
#else
    return nullptr;
#endif
}

const Table& active() { return *current(); }

bool select(std::string_view name) {
    if (name == "scalar") {
        current() = &kScalar;
        return true;
    }
    if (name == "avx2" && avx2()) {
        current() = avx2();
        return true;
    }
    return false;
}

}  // namespace nfm::kernels
