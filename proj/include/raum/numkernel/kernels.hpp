// SPDX-License-Identifier: Apache-2.0
#pragma once

// Inner-loop kernels behind the tensor ops.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant compiled in its own translation unit. The variant is picked
// once at startup from CPUID; RAUM_KERNELS=scalar forces the reference path.
// Results differ between variants only by FMA rounding.

#include <cstddef>
#include <string_view>

namespace raum::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

/// Best variant the running CPU supports.
Isa detected_isa() noexcept;

/// Variant currently used by the dispatching entry points below.
Isa active_isa() noexcept;

/// Overrides dispatch. Requesting avx2 on a CPU without it throws ConfigError.
void set_active_isa(Isa isa);

// Row-major, contiguous. `accumulate` adds into c instead of overwriting.
//   gemm_nn: c[m×n]  = a[m×k]  · b[k×n]
//   gemm_nt: c[m×n]  = a[m×k]  · b[n×k]ᵀ
//   gemm_tn: c[m×n]  = a[k×m]ᵀ · b[k×n]
struct KernelTable {
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                    bool accumulate);
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                    bool accumulate);
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                    bool accumulate);
    double (*dot)(std::size_t n, const double* a, const double* b);
    /// y += alpha * x
    void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
    /// out = x ⊙ y
    void (*mul)(std::size_t n, const double* x, const double* y, double* out);
    /// y = exp(x), elementwise; y may alias x. The SIMD variant stays within
    /// 2 ulp of the reference, including subnormal results, ±inf and NaN.
    void (*vexp)(std::size_t n, const double* x, double* y);
};

const KernelTable& table(Isa isa);
const KernelTable& active() noexcept;

namespace scalar {
extern const KernelTable table;
}

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
extern const KernelTable table;
}
#endif

} // namespace raum::kernels
