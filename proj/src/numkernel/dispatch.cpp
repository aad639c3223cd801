// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <string>

#include "raum/error.hpp"
#include "raum/numkernel/kernels.hpp"

namespace raum::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa initial_isa() noexcept {
    if (const char* env = std::getenv("RAUM_KERNELS"); env != nullptr && std::string(env) == "scalar") {
        return Isa::scalar;
    }
    return detected_isa();
}

std::atomic<Isa>& current() noexcept {
    static std::atomic<Isa> isa{initial_isa()};
    return isa;
}

} // namespace

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::avx2 ? "avx2" : "scalar"; }

Isa detected_isa() noexcept {
    static const Isa isa = cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
    return isa;
}

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
    if (isa == Isa::avx2 && detected_isa() != Isa::avx2) {
        throw ConfigError("AVX2/FMA kernels requested but not supported by this CPU");
    }
    current().store(isa, std::memory_order_relaxed);
}

const KernelTable& table(Isa isa) {
#if defined(__x86_64__) || defined(_M_X64)
    if (isa == Isa::avx2) {
        if (detected_isa() != Isa::avx2) {
            throw ConfigError("AVX2/FMA kernels not supported by this CPU");
        }
        return avx2::table;
    }
#endif
    (void)isa;
    return scalar::table;
}

const KernelTable& active() noexcept {
#if defined(__x86_64__) || defined(_M_X64)
    if (active_isa() == Isa::avx2) {
        return avx2::table;
    }
#endif
    return scalar::table;
}

} // namespace raum::kernels
