// SPDX-License-Identifier: Apache-2.0
// Scalar reference kernels vs. the runtime-dispatched SIMD variants.
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "raum/numkernel/kernels.hpp"
#include "raum/numkernel/rng.hpp"

using namespace raum;
namespace k = raum::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.normal();
    }
    return v;
}

// FMA contraction changes rounding, so the variants agree to a few ulps of the
// accumulated magnitude, not bit-for-bit.
void check_close(const std::vector<double>& ref, const std::vector<double>& got, double scale) {
    REQUIRE(ref.size() == got.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(std::abs(ref[i] - got[i]) <= 1e-12 * scale);
    }
}

struct Dims {
    std::size_t m, n, k;
};

const Dims kDims[] = {{1, 1, 1}, {3, 5, 7}, {4, 4, 4}, {8, 16, 48}, {17, 9, 13}, {64, 16, 16}, {2, 33, 65}};

} // namespace

TEST_CASE("scalar gemm matches hand computation") {
    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{5, 6};
    std::vector<double> c(2);
    k::scalar::table.gemm_nn(2, 1, 2, a.data(), b.data(), c.data(), false);
    CHECK(c[0] == 17.0);
    CHECK(c[1] == 39.0);
}

TEST_CASE("scalar gemm_nt and gemm_tn agree with gemm_nn on transposed operands") {
    Rng rng(7);
    for (const auto& d : kDims) {
        auto a = random_vec(rng, d.m * d.k);
        auto b = random_vec(rng, d.k * d.n);
        std::vector<double> at(d.k * d.m), bt(d.n * d.k);
        for (std::size_t i = 0; i < d.m; ++i) {
            for (std::size_t p = 0; p < d.k; ++p) {
                at[p * d.m + i] = a[i * d.k + p];
            }
        }
        for (std::size_t p = 0; p < d.k; ++p) {
            for (std::size_t j = 0; j < d.n; ++j) {
                bt[j * d.k + p] = b[p * d.n + j];
            }
        }
        std::vector<double> ref(d.m * d.n), nt(d.m * d.n), tn(d.m * d.n);
        k::scalar::table.gemm_nn(d.m, d.n, d.k, a.data(), b.data(), ref.data(), false);
        k::scalar::table.gemm_nt(d.m, d.n, d.k, a.data(), bt.data(), nt.data(), false);
        k::scalar::table.gemm_tn(d.m, d.n, d.k, at.data(), b.data(), tn.data(), false);
        check_close(ref, nt, static_cast<double>(d.k));
        check_close(ref, tn, static_cast<double>(d.k));
    }
}

#if defined(__x86_64__)
TEST_CASE("avx2 kernels are equivalent to the scalar reference") {
    if (k::detected_isa() != k::Isa::avx2) {
        MESSAGE("CPU lacks AVX2/FMA; skipping SIMD equivalence");
        return;
    }
    const auto& s = k::scalar::table;
    const auto& v = k::avx2::table;
    Rng rng(11);
    for (const auto& d : kDims) {
        auto a = random_vec(rng, d.m * d.k);
        auto b = random_vec(rng, d.k * d.n);
        auto bt = random_vec(rng, d.n * d.k);
        auto at = random_vec(rng, d.k * d.m);
        auto seed = random_vec(rng, d.m * d.n);
        const double scale = static_cast<double>(d.k) + 1.0;
        for (bool acc : {false, true}) {
            auto r = seed, g = seed;
            s.gemm_nn(d.m, d.n, d.k, a.data(), b.data(), r.data(), acc);
            v.gemm_nn(d.m, d.n, d.k, a.data(), b.data(), g.data(), acc);
            check_close(r, g, scale);
            r = seed, g = seed;
            s.gemm_nt(d.m, d.n, d.k, a.data(), bt.data(), r.data(), acc);
            v.gemm_nt(d.m, d.n, d.k, a.data(), bt.data(), g.data(), acc);
            check_close(r, g, scale);
            r = seed, g = seed;
            s.gemm_tn(d.m, d.n, d.k, at.data(), b.data(), r.data(), acc);
            v.gemm_tn(d.m, d.n, d.k, at.data(), b.data(), g.data(), acc);
            check_close(r, g, scale);
        }
    }
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 8u, 9u, 31u, 100u}) {
        auto x = random_vec(rng, n);
        auto y = random_vec(rng, n);
        CHECK(std::abs(s.dot(n, x.data(), y.data()) - v.dot(n, x.data(), y.data())) <= 1e-12 * (n + 1.0));
        auto ys = y, yv = y;
        s.axpy(n, 0.37, x.data(), ys.data());
        v.axpy(n, 0.37, x.data(), yv.data());
        check_close(ys, yv, 2.0);
        std::vector<double> ms(n), mv(n);
        s.mul(n, x.data(), y.data(), ms.data());
        v.mul(n, x.data(), y.data(), mv.data());
        CHECK(ms == mv); // plain multiply has no contraction: bit-identical
    }
}

TEST_CASE("avx2 exp stays within 2 ulp of the reference") {
    if (k::detected_isa() != k::Isa::avx2) {
        return;
    }
    Rng rng(11);
    std::vector<double> x;
    for (int i = 0; i < 200000; ++i) x.push_back(rng.uniform(-745.5, 710.0));
    for (int i = 0; i < 20000; ++i) x.push_back(rng.uniform(-2.0, 2.0));
    for (double e : {0.0, -0.0, 1.0, -1.0, 1e-300, -1e-300, 709.78, 709.7827128933839, -708.4, -720.0, -744.4, -745.13})
        x.push_back(e);
    for (std::size_t n = 1; n <= 7; ++n) x.push_back(rng.uniform(-5.0, 5.0)); // odd tail
    std::vector<double> ys(x.size()), yv(x.size());
    k::scalar::table.vexp(x.size(), x.data(), ys.data());
    k::avx2::table.vexp(x.size(), x.data(), yv.data());
    std::size_t bad = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double ref = ys[i];
        const double tol = ref >= std::numeric_limits<double>::min() ? 2.0 * std::numeric_limits<double>::epsilon() * ref
                                                                     : 2.0 * std::numeric_limits<double>::denorm_min();
        bad += !(yv[i] == ref || std::abs(yv[i] - ref) <= tol);
    }
    CHECK(bad == 0);
    CHECK(yv[x.size() - 19] == 1.0); // exp(0) exact

    const double nan = std::numeric_limits<double>::quiet_NaN(), inf = std::numeric_limits<double>::infinity();
    std::vector<double> sp{nan, inf, -inf, 710.0, -746.0, 1e308, -1e308}, out(sp.size());
    k::avx2::table.vexp(sp.size(), sp.data(), out.data());
    CHECK(std::isnan(out[0]));
    CHECK(out[1] == inf);
    CHECK(out[2] == 0.0);
    CHECK(out[3] == inf);
    CHECK(out[4] == 0.0);
    CHECK(out[5] == inf);
    CHECK(out[6] == 0.0);

    std::vector<double> alias{0.5, 1.5, -2.5};
    k::avx2::table.vexp(3, alias.data(), alias.data());
    CHECK(alias[0] == doctest::Approx(std::exp(0.5)).epsilon(1e-15));
}
#endif

TEST_CASE("dispatch can be pinned to the scalar path and restored") {
    const auto before = k::active_isa();
    k::set_active_isa(k::Isa::scalar);
    CHECK(&k::active() == &k::scalar::table);
    k::set_active_isa(before);
    CHECK(k::active_isa() == before);
    if (k::detected_isa() == k::Isa::scalar) {
        CHECK_THROWS(k::set_active_isa(k::Isa::avx2));
    }
}
