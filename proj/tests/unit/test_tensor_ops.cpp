// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "doctest.h"
#include "raum/error.hpp"
#include "raum/numkernel/ops.hpp"

using namespace raum;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.mutable_data()) {
        v = rng.normal();
    }
    return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        return false;
    }
    auto x = a.data();
    auto y = b.data();
    return std::equal(x.begin(), x.end(), y.begin());
}

} // namespace

TEST_CASE("tensor construction validates element count") {
    CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<double>(5)), ShapeError);
    Tensor t(Shape{2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.dim(1) == 3);
    CHECK_THROWS_AS(t.item(), ShapeError);
    CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("matmul") {
    SUBCASE("identity times M is M") {
        Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
        Tensor m(Shape{2, 2}, {3.5, -1, 2, 7});
        CHECK(bit_equal(ops::matmul(eye, m), m));
    }
    SUBCASE("hand arithmetic") {
        Tensor a(Shape{2, 2}, {1, 2, 3, 4});
        Tensor b(Shape{2, 1}, {5, 6});
        auto c = ops::matmul(a, b);
        CHECK(c.shape() == Shape{2, 1});
        CHECK(c[0] == 17.0);
        CHECK(c[1] == 39.0);
    }
    SUBCASE("zero annihilates") {
        Rng rng(1);
        auto c = ops::matmul(Tensor(Shape{3, 4}), random_tensor(rng, {4, 2}));
        CHECK(c.shape() == Shape{3, 2});
        for (double v : c.data()) {
            CHECK(v == 0.0);
        }
    }
    SUBCASE("dimension error names both shapes") {
        try {
            ops::matmul(Tensor(Shape{2, 3}), Tensor(Shape{4, 2}));
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[2x3]") != std::string::npos);
            CHECK(msg.find("[4x2]") != std::string::npos);
        }
    }
}

TEST_CASE("conv2d") {
    SUBCASE("1x1 identity kernel is bit-identical") {
        Rng rng(3);
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t c = 1 + rng.below(8);
            auto x = random_tensor(rng, {1 + rng.below(8), 1 + rng.below(8), c});
            Tensor k(Shape{1, 1, c, c});
            for (std::size_t i = 0; i < c; ++i) {
                k.mutable_data()[i * c + i] = 1.0;
            }
            CHECK(bit_equal(ops::conv2d(x, k, Tensor()), x));
        }
    }
    SUBCASE("3x3 ones kernel on ones: center 9, edge 6, corner 4") {
        Tensor x(Shape{3, 3, 1}, 1.0);
        Tensor k(Shape{3, 3, 1, 1}, 1.0);
        auto y = ops::conv2d(x, k, Tensor());
        CHECK(y[4] == 9.0);
        CHECK(y[0] == 4.0);
        CHECK(y[2] == 4.0);
        CHECK(y[6] == 4.0);
        CHECK(y[8] == 4.0);
        CHECK(y[1] == 6.0);
    }
    SUBCASE("zero kernel gives zero output") {
        Rng rng(5);
        auto y = ops::conv2d(random_tensor(rng, {5, 4, 3}), Tensor(Shape{3, 3, 3, 2}), Tensor());
        CHECK(y.shape() == Shape{5, 4, 2});
        for (double v : y.data()) {
            CHECK(v == 0.0);
        }
    }
    SUBCASE("cross-correlation, no flip") {
        // Only the top-left tap is set: output(y,x) = input(y-1,x-1).
        Tensor x(Shape{3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
        Tensor k(Shape{3, 3, 1, 1});
        k.mutable_data()[0] = 1.0;
        auto y = ops::conv2d(x, k, Tensor());
        CHECK(y[4] == 1.0);
        CHECK(y[8] == 5.0);
        CHECK(y[0] == 0.0);
    }
    SUBCASE("bias is added per output channel") {
        auto y = ops::conv2d(Tensor(Shape{2, 2, 1}), Tensor(Shape{1, 1, 1, 2}), Tensor::from({0.5, -1.0}));
        CHECK(y[0] == 0.5);
        CHECK(y[1] == -1.0);
    }
    SUBCASE("unsupported kernel size and channel mismatch") {
        CHECK_THROWS_AS(ops::conv2d(Tensor(Shape{4, 4, 1}), Tensor(Shape{5, 5, 1, 1}), Tensor()), ConfigError);
        CHECK_THROWS_AS(ops::conv2d(Tensor(Shape{4, 4, 1}), Tensor(Shape{2, 2, 1, 1}), Tensor()), ConfigError);
        CHECK_THROWS_AS(ops::conv2d(Tensor(Shape{4, 4, 2}), Tensor(Shape{3, 3, 1, 1}), Tensor()), ConfigError);
    }
}

TEST_CASE("activations") {
    CHECK(ops::sigmoid(Tensor::from({0.0}))[0] == 0.5);
    auto r = ops::relu(Tensor::from({-1.0, 2.0}));
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 2.0);
    auto s = ops::softmax(Tensor::from({0.0, 0.0, 0.0}), 0);
    for (double v : s.data()) {
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    auto big = ops::sigmoid(Tensor::from({-800.0, 800.0}));
    CHECK(big[0] == 0.0);
    CHECK(big[1] == 1.0);
    CHECK(ops::softplus(Tensor::from({800.0}))[0] == 800.0);
    CHECK(ops::softplus(Tensor::from({0.0}))[0] == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(ops::softmax(Tensor::from({1.0}), 1), ShapeError);
}

TEST_CASE("softmax slices are on the simplex for any axis") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        Shape shape{1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(5)};
        auto x = random_tensor(rng, shape);
        for (auto& v : x.mutable_data()) {
            v *= 30.0; // exercise max-subtraction
        }
        const std::size_t axis = rng.below(3);
        auto y = ops::softmax(x, axis);
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
        for (std::size_t i = axis + 1; i < 3; ++i) inner *= shape[i];
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                double total = 0.0;
                for (std::size_t j = 0; j < shape[axis]; ++j) {
                    const double v = y[(o * shape[axis] + j) * inner + in];
                    CHECK(v >= 0.0);
                    total += v;
                }
                CHECK(std::abs(total - 1.0) < 1e-9);
            }
        }
    }
}

TEST_CASE("dropout") {
    Rng rng(2024);
    Tensor x(Shape{4, 5});
    for (auto& v : x.mutable_data()) v = rng.normal();

    SUBCASE("inactive is identity") { CHECK(bit_equal(ops::dropout(x, 0.5, false, rng), x)); }
    SUBCASE("rate zero is identity") { CHECK(bit_equal(ops::dropout(x, 0.0, true, rng), x)); }
    SUBCASE("inverted scaling preserves the mean") {
        Tensor ones(Shape{1000000}, 1.0);
        auto y = ops::dropout(ones, 0.5, true, rng);
        const double mean = std::accumulate(y.data().begin(), y.data().end(), 0.0) / 1e6;
        CHECK(std::abs(mean - 1.0) < 0.01);
        const auto odd = std::count_if(y.data().begin(), y.data().end(), [](double v) { return v != 0.0 && v != 2.0; });
        CHECK(odd == 0);
    }
    SUBCASE("same seed, same mask") {
        Rng r1(5), r2(5);
        CHECK(bit_equal(ops::dropout(x, 0.3, true, r1), ops::dropout(x, 0.3, true, r2)));
    }
    SUBCASE("rate outside [0,1) is rejected") {
        CHECK_THROWS_AS(ops::dropout(x, 1.0, true, rng), ConfigError);
        CHECK_THROWS_AS(ops::dropout(x, -0.1, false, rng), ConfigError);
    }
}

TEST_CASE("cross entropy") {
    CHECK(ops::cross_entropy_probs(Tensor::from({0.0, 1.0, 0.0}), 1).item() == 0.0);
    CHECK(ops::cross_entropy_probs(Tensor::from({0.25, 0.25, 0.25, 0.25}), 3).item() ==
          doctest::Approx(1.3862943611198906).epsilon(1e-14));
    CHECK(ops::cross_entropy_probs(Tensor::from({0.5, 0.5}), 0).item() ==
          doctest::Approx(0.6931471805599453).epsilon(1e-14));
    // logits path: uniform logits over K=4
    CHECK(ops::cross_entropy_logits(Tensor::from({2.0, 2.0, 2.0, 2.0}), 2).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-14));
    // large logit margin stays finite
    const double l = ops::cross_entropy_logits(Tensor::from({1000.0, -1000.0}), 1).item();
    CHECK(l == doctest::Approx(2000.0));
    CHECK_THROWS_AS(ops::cross_entropy_logits(Tensor::from({1.0, 2.0}), 2), IndexError);
    CHECK_THROWS_AS(ops::cross_entropy_probs(Tensor::from({1.0, 0.0}), 5), IndexError);
}

TEST_CASE("spatial gate and patchify layouts") {
    Tensor f(Shape{1, 2, 2}, {1, 2, 3, 4});
    auto g = ops::spatial_gate(f, Tensor(Shape{1, 2}, {0.5, 2.0}));
    CHECK(g[0] == 0.5);
    CHECK(g[1] == 1.0);
    CHECK(g[2] == 6.0);
    CHECK(g[3] == 8.0);
    CHECK_THROWS_AS(ops::spatial_gate(f, Tensor(Shape{3})), ConfigError);

    // 4x4 single-channel image, 2-pixel patches: token 1 is the top-right block.
    Tensor img(Shape{4, 4, 1});
    std::iota(img.mutable_data().begin(), img.mutable_data().end(), 0.0);
    auto p = ops::patchify(img, 2);
    CHECK(p.shape() == Shape{4, 4});
    CHECK(p[4 + 0] == 2.0);
    CHECK(p[4 + 1] == 3.0);
    CHECK(p[4 + 2] == 6.0);
    CHECK(p[4 + 3] == 7.0);
    CHECK_THROWS_AS(ops::patchify(img, 3), ConfigError);
}

TEST_CASE("layer norm normalises rows") {
    Rng rng(4);
    auto x = random_tensor(rng, {3, 6});
    auto y = ops::layer_norm(x, Tensor(Shape{6}, 1.0), Tensor(Shape{6}, 0.0));
    for (std::size_t i = 0; i < 3; ++i) {
        double mu = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 6; ++j) mu += y[i * 6 + j];
        mu /= 6.0;
        for (std::size_t j = 0; j < 6; ++j) var += (y[i * 6 + j] - mu) * (y[i * 6 + j] - mu);
        CHECK(std::abs(mu) < 1e-12);
        CHECK(var / 6.0 == doctest::Approx(1.0).epsilon(1e-4));
    }
}
