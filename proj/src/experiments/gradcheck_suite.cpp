// SPDX-License-Identifier: Apache-2.0
#include "raum/experiments/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "raum/numkernel/grad_check.hpp"
#include "raum/numkernel/ops.hpp"
#include "raum/rabu/model.hpp"

namespace raum::experiments {
namespace {

Tensor random_tensor(Rng& rng, Shape shape, double s = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.mutable_data()) v = s * rng.normal();
    return t;
}

std::size_t dim(Rng& rng) { return 1 + rng.below(8); }

// Weighted sum so the upstream gradient is not uniform.
Tensor weighted(const Tensor& y, Tape* t, std::uint64_t seed) {
    Rng r(derive_seed({seed, 0x3e1}));
    Tensor w(y.shape());
    for (auto& v : w.mutable_data()) v = r.normal();
    return ops::sum(ops::mul(y, w, t), t);
}

using Unary = std::function<Tensor(const Tensor&, Tape*)>;

GradCheckCase unary_case(std::string name, Unary fn) {
    return {std::move(name), [fn](std::uint64_t seed) {
                Rng rng(seed);
                auto x = random_tensor(rng, {dim(rng), dim(rng)});
                // keep relu away from its kink
                for (auto& v : x.mutable_data())
                    if (std::abs(v) < 1e-3) v = 0.5;
                return grad_check([&](const Tensor& v, Tape* t) { return weighted(fn(v, t), t, seed); }, x);
            }};
}

double composed_model(std::uint64_t seed) {
    backbone::BackboneConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 4;
    cfg.embed_dim = 6;
    cfg.state_dim = 3;
    cfg.num_blocks = 2;
    cfg.num_classes = 5;
    cfg.dropout_rate = 0.1;
    Rng init(seed);
    rabu::RaumNet model(cfg, true, init);
    Rng rng(derive_seed({seed, 0xc0}));
    // move off the initialisation so every path carries gradient
    for (auto& [name, t] : model.parameters()) {
        if (name.find("norm") != std::string::npos || name.find("a_log") != std::string::npos) continue;
        for (auto& v : Tensor(t).mutable_data()) v += rng.normal(0.0, 0.3);
    }
    const auto image = random_tensor(rng, {16, 16, 3});
    const std::size_t target = rng.below(cfg.num_classes);
    std::vector<Tensor> leaves;
    for (auto& nt : model.parameters()) leaves.push_back(nt.tensor);
    return grad_check_leaves(
        [&](const std::vector<Tensor>&, Tape* t) {
            Rng drop(derive_seed({seed, 0xd0}));
            return ops::cross_entropy_logits(model.logits(image, true, &drop, t), target, t);
        },
        leaves);
}

} // namespace

std::vector<GradCheckCase> standard_gradcheck_cases() {
    std::vector<GradCheckCase> cases;
    cases.push_back({"matmul", [](std::uint64_t seed) {
                         Rng rng(seed);
                         const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
                         return grad_check_leaves(
                             [&](const std::vector<Tensor>& l, Tape* t) { return weighted(ops::matmul(l[0], l[1], t), t, seed); },
                             {random_tensor(rng, {m, k}), random_tensor(rng, {k, n})});
                     }});
    cases.push_back({"add_bias", [](std::uint64_t seed) {
                         Rng rng(seed);
                         const std::size_t m = dim(rng), n = dim(rng);
                         return grad_check_leaves(
                             [&](const std::vector<Tensor>& l, Tape* t) { return weighted(ops::add_bias(l[0], l[1], t), t, seed); },
                             {random_tensor(rng, {m, n}), random_tensor(rng, {n})});
                     }});
    cases.push_back({"add_mul", [](std::uint64_t seed) {
                         Rng rng(seed);
                         const std::size_t m = dim(rng), n = dim(rng);
                         return grad_check_leaves(
                             [&](const std::vector<Tensor>& l, Tape* t) {
                                 return weighted(ops::add(ops::mul(l[0], l[1], t), l[0], t), t, seed);
                             },
                             {random_tensor(rng, {m, n}), random_tensor(rng, {m, n})});
                     }});
    cases.push_back(unary_case("relu", [](const Tensor& x, Tape* t) { return ops::relu(x, t); }));
    cases.push_back(unary_case("sigmoid", [](const Tensor& x, Tape* t) { return ops::sigmoid(x, t); }));
    cases.push_back(unary_case("softplus", [](const Tensor& x, Tape* t) { return ops::softplus(x, t); }));
    cases.push_back(unary_case("silu", [](const Tensor& x, Tape* t) { return ops::silu(x, t); }));
    cases.push_back(unary_case("exp", [](const Tensor& x, Tape* t) { return ops::exp(x, t); }));
    cases.push_back(unary_case("neg_exp", [](const Tensor& x, Tape* t) { return ops::neg_exp(x, t); }));
    cases.push_back(unary_case("scale", [](const Tensor& x, Tape* t) { return ops::scale(x, -0.7, t); }));
    cases.push_back(unary_case("softmax_axis0", [](const Tensor& x, Tape* t) { return ops::softmax(x, 0, t); }));
    cases.push_back(unary_case("softmax_axis1", [](const Tensor& x, Tape* t) { return ops::softmax(x, 1, t); }));
    cases.push_back(unary_case("mean_rows", [](const Tensor& x, Tape* t) { return ops::mean_rows(x, t); }));
    cases.push_back(unary_case("reshape", [](const Tensor& x, Tape* t) { return ops::reshape(x, {x.numel()}, t); }));
    cases.push_back({"layer_norm", [](std::uint64_t seed) {
                         Rng rng(seed);
                         const std::size_t m = dim(rng), n = dim(rng) + 1;
                         return grad_check_leaves(
                             [&](const std::vector<Tensor>& l, Tape* t) {
                                 return weighted(ops::layer_norm(l[0], l[1], l[2], 1e-5, t), t, seed);
                             },
                             {random_tensor(rng, {m, n}), random_tensor(rng, {n}), random_tensor(rng, {n})});
                     }});
    cases.push_back({"cross_entropy_logits", [](std::uint64_t seed) {
                         Rng rng(seed);
                         const std::size_t k = dim(rng) + 1;
                         const std::size_t target = rng.below(k);
                         return grad_check([&](const Tensor& v, Tape* t) { return ops::cross_entropy_logits(v, target, t); },
                                           random_tensor(rng, {k}, 2.0));
                     }});
    cases.push_back({"cross_entropy_probs", [](std::uint64_t seed) {
                         Rng rng(seed);
                         const std::size_t k = dim(rng) + 1;
                         const std::size_t target = rng.below(k);
                         return grad_check(
                             [&](const Tensor& v, Tape* t) { return ops::cross_entropy_probs(ops::softmax(v, 0, t), target, t); },
                             random_tensor(rng, {k}));
                     }});
    cases.push_back({"dropout", [](std::uint64_t seed) {
                         Rng rng(seed);
                         return grad_check(
                             [&](const Tensor& v, Tape* t) {
                                 Rng mask(derive_seed({seed, 0xd1}));
                                 return weighted(ops::dropout(v, 0.3, true, mask, t), t, seed);
                             },
                             random_tensor(rng, {dim(rng), dim(rng)}));
                     }});
    for (std::size_t ks : {1u, 3u}) {
        cases.push_back({"conv2d_k" + std::to_string(ks), [ks](std::uint64_t seed) {
                             Rng rng(seed);
                             const std::size_t h = dim(rng), w = dim(rng), cin = dim(rng), cout = dim(rng);
                             return grad_check_leaves(
                                 [&](const std::vector<Tensor>& l, Tape* t) {
                                     return weighted(ops::conv2d(l[0], l[1], l[2], t), t, seed);
                                 },
                                 {random_tensor(rng, {h, w, cin}), random_tensor(rng, {ks, ks, cin, cout}),
                                  random_tensor(rng, {cout})});
                         }});
    }
    cases.push_back({"spatial_gate", [](std::uint64_t seed) {
                         Rng rng(seed);
                         const std::size_t h = dim(rng), w = dim(rng), c = dim(rng);
                         return grad_check_leaves(
                             [&](const std::vector<Tensor>& l, Tape* t) {
                                 return weighted(ops::spatial_gate(l[0], l[1], t), t, seed);
                             },
                             {random_tensor(rng, {h, w, c}), random_tensor(rng, {h, w})});
                     }});
    cases.push_back({"patchify", [](std::uint64_t seed) {
                         Rng rng(seed);
                         const std::size_t p = 1 + rng.below(3);
                         return grad_check([&](const Tensor& v, Tape* t) { return weighted(ops::patchify(v, p, t), t, seed); },
                                           random_tensor(rng, {p * 2, p * 3, 3}));
                     }});
    cases.push_back({"selective_scan", [](std::uint64_t seed) {
                         Rng rng(seed);
                         const std::size_t len = dim(rng), ch = dim(rng), ns = dim(rng);
                         auto delta = random_tensor(rng, {len, ch}, 0.3);
                         for (auto& v : delta.mutable_data()) v = std::abs(v) + 0.05;
                         auto decay = random_tensor(rng, {ch, ns});
                         for (auto& v : decay.mutable_data()) v = -std::abs(v) - 0.1;
                         return grad_check_leaves(
                             [&](const std::vector<Tensor>& l, Tape* t) {
                                 return weighted(ops::selective_scan(l[0], l[1], l[2], l[3], l[4], t), t, seed);
                             },
                             {random_tensor(rng, {len, ch}), delta, decay, random_tensor(rng, {len, ns}),
                              random_tensor(rng, {len, ns})});
                     }});
    cases.push_back({"model_16x16_2blocks", composed_model});
    return cases;
}

GradCheckCase faulty_square_case() {
    return {"faulty_square", [](std::uint64_t seed) {
                Rng rng(seed);
                auto faulty = [](const Tensor& x, Tape* tape) {
                    Tensor out(x.shape());
                    auto o = out.mutable_data();
                    for (std::size_t i = 0; i < x.numel(); ++i) o[i] = x[i] * x[i];
                    if (should_record(tape, {&x})) {
                        tape->record({x}, out, [x](std::span<const double> g) {
                            auto gx = x.grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * 3.0 * x[i];
                        });
                    }
                    return ops::sum(out, tape);
                };
                return grad_check(faulty, random_tensor(rng, {4}));
            }};
}

std::vector<GradCheckReport> run_gradcheck(const std::vector<GradCheckCase>& cases, std::size_t seeds,
                                           double tolerance) {
    std::vector<GradCheckReport> out;
    for (const auto& c : cases) {
        GradCheckReport r{c.name, 0.0, true};
        bool finite = true;
        for (std::uint64_t s = 1; s <= seeds; ++s) {
            const double e = c.max_error(s);
            if (std::isnan(e)) finite = false;
            else r.max_error = std::max(r.max_error, e);
        }
        if (!finite) r.max_error = std::numeric_limits<double>::quiet_NaN();
        r.passed = finite && r.max_error < tolerance;
        out.push_back(r);
    }
    return out;
}

} // namespace raum::experiments
