// SPDX-License-Identifier: Apache-2.0
#include "raum/numkernel/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "raum/error.hpp"
#include "raum/numkernel/kernels.hpp"

namespace raum::ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// Gradient sink for an input, or nullptr when it does not take part in autodiff.
double* sink(const Tensor& t) { return t.requires_grad() ? t.grad_buffer().data() : nullptr; }

// Elementwise unary op; Deriv receives (x, y) and returns dy/dx.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Tape* tape, Fwd fwd, Deriv deriv) {
    Tensor out(x.shape());
    auto xd = x.data();
    auto od = out.mutable_data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        od[i] = fwd(xd[i]);
    }
    if (should_record(tape, {&x})) {
        tape->record({x}, out, [x, out, deriv](std::span<const double> g) mutable {
            double* gx = sink(x);
            auto xv = x.data();
            auto yv = out.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * deriv(xv[i], yv[i]);
            }
        });
    }
    return out;
}

// e^{-|x|} for every element, the shared building block of the stable
// sigmoid and softplus forms.
std::vector<double> exp_neg_abs(std::span<const double> x) {
    std::vector<double> e(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        e[i] = -std::abs(x[i]);
    }
    kernels::active().vexp(e.size(), e.data(), e.data());
    return e;
}

// sigmoid(x) given e = e^{-|x|}
double sigmoid_from(double x, double e) { return x >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e); }

// Elementwise op whose forward is precomputed; Deriv receives the element index.
template <class Deriv>
Tensor precomputed_unary(const Tensor& x, Tensor out, Tape* tape, Deriv deriv) {
    if (should_record(tape, {&x})) {
        tape->record({x}, out, [x, deriv](std::span<const double> g) mutable {
            double* gx = sink(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * deriv(i);
            }
        });
    }
    return out;
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    require_rank(a, 2, "matmul", "a");
    require_rank(b, 2, "matmul", "b");
    const std::size_t m = a.dim(0);
    const std::size_t k = a.dim(1);
    const std::size_t n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    Tensor out(Shape{m, n});
    const auto& kt = kernels::active();
    kt.gemm_nn(m, n, k, a.data().data(), b.data().data(), out.mutable_data().data(), false);
    if (should_record(tape, {&a, &b})) {
        tape->record({a, b}, out, [a, b, m, n, k](std::span<const double> g) mutable {
            const auto& kt = kernels::active();
            if (double* ga = sink(a)) {
                kt.gemm_nt(m, k, n, g.data(), b.data().data(), ga, true);
            }
            if (double* gb = sink(b)) {
                kt.gemm_tn(k, n, m, a.data().data(), g.data(), gb, true);
            }
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
    require_rank(x, 2, "add_bias", "x");
    const std::size_t m = x.dim(0);
    const std::size_t n = x.dim(1);
    if (bias.numel() != n) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
    }
    Tensor out(x.shape());
    auto xd = x.data();
    auto bd = bias.data();
    auto od = out.mutable_data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            od[i * n + j] = xd[i * n + j] + bd[j];
        }
    }
    if (should_record(tape, {&x, &bias})) {
        tape->record({x, bias}, out, [x, bias, m, n](std::span<const double> g) mutable {
            if (double* gx = sink(x)) {
                kernels::active().axpy(m * n, 1.0, g.data(), gx);
            }
            if (double* gb = sink(bias)) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                        gb[j] += g[i * n + j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.mutable_data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        od[i] = ad[i] + bd[i];
    }
    if (should_record(tape, {&a, &b})) {
        tape->record({a, b}, out, [a, b](std::span<const double> g) mutable {
            const auto& kt = kernels::active();
            if (double* ga = sink(a)) {
                kt.axpy(g.size(), 1.0, g.data(), ga);
            }
            if (double* gb = sink(b)) {
                kt.axpy(g.size(), 1.0, g.data(), gb);
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    kernels::active().mul(out.numel(), a.data().data(), b.data().data(), out.mutable_data().data());
    if (should_record(tape, {&a, &b})) {
        tape->record({a, b}, out, [a, b](std::span<const double> g) mutable {
            auto av = a.data();
            auto bv = b.data();
            if (double* ga = sink(a)) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * bv[i];
                }
            }
            if (double* gb = sink(b)) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gb[i] += g[i] * av[i];
                }
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double s, Tape* tape) {
    return unary(x, tape, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& x, Tape* tape) {
    return unary(x, tape, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x, Tape* tape) {
    auto xd = x.data();
    const auto e = exp_neg_abs(xd);
    Tensor out(x.shape());
    auto od = out.mutable_data();
    for (std::size_t i = 0; i < e.size(); ++i) {
        od[i] = sigmoid_from(xd[i], e[i]);
    }
    return precomputed_unary(x, out, tape, [y = out](std::size_t i) { return y[i] * (1.0 - y[i]); });
}

Tensor softplus(const Tensor& x, Tape* tape) {
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|}); the derivative is sigmoid(x).
    auto xd = x.data();
    const auto e = exp_neg_abs(xd);
    Tensor out(x.shape());
    auto od = out.mutable_data();
    std::vector<double> sig(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        od[i] = std::max(xd[i], 0.0) + std::log1p(e[i]);
        sig[i] = sigmoid_from(xd[i], e[i]);
    }
    return precomputed_unary(x, out, tape, [sig = std::move(sig)](std::size_t i) { return sig[i]; });
}

Tensor silu(const Tensor& x, Tape* tape) {
    auto xd = x.data();
    auto sig = exp_neg_abs(xd);
    Tensor out(x.shape());
    auto od = out.mutable_data();
    for (std::size_t i = 0; i < sig.size(); ++i) {
        sig[i] = sigmoid_from(xd[i], sig[i]);
        od[i] = xd[i] * sig[i];
    }
    return precomputed_unary(x, out, tape, [x, sig = std::move(sig)](std::size_t i) {
        return sig[i] * (1.0 + x[i] * (1.0 - sig[i]));
    });
}

Tensor exp(const Tensor& x, Tape* tape) {
    Tensor out(x.shape());
    kernels::active().vexp(x.numel(), x.data().data(), out.mutable_data().data());
    return precomputed_unary(x, out, tape, [y = out](std::size_t i) { return y[i]; });
}

Tensor neg_exp(const Tensor& x, Tape* tape) {
    Tensor out(x.shape());
    auto od = out.mutable_data();
    kernels::active().vexp(x.numel(), x.data().data(), od.data());
    for (auto& v : od) {
        v = -v;
    }
    return precomputed_unary(x, out, tape, [y = out](std::size_t i) { return y[i]; });
}

Tensor sum(const Tensor& x, Tape* tape) {
    double s = 0.0;
    for (double v : x.data()) {
        s += v;
    }
    Tensor out = Tensor::scalar(s);
    if (should_record(tape, {&x})) {
        tape->record({x}, out, [x](std::span<const double> g) mutable {
            double* gx = sink(x);
            for (std::size_t i = 0; i < x.numel(); ++i) {
                gx[i] += g[0];
            }
        });
    }
    return out;
}

Tensor mean_rows(const Tensor& x, Tape* tape) {
    require_rank(x, 2, "mean_rows", "x");
    const std::size_t m = x.dim(0);
    const std::size_t n = x.dim(1);
    if (m == 0) {
        throw ShapeError("mean_rows: empty input");
    }
    Tensor out(Shape{n});
    auto xd = x.data();
    auto od = out.mutable_data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            od[j] += xd[i * n + j];
        }
    }
    const double inv = 1.0 / static_cast<double>(m);
    for (auto& v : od) {
        v *= inv;
    }
    if (should_record(tape, {&x})) {
        tape->record({x}, out, [x, m, n, inv](std::span<const double> g) mutable {
            double* gx = sink(x);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    gx[i * n + j] += g[j] * inv;
                }
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape, Tape* tape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
    if (should_record(tape, {&x})) {
        tape->record({x}, out, [x](std::span<const double> g) mutable {
            kernels::active().axpy(g.size(), 1.0, g.data(), sink(x));
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, std::size_t axis, Tape* tape) {
    if (axis >= x.rank()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    }
    const Shape& s = x.shape();
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= s[i];
    }
    for (std::size_t i = axis + 1; i < s.size(); ++i) {
        inner *= s[i];
    }
    const std::size_t len = s[axis];
    Tensor out(s);
    auto xd = x.data();
    auto od = out.mutable_data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < len; ++j) {
                mx = std::max(mx, xd[base + j * inner]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const double e = std::exp(xd[base + j * inner] - mx);
                od[base + j * inner] = e;
                z += e;
            }
            for (std::size_t j = 0; j < len; ++j) {
                od[base + j * inner] /= z;
            }
        }
    }
    if (should_record(tape, {&x})) {
        tape->record({x}, out, [x, out, outer, inner, len](std::span<const double> g) mutable {
            double* gx = sink(x);
            auto y = out.data();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dotgy = 0.0;
                    for (std::size_t j = 0; j < len; ++j) {
                        dotgy += g[base + j * inner] * y[base + j * inner];
                    }
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t idx = base + j * inner;
                        gx[idx] += y[idx] * (g[idx] - dotgy);
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps, Tape* tape) {
    require_rank(x, 2, "layer_norm", "x");
    const std::size_t m = x.dim(0);
    const std::size_t n = x.dim(1);
    if (gain.numel() != n || bias.numel() != n) {
        throw ShapeError("layer_norm: gain/bias must have " + std::to_string(n) + " elements");
    }
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> rstd(m);
    auto xd = x.data();
    auto gd = gain.data();
    auto bd = bias.data();
    auto od = out.mutable_data();
    auto hd = xhat.mutable_data();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = xd.data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            mu += row[j];
        }
        mu *= inv_n;
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var *= inv_n;
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (row[j] - mu) * rstd[i];
            hd[i * n + j] = h;
            od[i * n + j] = h * gd[j] + bd[j];
        }
    }
    if (should_record(tape, {&x, &gain, &bias})) {
        tape->record({x, gain, bias}, out,
                     [x, gain, bias, xhat, rstd = std::move(rstd), m, n, inv_n](std::span<const double> g) mutable {
                         auto h = xhat.data();
                         auto gd = gain.data();
                         double* gx = sink(x);
                         double* gg = sink(gain);
                         double* gb = sink(bias);
                         for (std::size_t i = 0; i < m; ++i) {
                             double s1 = 0.0;
                             double s2 = 0.0;
                             for (std::size_t j = 0; j < n; ++j) {
                                 const double gh = g[i * n + j] * gd[j];
                                 s1 += gh;
                                 s2 += gh * h[i * n + j];
                                 if (gg) {
                                     gg[j] += g[i * n + j] * h[i * n + j];
                                 }
                                 if (gb) {
                                     gb[j] += g[i * n + j];
                                 }
                             }
                             if (gx) {
                                 for (std::size_t j = 0; j < n; ++j) {
                                     const double gh = g[i * n + j] * gd[j];
                                     gx[i * n + j] += rstd[i] * (gh - inv_n * s1 - h[i * n + j] * inv_n * s2);
                                 }
                             }
                         }
                     });
    }
    return out;
}

Tensor cross_entropy_logits(const Tensor& logits, std::size_t target, Tape* tape) {
    const std::size_t k = logits.numel();
    if (target >= k) {
        throw IndexError("cross_entropy: target " + std::to_string(target) + " outside [0, " + std::to_string(k) +
                         ")");
    }
    auto z = logits.data();
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) {
        s += std::exp(v - mx);
    }
    const double lse = mx + std::log(s);
    Tensor out = Tensor::scalar(lse - z[target]);
    if (should_record(tape, {&logits})) {
        tape->record({logits}, out, [logits, target, lse](std::span<const double> g) mutable {
            double* gz = sink(logits);
            auto zv = logits.data();
            for (std::size_t i = 0; i < zv.size(); ++i) {
                const double p = std::exp(zv[i] - lse);
                gz[i] += g[0] * (p - (i == target ? 1.0 : 0.0));
            }
        });
    }
    return out;
}

Tensor cross_entropy_probs(const Tensor& probs, std::size_t target, Tape* tape) {
    const std::size_t k = probs.numel();
    if (target >= k) {
        throw IndexError("cross_entropy: target " + std::to_string(target) + " outside [0, " + std::to_string(k) +
                         ")");
    }
    const double p = probs[target];
    if (!(p > 0.0)) {
        throw std::domain_error("cross_entropy: probability of target class must be positive");
    }
    Tensor out = Tensor::scalar(-std::log(p));
    if (should_record(tape, {&probs})) {
        tape->record({probs}, out, [probs, target, p](std::span<const double> g) mutable {
            sink(probs)[target] += -g[0] / p;
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, double rate, bool active, Rng& rng, Tape* tape) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!active || rate == 0.0) {
        return x;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor mask(x.shape());
    auto md = mask.mutable_data();
    for (auto& v : md) {
        v = rng.uniform() < rate ? 0.0 : keep_scale;
    }
    Tensor out(x.shape());
    kernels::active().mul(out.numel(), x.data().data(), md.data(), out.mutable_data().data());
    if (should_record(tape, {&x})) {
        tape->record({x}, out, [x, mask](std::span<const double> g) mutable {
            double* gx = sink(x);
            auto mv = mask.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * mv[i];
            }
        });
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, Tape* tape) {
    require_rank(x, 3, "conv2d", "x");
    require_rank(kernel, 4, "conv2d", "kernel");
    const std::size_t h = x.dim(0);
    const std::size_t w = x.dim(1);
    const std::size_t cin = x.dim(2);
    const std::size_t kh = kernel.dim(0);
    const std::size_t kw = kernel.dim(1);
    const std::size_t cout = kernel.dim(3);
    if ((kh != 1 && kh != 3) || (kw != 1 && kw != 3)) {
        throw ConfigError("conv2d: unsupported kernel size " + std::to_string(kh) + "x" + std::to_string(kw) +
                          " (only 1 and 3 are supported)");
    }
    if (kernel.dim(2) != cin) {
        throw ConfigError("conv2d: kernel expects " + std::to_string(kernel.dim(2)) + " input channels, input has " +
                          std::to_string(cin));
    }
    const bool has_bias = bias.defined() && bias.numel() > 0;
    if (has_bias && bias.numel() != cout) {
        throw ConfigError("conv2d: bias has " + std::to_string(bias.numel()) + " entries, expected " +
                          std::to_string(cout));
    }
    const std::size_t ph = kh / 2;
    const std::size_t pw = kw / 2;
    const std::size_t patch = kh * kw * cin;
    const std::size_t pixels = h * w;

    // im2col; the 1x1 case reads the input directly.
    Tensor cols;
    if (kh == 1 && kw == 1) {
        cols = x;
    } else {
        cols = Tensor(Shape{pixels, patch});
        auto cd = cols.mutable_data();
        auto xd = x.data();
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
                double* row = cd.data() + (y * w + xx) * patch;
                for (std::size_t dy = 0; dy < kh; ++dy) {
                    const long sy = static_cast<long>(y + dy) - static_cast<long>(ph);
                    for (std::size_t dx = 0; dx < kw; ++dx) {
                        const long sx = static_cast<long>(xx + dx) - static_cast<long>(pw);
                        double* dst = row + (dy * kw + dx) * cin;
                        if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) {
                            continue; // zero padding
                        }
                        const double* src = xd.data() + (static_cast<std::size_t>(sy) * w + sx) * cin;
                        std::copy(src, src + cin, dst);
                    }
                }
            }
        }
    }

    Tensor out(Shape{h, w, cout});
    auto od = out.mutable_data();
    kernels::active().gemm_nn(pixels, cout, patch, cols.data().data(), kernel.data().data(), od.data(), false);
    if (has_bias) {
        auto bd = bias.data();
        for (std::size_t p = 0; p < pixels; ++p) {
            for (std::size_t c = 0; c < cout; ++c) {
                od[p * cout + c] += bd[c];
            }
        }
    }

    if (should_record(tape, {&x, &kernel, &bias})) {
        std::vector<Tensor> inputs{x, kernel};
        if (has_bias) {
            inputs.push_back(bias);
        }
        tape->record(std::move(inputs), out,
                     [x, kernel, bias, cols, has_bias, h, w, cin, kh, kw, ph, pw, cout, patch,
                      pixels](std::span<const double> g) mutable {
                         const auto& kt = kernels::active();
                         if (double* gk = sink(kernel)) {
                             kt.gemm_tn(patch, cout, pixels, cols.data().data(), g.data(), gk, true);
                         }
                         if (has_bias) {
                             if (double* gb = sink(bias)) {
                                 for (std::size_t p = 0; p < pixels; ++p) {
                                     for (std::size_t c = 0; c < cout; ++c) {
                                         gb[c] += g[p * cout + c];
                                     }
                                 }
                             }
                         }
                         double* gx = sink(x);
                         if (gx == nullptr) {
                             return;
                         }
                         if (kh == 1 && kw == 1) {
                             kt.gemm_nt(pixels, cin, cout, g.data(), kernel.data().data(), gx, true);
                             return;
                         }
                         std::vector<double> gcols(pixels * patch);
                         kt.gemm_nt(pixels, patch, cout, g.data(), kernel.data().data(), gcols.data(), false);
                         for (std::size_t y = 0; y < h; ++y) {
                             for (std::size_t xx = 0; xx < w; ++xx) {
                                 const double* row = gcols.data() + (y * w + xx) * patch;
                                 for (std::size_t dy = 0; dy < kh; ++dy) {
                                     const long sy = static_cast<long>(y + dy) - static_cast<long>(ph);
                                     for (std::size_t dx = 0; dx < kw; ++dx) {
                                         const long sx = static_cast<long>(xx + dx) - static_cast<long>(pw);
                                         if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) ||
                                             sx >= static_cast<long>(w)) {
                                             continue;
                                         }
                                         const double* src = row + (dy * kw + dx) * cin;
                                         double* dst = gx + (static_cast<std::size_t>(sy) * w + sx) * cin;
                                         for (std::size_t c = 0; c < cin; ++c) {
                                             dst[c] += src[c];
                                         }
                                     }
                                 }
                             }
                         }
                     });
    }
    return out;
}

Tensor spatial_gate(const Tensor& f, const Tensor& gate, Tape* tape) {
    require_rank(f, 3, "spatial_gate", "f");
    const std::size_t pixels = f.dim(0) * f.dim(1);
    const std::size_t c = f.dim(2);
    if (gate.numel() != pixels) {
        throw ConfigError("spatial_gate: gate " + shape_str(gate.shape()) + " does not cover feature map " +
                          shape_str(f.shape()));
    }
    Tensor out(f.shape());
    auto fd = f.data();
    auto gd = gate.data();
    auto od = out.mutable_data();
    for (std::size_t p = 0; p < pixels; ++p) {
        for (std::size_t k = 0; k < c; ++k) {
            od[p * c + k] = fd[p * c + k] * gd[p];
        }
    }
    if (should_record(tape, {&f, &gate})) {
        tape->record({f, gate}, out, [f, gate, pixels, c](std::span<const double> g) mutable {
            auto fv = f.data();
            auto gv = gate.data();
            double* gf = sink(f);
            double* gg = sink(gate);
            for (std::size_t p = 0; p < pixels; ++p) {
                double acc = 0.0;
                for (std::size_t k = 0; k < c; ++k) {
                    const double go = g[p * c + k];
                    if (gf) {
                        gf[p * c + k] += go * gv[p];
                    }
                    acc += go * fv[p * c + k];
                }
                if (gg) {
                    gg[p] += acc;
                }
            }
        });
    }
    return out;
}

Tensor patchify(const Tensor& image, std::size_t patch, Tape* tape) {
    require_rank(image, 3, "patchify", "image");
    const std::size_t h = image.dim(0);
    const std::size_t w = image.dim(1);
    const std::size_t ch = image.dim(2);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ConfigError("patchify: image " + shape_str(image.shape()) + " not divisible into " +
                          std::to_string(patch) + "-pixel patches");
    }
    const std::size_t gw = w / patch;
    const std::size_t tokens = (h / patch) * gw;
    const std::size_t feat = patch * patch * ch;
    // index map from token layout back to image layout
    std::vector<std::size_t> src(tokens * feat);
    for (std::size_t t = 0; t < tokens; ++t) {
        const std::size_t py = t / gw;
        const std::size_t px = t % gw;
        for (std::size_t y = 0; y < patch; ++y) {
            for (std::size_t x = 0; x < patch; ++x) {
                for (std::size_t c = 0; c < ch; ++c) {
                    src[t * feat + (y * patch + x) * ch + c] = ((py * patch + y) * w + (px * patch + x)) * ch + c;
                }
            }
        }
    }
    Tensor out(Shape{tokens, feat});
    auto od = out.mutable_data();
    auto id = image.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        od[i] = id[src[i]];
    }
    if (should_record(tape, {&image})) {
        tape->record({image}, out, [image, src = std::move(src)](std::span<const double> g) mutable {
            double* gi = sink(image);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gi[src[i]] += g[i];
            }
        });
    }
    return out;
}

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      Tape* tape) {
    require_rank(x, 2, "selective_scan", "x");
    require_same_shape(x, delta, "selective_scan");
    require_rank(a, 2, "selective_scan", "a");
    const std::size_t len = x.dim(0);
    const std::size_t ch = x.dim(1);
    const std::size_t ns = a.dim(1);
    if (a.dim(0) != ch) {
        throw ShapeError("selective_scan: a " + shape_str(a.shape()) + " does not match x " + shape_str(x.shape()));
    }
    if (b.shape() != Shape{len, ns} || c.shape() != Shape{len, ns}) {
        throw ShapeError("selective_scan: b/c must be " + shape_str(Shape{len, ns}) + ", got " +
                         shape_str(b.shape()) + " and " + shape_str(c.shape()));
    }
    auto xd = x.data();
    auto dd = delta.data();
    auto ad = a.data();
    auto bd = b.data();
    auto cd = c.data();
    const bool record = should_record(tape, {&x, &delta, &a, &b, &c});

    Tensor out(Shape{len, ch});
    auto yd = out.mutable_data();
    const auto& kt = kernels::active();
    std::vector<double> state(ch * ns, 0.0);
    std::vector<double> step_decay(ch * ns);
    // State and decay histories are only kept when the backward pass needs them.
    std::vector<double> history(record ? len * ch * ns : 0);
    std::vector<double> decays(record ? len * ch * ns : 0);
    for (std::size_t t = 0; t < len; ++t) {
        const double* bt = bd.data() + t * ns;
        const double* ct = cd.data() + t * ns;
        for (std::size_t k = 0; k < ch; ++k) {
            const double dt = dd[t * ch + k];
            for (std::size_t n = 0; n < ns; ++n) {
                step_decay[k * ns + n] = dt * ad[k * ns + n];
            }
        }
        kt.vexp(step_decay.size(), step_decay.data(), step_decay.data());
        for (std::size_t k = 0; k < ch; ++k) {
            const double u = dd[t * ch + k] * xd[t * ch + k];
            double* hk = state.data() + k * ns;
            const double* dk = step_decay.data() + k * ns;
            double y = 0.0;
            for (std::size_t n = 0; n < ns; ++n) {
                hk[n] = dk[n] * hk[n] + u * bt[n];
                y += ct[n] * hk[n];
            }
            yd[t * ch + k] = y;
        }
        if (record) {
            std::copy(state.begin(), state.end(), history.begin() + t * ch * ns);
            std::copy(step_decay.begin(), step_decay.end(), decays.begin() + t * ch * ns);
        }
    }

    if (record) {
        tape->record({x, delta, a, b, c}, out,
                     [x, delta, a, b, c, history = std::move(history), decays = std::move(decays), len, ch, ns](std::span<const double> g) mutable {
                         auto xv = x.data();
                         auto dv = delta.data();
                         auto av = a.data();
                         auto bv = b.data();
                         auto cv = c.data();
                         double* gx = sink(x);
                         double* gd = sink(delta);
                         double* ga = sink(a);
                         double* gb = sink(b);
                         double* gc = sink(c);
                         // carry[k*ns+n] = dL/dh_t flowing back from step t+1
                         std::vector<double> carry(ch * ns, 0.0);
                         for (std::size_t t = len; t-- > 0;) {
                             const double* ht = history.data() + t * ch * ns;
                             const double* hp = t > 0 ? history.data() + (t - 1) * ch * ns : nullptr;
                             for (std::size_t k = 0; k < ch; ++k) {
                                 const double gy = g[t * ch + k];
                                 const double dt = dv[t * ch + k];
                                 const double xt = xv[t * ch + k];
                                 double gdt = 0.0;
                                 double gxt = 0.0;
                                 for (std::size_t n = 0; n < ns; ++n) {
                                     const std::size_t kn = k * ns + n;
                                     const double hprev = hp ? hp[kn] : 0.0;
                                     const double decay = decays[t * ch * ns + kn];
                                     const double gh = carry[kn] + gy * cv[t * ns + n];
                                     if (gc) {
                                         gc[t * ns + n] += gy * ht[kn];
                                     }
                                     const double gdecay = gh * hprev;
                                     gdt += gdecay * decay * av[kn] + gh * bv[t * ns + n] * xt;
                                     if (ga) {
                                         ga[kn] += gdecay * decay * dt;
                                     }
                                     if (gb) {
                                         gb[t * ns + n] += gh * dt * xt;
                                     }
                                     gxt += gh * dt * bv[t * ns + n];
                                     carry[kn] = gh * decay;
                                 }
                                 if (gd) {
                                     gd[t * ch + k] += gdt;
                                 }
                                 if (gx) {
                                     gx[t * ch + k] += gxt;
                                 }
                             }
                         }
                     });
    }
    return out;
}

} // namespace raum::ops
