// SPDX-License-Identifier: Apache-2.0
#include "raum/augment/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "raum/error.hpp"

namespace raum::augment {
namespace {

constexpr double kGray = 0.5;

void check_image(const Tensor& image) {
    if (image.rank() != 3 || image.numel() == 0) {
        throw ShapeError("augment expects a non-empty HxWxC image, got " + shape_str(image.shape()));
    }
}

// Mirror index into [0, n) without repeating the edge pixel; folds repeatedly
// when the padding exceeds the image.
std::size_t reflect(long i, long n) {
    if (n == 1) return 0;
    const long period = 2 * (n - 1);
    long m = i % period;
    if (m < 0) m += period;
    return static_cast<std::size_t>(m < n ? m : period - m);
}

Tensor shifted(const Tensor& image, long sx, long sy) {
    const long h = long(image.dim(0)), w = long(image.dim(1)), c = long(image.dim(2));
    Tensor out(image.shape(), kGray);
    auto o = out.mutable_data();
    const auto& in = image.data();
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            const long srcy = y - sy, srcx = x - sx;
            if (srcy < 0 || srcx < 0 || srcy >= h || srcx >= w) continue;
            std::copy_n(in.begin() + (srcy * w + srcx) * c, c, o.begin() + (y * w + x) * c);
        }
    }
    return out;
}

double signed_unit(Rng& rng) { return rng.bernoulli(0.5) ? 1.0 : -1.0; }

} // namespace

void AugmentSpec::validate() const {
    if (!(strong_magnitude >= 0.0 && strong_magnitude <= 10.0)) {
        throw ConfigError("strong_magnitude must lie in [0, 10], got " + std::to_string(strong_magnitude));
    }
}

std::string_view op_name(StrongOp op) {
    switch (op) {
    case StrongOp::brightness: return "brightness";
    case StrongOp::contrast: return "contrast";
    case StrongOp::cutout: return "cutout";
    case StrongOp::translate_x: return "translate_x";
    case StrongOp::translate_y: return "translate_y";
    case StrongOp::gaussian_noise: return "gaussian_noise";
    case StrongOp::posterize: return "posterize";
    }
    return "unknown";
}

WeakDraw draw_weak(std::size_t padding, Rng& rng) {
    WeakDraw d;
    d.flip = rng.bernoulli(0.5);
    d.dx = static_cast<std::size_t>(rng.below(2 * padding + 1));
    d.dy = static_cast<std::size_t>(rng.below(2 * padding + 1));
    return d;
}

Tensor weak_augment_with(const Tensor& image, std::size_t padding, const WeakDraw& draw) {
    check_image(image);
    if (draw.dx > 2 * padding || draw.dy > 2 * padding) {
        throw ConfigError("crop offset outside the padded image");
    }
    const long h = long(image.dim(0)), w = long(image.dim(1)), c = long(image.dim(2));
    const long pad = long(padding);
    Tensor out(image.shape());
    auto o = out.mutable_data();
    const auto& in = image.data();
    for (long y = 0; y < h; ++y) {
        const std::size_t sy = reflect(y + long(draw.dy) - pad, h);
        for (long x = 0; x < w; ++x) {
            std::size_t sx = reflect(x + long(draw.dx) - pad, w);
            if (draw.flip) sx = std::size_t(w - 1) - sx;
            std::copy_n(in.begin() + long(sy * w + sx) * c, c, o.begin() + (y * w + x) * c);
        }
    }
    return out;
}

Tensor weak_augment(const Tensor& image, const AugmentSpec& spec, Rng& rng) {
    return weak_augment_with(image, spec.crop_padding, draw_weak(spec.crop_padding, rng));
}

Tensor apply_strong_op(const Tensor& image, StrongOp op, double magnitude, Rng& rng) {
    check_image(image);
    const double level = std::clamp(magnitude, 0.0, 10.0) / 10.0;
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    Tensor out = image.clone();
    auto o = out.mutable_data();
    switch (op) {
    case StrongOp::brightness: {
        const double shift = signed_unit(rng) * 0.5 * level;
        for (auto& v : o) v += shift;
        break;
    }
    case StrongOp::contrast: {
        const double factor = 1.0 + signed_unit(rng) * 0.9 * level;
        double mean = 0.0;
        for (double v : o) mean += v;
        mean /= double(o.size());
        for (auto& v : o) v = mean + (v - mean) * factor;
        break;
    }
    case StrongOp::cutout: {
        const auto side = static_cast<std::size_t>(std::lround(level * 0.5 * double(std::min(h, w))));
        if (side == 0) break;
        const std::size_t y0 = rng.below(h - side + 1), x0 = rng.below(w - side + 1);
        for (std::size_t y = y0; y < y0 + side; ++y)
            std::fill_n(o.begin() + long((y * w + x0) * c), side * c, kGray);
        break;
    }
    case StrongOp::translate_x:
        out = shifted(image, std::lround(signed_unit(rng) * 0.3 * level * double(w)), 0);
        break;
    case StrongOp::translate_y:
        out = shifted(image, 0, std::lround(signed_unit(rng) * 0.3 * level * double(h)));
        break;
    case StrongOp::gaussian_noise: {
        const double sd = 0.1 * level;
        for (auto& v : o) v += sd * rng.normal();
        break;
    }
    case StrongOp::posterize: {
        const int bits = 8 - static_cast<int>(std::lround(4.0 * level));
        const double levels = std::ldexp(1.0, bits) - 1.0;
        for (auto& v : o) v = std::round(std::clamp(v, 0.0, 1.0) * levels) / levels;
        break;
    }
    }
    for (auto& v : out.mutable_data()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

Tensor strong_augment(const Tensor& image, const AugmentSpec& spec, Rng& rng) {
    spec.validate();
    Tensor out = weak_augment(image, spec, rng);
    for (std::size_t i = 0; i < spec.strong_ops; ++i) {
        const StrongOp op = kStrongPool[rng.below(kStrongPool.size())];
        out = apply_strong_op(out, op, spec.strong_magnitude, rng);
    }
    for (auto& v : out.mutable_data()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

} // namespace raum::augment
