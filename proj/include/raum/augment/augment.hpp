// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string_view>

#include "raum/numkernel/rng.hpp"
#include "raum/numkernel/tensor.hpp"

namespace raum::augment {

// Images are H×W×C tensors with values in [0, 1].
struct AugmentSpec {
    std::size_t crop_padding = 4;
    std::size_t strong_ops = 2;
    double strong_magnitude = 9.0; // level in [0, 10]

    void validate() const;
};

enum class StrongOp { brightness, contrast, cutout, translate_x, translate_y, gaussian_noise, posterize };

inline constexpr std::array<StrongOp, 7> kStrongPool{
    StrongOp::brightness, StrongOp::contrast,       StrongOp::cutout,   StrongOp::translate_x,
    StrongOp::translate_y, StrongOp::gaussian_noise, StrongOp::posterize};

std::string_view op_name(StrongOp op);

// Random choices behind one weak augmentation. Crop offsets index the padded
// image, so (padding, padding) is the centred crop.
struct WeakDraw {
    bool flip = false;
    std::size_t dx = 0;
    std::size_t dy = 0;
};

WeakDraw draw_weak(std::size_t padding, Rng& rng);
Tensor weak_augment_with(const Tensor& image, std::size_t padding, const WeakDraw& draw);
Tensor weak_augment(const Tensor& image, const AugmentSpec& spec, Rng& rng);

Tensor apply_strong_op(const Tensor& image, StrongOp op, double magnitude, Rng& rng);
Tensor strong_augment(const Tensor& image, const AugmentSpec& spec, Rng& rng);

} // namespace raum::augment
