// SPDX-License-Identifier: Apache-2.0
#include "raum/backbone/backbone.hpp"

#include <cmath>

#include "raum/error.hpp"
#include "raum/numkernel/ops.hpp"

namespace raum::backbone {
namespace {

constexpr double kDtMin = 1e-3;
constexpr double kDtMax = 1e-1;

Tensor normal_tensor(Rng& rng, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.mutable_data()) {
        v = rng.normal(0.0, stddev);
    }
    return t.set_requires_grad();
}

// std 1/sqrt(fan_in) keeps every projection near unit gain, so the
// multiplicative scan path carries gradient from the first step.
Tensor fan_in_tensor(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    return normal_tensor(rng, {fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

Tensor filled(Shape shape, double value) { return Tensor(std::move(shape), value).set_requires_grad(); }

} // namespace

void BackboneConfig::validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
        throw ConfigError("image_size (" + std::to_string(image_size) + ") must be a positive multiple of patch_size (" +
                          std::to_string(patch_size) + ")");
    }
    if (channels == 0 || embed_dim == 0 || state_dim == 0) {
        throw ConfigError("channels, embed_dim and state_dim must be positive");
    }
    if (num_classes < 2) {
        throw ConfigError("num_classes must be at least 2");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("dropout_rate must lie in [0, 1)");
    }
}

BackboneParams init_backbone(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t c = cfg.embed_dim;
    const std::size_t n = cfg.state_dim;
    BackboneParams p;
    p.embed_w = fan_in_tensor(rng, cfg.patch_features(), c);
    p.embed_b = filled({c}, 0.0);
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        SSMBlockParams blk;
        blk.norm_gain = filled({c}, 1.0);
        blk.norm_bias = filled({c}, 0.0);
        blk.in_x = fan_in_tensor(rng, c, c);
        blk.in_z = fan_in_tensor(rng, c, c);
        blk.delta_w = fan_in_tensor(rng, c, c);
        blk.delta_b = filled({c}, 0.0);
        for (auto& v : blk.delta_b.mutable_data()) {
            const double dt = std::exp(rng.uniform(std::log(kDtMin), std::log(kDtMax)));
            v = dt + std::log(-std::expm1(-dt)); // inverse softplus
        }
        blk.b_proj = fan_in_tensor(rng, c, n);
        blk.c_proj = fan_in_tensor(rng, c, n);
        blk.a_log = filled({c, n}, 0.0);
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                blk.a_log.mutable_data()[i * n + j] = std::log(static_cast<double>(j + 1));
            }
        }
        blk.out_proj = fan_in_tensor(rng, c, c);
        p.blocks.push_back(std::move(blk));
    }
    return p;
}

Tensor patchify_embed(const Tensor& image, const BackboneConfig& cfg, const BackboneParams& params, Tape* tape) {
    if (image.shape() != Shape{cfg.image_size, cfg.image_size, cfg.channels}) {
        throw ConfigError("image shape " + shape_str(image.shape()) + " does not match configured " +
                          shape_str({cfg.image_size, cfg.image_size, cfg.channels}));
    }
    const Tensor patches = ops::patchify(image, cfg.patch_size, tape);
    return ops::add_bias(ops::matmul(patches, params.embed_w, tape), params.embed_b, tape);
}

Tensor selective_scan(const Tensor& x, const SSMBlockParams& p, Tape* tape) {
    const Tensor u = ops::matmul(x, p.in_x, tape);
    const Tensor z = ops::matmul(x, p.in_z, tape);
    const Tensor delta = ops::softplus(ops::add_bias(ops::matmul(u, p.delta_w, tape), p.delta_b, tape), tape);
    const Tensor b = ops::matmul(u, p.b_proj, tape);
    const Tensor c = ops::matmul(u, p.c_proj, tape);
    const Tensor a = ops::neg_exp(p.a_log, tape);
    const Tensor y = ops::selective_scan(u, delta, a, b, c, tape);
    return ops::matmul(ops::mul(y, ops::silu(z, tape), tape), p.out_proj, tape);
}

Tensor ssm_block(const Tensor& x, const SSMBlockParams& p, double dropout_rate, bool dropout_active, Rng* rng,
                 Tape* tape) {
    const Tensor normed = ops::layer_norm(x, p.norm_gain, p.norm_bias, 1e-5, tape);
    Tensor mixed = selective_scan(normed, p, tape);
    if (dropout_active && dropout_rate > 0.0) {
        if (rng == nullptr) {
            throw ConfigError("active dropout needs a random generator");
        }
        mixed = ops::dropout(mixed, dropout_rate, true, *rng, tape);
    }
    return ops::add(x, mixed, tape);
}

Tensor backbone_forward(const Tensor& image, const BackboneConfig& cfg, const BackboneParams& params,
                        bool dropout_active, Rng* rng, Tape* tape) {
    Tensor tokens = patchify_embed(image, cfg, params, tape);
    for (const auto& blk : params.blocks) {
        tokens = ssm_block(tokens, blk, cfg.dropout_rate, dropout_active, rng, tape);
    }
    return ops::reshape(tokens, {cfg.grid(), cfg.grid(), cfg.embed_dim}, tape);
}

void collect_parameters(const BackboneParams& params, const std::string& prefix, NamedTensors& out) {
    out.push_back({prefix + "embed_w", params.embed_w});
    out.push_back({prefix + "embed_b", params.embed_b});
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        const auto& b = params.blocks[i];
        const std::string p = prefix + "blocks." + std::to_string(i) + ".";
        out.push_back({p + "norm_gain", b.norm_gain});
        out.push_back({p + "norm_bias", b.norm_bias});
        out.push_back({p + "in_x", b.in_x});
        out.push_back({p + "in_z", b.in_z});
        out.push_back({p + "delta_w", b.delta_w});
        out.push_back({p + "delta_b", b.delta_b});
        out.push_back({p + "b_proj", b.b_proj});
        out.push_back({p + "c_proj", b.c_proj});
        out.push_back({p + "a_log", b.a_log});
        out.push_back({p + "out_proj", b.out_proj});
    }
}

} // namespace raum::backbone
