// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "raum/backbone/backbone.hpp"
#include "raum/rabu/rabu.hpp"

namespace raum::rabu {

/// Backbone -> (optional) region attention -> pooled linear head.
class RaumNet {
public:
    RaumNet(backbone::BackboneConfig cfg, bool use_attention, Rng& init_rng);

    const backbone::BackboneConfig& config() const noexcept { return cfg_; }
    bool uses_attention() const noexcept { return use_attention_; }

    /// Logits [K]. When dropout is active, `rng` drives every dropout mask.
    Tensor logits(const Tensor& image, bool dropout_active, Rng* rng, Tape* tape = nullptr) const;

    /// Softmax of logits, never recorded.
    Tensor probabilities(const Tensor& image, bool dropout_active, Rng* rng) const;

    /// Attention map for inspection (all ones when attention is disabled).
    Tensor attention_map(const Tensor& image) const;

    /// Trainable tensors, in a stable order. Attention parameters are only
    /// listed when attention is enabled.
    NamedTensors parameters() const;

    backbone::BackboneParams& backbone_params() noexcept { return backbone_; }
    AttentionParams& attention_params() noexcept { return attention_; }
    HeadParams& head_params() noexcept { return head_; }

private:
    backbone::BackboneConfig cfg_;
    bool use_attention_;
    backbone::BackboneParams backbone_;
    AttentionParams attention_;
    HeadParams head_;
};

/// T stochastic passes with dropout active and softmax per pass; nothing is
/// recorded for autodiff. Pass t uses a generator derived from one draw of
/// `rng` and t, so the result is a pure function of the generator state.
/// Throws ConfigError when passes < 2.
PredictionEnsemble mc_dropout_ensemble(const RaumNet& model, const Tensor& image, std::size_t passes, Rng& rng);

} // namespace raum::rabu
