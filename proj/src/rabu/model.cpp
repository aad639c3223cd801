// SPDX-License-Identifier: Apache-2.0
#include "raum/rabu/model.hpp"

#include <iostream>

#include "raum/error.hpp"
#include "raum/numkernel/ops.hpp"

namespace raum::rabu {

RaumNet::RaumNet(backbone::BackboneConfig cfg, bool use_attention, Rng& init_rng)
    : cfg_(cfg), use_attention_(use_attention) {
    cfg_.validate();
    Rng backbone_rng = init_rng.fork(1);
    Rng attention_rng = init_rng.fork(2);
    Rng head_rng = init_rng.fork(3);
    backbone_ = backbone::init_backbone(cfg_, backbone_rng);
    attention_ = init_attention(cfg_.embed_dim, attention_rng);
    head_ = init_head(cfg_.embed_dim, cfg_.num_classes, head_rng);
}

Tensor RaumNet::logits(const Tensor& image, bool dropout_active, Rng* rng, Tape* tape) const {
    if (dropout_active && cfg_.dropout_rate > 0.0 && rng == nullptr) {
        throw ConfigError("active dropout needs a random generator");
    }
    Tensor f = backbone::backbone_forward(image, cfg_, backbone_, dropout_active, rng, tape);
    if (use_attention_) {
        f = region_attention(f, attention_, tape).weighted;
    }
    return classify_head(f, head_, cfg_.dropout_rate, dropout_active, rng, tape);
}

Tensor RaumNet::probabilities(const Tensor& image, bool dropout_active, Rng* rng) const {
    return ops::softmax(logits(image, dropout_active, rng, nullptr), 0);
}

Tensor RaumNet::attention_map(const Tensor& image) const {
    const Tensor f = backbone::backbone_forward(image, cfg_, backbone_, false, nullptr);
    if (!use_attention_) {
        return Tensor(Shape{f.dim(0), f.dim(1)}, 1.0);
    }
    return region_attention(f, attention_).map;
}

NamedTensors RaumNet::parameters() const {
    NamedTensors out;
    backbone::collect_parameters(backbone_, "backbone.", out);
    if (use_attention_) {
        out.push_back({"attention.conv1_w", attention_.conv1_w});
        out.push_back({"attention.conv1_b", attention_.conv1_b});
        out.push_back({"attention.conv3_w", attention_.conv3_w});
        out.push_back({"attention.conv3_b", attention_.conv3_b});
    }
    out.push_back({"head.weight", head_.weight});
    out.push_back({"head.bias", head_.bias});
    return out;
}

PredictionEnsemble mc_dropout_ensemble(const RaumNet& model, const Tensor& image, std::size_t passes, Rng& rng) {
    if (passes < 2) {
        throw ConfigError("MC-Dropout needs at least 2 passes, got " + std::to_string(passes));
    }
    if (model.config().dropout_rate == 0.0) {
        static bool warned = false;
        if (!warned) {
            warned = true;
            std::clog << "warning: MC-Dropout with dropout_rate = 0 yields identical passes\n";
        }
    }
    const std::uint64_t master = rng.next_u64();
    const std::size_t k = model.config().num_classes;
    std::vector<double> rows(passes * k);
    for (std::size_t t = 0; t < passes; ++t) {
        Rng pass_rng(derive_seed({master, t}));
        const Tensor p = model.probabilities(image, true, &pass_rng);
        std::copy(p.data().begin(), p.data().end(), rows.begin() + static_cast<std::ptrdiff_t>(t * k));
    }
    return PredictionEnsemble(passes, k, std::move(rows));
}

} // namespace raum::rabu
