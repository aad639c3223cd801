// SPDX-License-Identifier: Apache-2.0
#include "raum/rabu/rabu.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "raum/error.hpp"
#include "raum/numkernel/ops.hpp"

namespace raum::rabu {
namespace {

Tensor normal_param(Rng& rng, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.mutable_data()) {
        v = rng.normal(0.0, stddev);
    }
    return t.set_requires_grad();
}

} // namespace

std::size_t attention_mid_channels(std::size_t channels) noexcept { return std::max<std::size_t>(8, channels / 4); }

AttentionParams init_attention(std::size_t channels, Rng& rng) {
    const std::size_t mid = attention_mid_channels(channels);
    AttentionParams p;
    // He-style fan-in scaling keeps the ReLU layer alive from the start.
    p.conv1_w = normal_param(rng, {1, 1, channels, mid}, std::sqrt(2.0 / static_cast<double>(channels)));
    p.conv1_b = Tensor(Shape{mid}).set_requires_grad();
    p.conv3_w = normal_param(rng, {3, 3, mid, 1}, 0.02);
    // Gate starts mostly open (sigmoid(2) ~ 0.88) so early training sees nearly
    // unweighted features and the map learns to suppress regions.
    p.conv3_b = Tensor(Shape{1}, kAttentionGateBias).set_requires_grad();
    return p;
}

AttentionOutput region_attention(const Tensor& f, const AttentionParams& p, Tape* tape) {
    if (f.rank() != 3) {
        throw ConfigError("region_attention: feature map must be H'xW'xC, got " + shape_str(f.shape()));
    }
    if (p.conv1_w.rank() != 4 || p.conv1_w.dim(2) != f.dim(2)) {
        throw ConfigError("region_attention: attention network expects " +
                          std::to_string(p.conv1_w.rank() == 4 ? p.conv1_w.dim(2) : 0) + " channels, feature map has " +
                          std::to_string(f.dim(2)));
    }
    const Tensor hidden = ops::relu(ops::conv2d(f, p.conv1_w, p.conv1_b, tape), tape);
    const Tensor logits = ops::conv2d(hidden, p.conv3_w, p.conv3_b, tape);
    Tensor map = ops::reshape(ops::sigmoid(logits, tape), {f.dim(0), f.dim(1)}, tape);
    Tensor weighted = ops::spatial_gate(f, map, tape);
    return {std::move(map), std::move(weighted)};
}

HeadParams init_head(std::size_t channels, std::size_t classes, Rng& rng) {
    return {normal_param(rng, {channels, classes}, 0.02), Tensor(Shape{classes}).set_requires_grad()};
}

Tensor classify_head(const Tensor& f, const HeadParams& p, double dropout_rate, bool dropout_active, Rng* rng,
                     Tape* tape) {
    if (f.rank() != 3) {
        throw ShapeError("classify_head: feature map must be H'xW'xC, got " + shape_str(f.shape()));
    }
    const std::size_t c = f.dim(2);
    Tensor pooled = ops::mean_rows(ops::reshape(f, {f.dim(0) * f.dim(1), c}, tape), tape);
    if (dropout_active && dropout_rate > 0.0) {
        if (rng == nullptr) {
            throw ConfigError("active dropout needs a random generator");
        }
        pooled = ops::dropout(pooled, dropout_rate, true, *rng, tape);
    }
    const Tensor row = ops::reshape(pooled, {1, c}, tape);
    const Tensor out = ops::add_bias(ops::matmul(row, p.weight, tape), p.bias, tape);
    return ops::reshape(out, {p.weight.dim(1)}, tape);
}

PredictionEnsemble::PredictionEnsemble(std::size_t passes, std::size_t classes, std::vector<double> rows)
    : passes_(passes), classes_(classes), rows_(std::move(rows)) {
    if (passes_ < 2) {
        throw ConfigError("an ensemble needs at least 2 passes, got " + std::to_string(passes_));
    }
    if (classes_ == 0 || rows_.size() != passes_ * classes_) {
        throw ShapeError("ensemble rows do not match " + std::to_string(passes_) + "x" + std::to_string(classes_));
    }
    for (std::size_t t = 0; t < passes_; ++t) {
        double total = 0.0;
        for (double v : row(t)) {
            if (!(v >= 0.0)) {
                throw DataError("ensemble row " + std::to_string(t) + " has a negative or NaN entry");
            }
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw DataError("ensemble row " + std::to_string(t) + " sums to " + std::to_string(total));
        }
    }
}

std::size_t argmax(std::span<const double> v) {
    if (v.empty()) {
        throw ShapeError("argmax of an empty vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = i;
        }
    }
    return best;
}

// Accumulates deviations from the first row, so an ensemble of identical rows
// returns that row bit for bit.
MeanPrediction mean_prediction(const PredictionEnsemble& e) {
    MeanPrediction m;
    const auto first = e.row(0);
    std::vector<double> dev(e.classes(), 0.0);
    for (std::size_t t = 1; t < e.passes(); ++t) {
        auto r = e.row(t);
        for (std::size_t k = 0; k < e.classes(); ++k) {
            dev[k] += r[k] - first[k];
        }
    }
    const double inv = 1.0 / static_cast<double>(e.passes());
    m.mean_prob.resize(e.classes());
    for (std::size_t k = 0; k < e.classes(); ++k) {
        m.mean_prob[k] = first[k] + dev[k] * inv;
    }
    m.label = argmax(m.mean_prob);
    return m;
}

// Pairwise form of the population variance: sum_{i<j} (p_i - p_j)^2 / T^2.
// Exactly zero when all rows agree, which the mean-centred form is not.
double uncertainty(const PredictionEnsemble& e) {
    const std::size_t passes = e.passes();
    double total = 0.0;
    for (std::size_t i = 0; i < passes; ++i) {
        for (std::size_t j = i + 1; j < passes; ++j) {
            const auto a = e.row(i), b = e.row(j);
            for (std::size_t k = 0; k < e.classes(); ++k) {
                const double d = a[k] - b[k];
                total += d * d;
            }
        }
    }
    return total / static_cast<double>(passes * passes);
}

void Thresholds::validate() const {
    if (!(tau_c > 0.0 && tau_c <= 1.0)) {
        throw ConfigError("tau_c must lie in (0, 1], got " + std::to_string(tau_c));
    }
    if (!(tau_u >= 0.0)) {
        throw ConfigError("tau_u must be non-negative, got " + std::to_string(tau_u));
    }
}

bool filter_mask(double max_prob, double u, const Thresholds& th) {
    th.validate();
    return max_prob >= th.tau_c && u <= th.tau_u;
}

double PseudoLabelDecision::confidence() const { return mean_prob.empty() ? 0.0 : mean_prob[label]; }

PseudoLabelDecision decide(const PredictionEnsemble& e, const Thresholds& th) {
    auto m = mean_prediction(e);
    PseudoLabelDecision d;
    d.label = m.label;
    d.mean_prob = std::move(m.mean_prob);
    d.uncertainty = uncertainty(e);
    d.accepted = filter_mask(d.confidence(), d.uncertainty, th);
    return d;
}

std::string decision_record(std::uint64_t epoch, std::uint64_t step, std::uint64_t sample_id,
                            const PseudoLabelDecision& d) {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["step"] = step;
    j["id"] = sample_id;
    j["p_max"] = d.confidence();
    j["label"] = d.label;
    j["uncertainty"] = d.uncertainty;
    j["accepted"] = d.accepted;
    return j.dump();
}

} // namespace raum::rabu
