// SPDX-License-Identifier: Apache-2.0
#pragma once

// Region attention, MC-Dropout ensembles and the dual-criterion pseudo-label filter.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "raum/backbone/checkpoint.hpp"
#include "raum/numkernel/rng.hpp"
#include "raum/numkernel/tensor.hpp"

namespace raum::rabu {

// Region attention ------------------------------------------------------------

struct AttentionParams {
    Tensor conv1_w; // [1×1×C×C_mid]
    Tensor conv1_b; // [C_mid]
    Tensor conv3_w; // [3×3×C_mid×1]
    Tensor conv3_b; // [1]
};

/// C_mid = C/4, but never below 8.
std::size_t attention_mid_channels(std::size_t channels) noexcept;

/// Initial bias of the 3×3 gate convolution.
inline constexpr double kAttentionGateBias = 2.0;

AttentionParams init_attention(std::size_t channels, Rng& rng);

struct AttentionOutput {
    Tensor map;      // A [H'×W'], every entry in [0, 1]
    Tensor weighted; // F_att = F ⊙ A, [H'×W'×C]
};

/// A = σ(Conv3×3(ReLU(Conv1×1(F)))),  F_att = F ⊙ A.
AttentionOutput region_attention(const Tensor& feature_map, const AttentionParams& params, Tape* tape = nullptr);

// Classifier head -------------------------------------------------------------

struct HeadParams {
    Tensor weight; // [C×K]
    Tensor bias;   // [K]
};

HeadParams init_head(std::size_t channels, std::size_t classes, Rng& rng);

/// Global average pool over H'×W', dropout, then a linear map to K logits.
Tensor classify_head(const Tensor& feature_map, const HeadParams& params, double dropout_rate, bool dropout_active,
                     Rng* rng, Tape* tape = nullptr);

// Ensembles and decisions -----------------------------------------------------

/// T probability rows over K classes.
class PredictionEnsemble {
public:
    /// Throws ConfigError when T < 2, and DataError when a row is not a
    /// probability vector (negative entry or sum off by more than 1e-9).
    PredictionEnsemble(std::size_t passes, std::size_t classes, std::vector<double> rows);

    std::size_t passes() const noexcept { return passes_; }
    std::size_t classes() const noexcept { return classes_; }
    std::span<const double> row(std::size_t t) const { return {rows_.data() + t * classes_, classes_}; }
    std::span<const double> values() const noexcept { return rows_; }

private:
    std::size_t passes_;
    std::size_t classes_;
    std::vector<double> rows_;
};

/// Index of the largest entry; the lowest index wins exact ties.
std::size_t argmax(std::span<const double> v);

struct MeanPrediction {
    std::vector<double> mean_prob; // p̄
    std::size_t label = 0;         // ŷ = argmax p̄
};

MeanPrediction mean_prediction(const PredictionEnsemble& e);

/// Tr(Cov) of the rows with population (1/T) normalisation: Σ_k Var_t(p_{t,k}).
double uncertainty(const PredictionEnsemble& e);

struct Thresholds {
    double tau_c = 0.95;
    double tau_u = 0.05;

    /// tau_c in (0, 1], tau_u >= 0; otherwise ConfigError.
    void validate() const;
};

/// M = 1 iff max_prob >= tau_c and uncertainty <= tau_u (both inclusive).
bool filter_mask(double max_prob, double uncertainty, const Thresholds& thresholds);

struct PseudoLabelDecision {
    std::vector<double> mean_prob;
    std::size_t label = 0;
    double uncertainty = 0.0;
    bool accepted = false;

    double confidence() const;
};

PseudoLabelDecision decide(const PredictionEnsemble& e, const Thresholds& thresholds);

/// One NDJSON line: {"epoch":..,"step":..,"id":..,"p_max":..,"label":..,"uncertainty":..,"accepted":..}
std::string decision_record(std::uint64_t epoch, std::uint64_t step, std::uint64_t sample_id,
                            const PseudoLabelDecision& d);

} // namespace raum::rabu
