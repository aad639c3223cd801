// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "raum/augment/augment.hpp"
#include "raum/backbone/backbone.hpp"
#include "raum/data/data.hpp"
#include "raum/rabu/model.hpp"

namespace raum::trainer {

enum class Ablation { full, no_ra, no_bu, backbone_only };

std::string_view ablation_name(Ablation a);
/// Throws ConfigError for an unknown name.
Ablation parse_ablation(std::string_view name);
bool uses_attention(Ablation a);
bool uses_uncertainty(Ablation a);

struct TrainConfig {
    double lambda_u = 1.0;
    double tau_c = 0.95;
    double tau_u = 0.05;
    std::size_t mc_passes = 10;
    std::size_t batch_labeled = 32;
    std::size_t batch_unlabeled = 32;
    double lr = 1e-4;
    double weight_decay = 0.05;
    std::size_t epochs = 30;
    std::size_t warmup_epochs = 10; // linear ramp of the unlabeled weight
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::full;
    // Fraction of test ids held out for checkpoint selection; 0 selects on the test set.
    double holdout_fraction = 0.0;
    bool log_decisions = false;

    void validate() const;
    rabu::Thresholds thresholds() const { return {tau_c, tau_u}; }
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;           // at the start of the epoch
    double lambda_weight = 0.0; // ramped unlabeled weight at the end of the epoch
    double loss_s = 0.0;
    double loss_u = 0.0;
    double loss = 0.0;
    double yield = 0.0;         // mean over steps of accepted / batch size
    std::size_t accepted = 0;
    std::size_t accepted_correct = 0;
    double precision = 0.0;     // NaN when nothing was accepted
    double test_acc = 0.0;
    double select_acc = 0.0;    // accuracy on the selection set
};

/// Fixed column order of metrics.csv.
inline constexpr std::string_view kMetricsHeader =
    "epoch,lr,lambda_u,loss_s,loss_u,loss,yield,accepted,accepted_correct,precision,test_acc,select_acc";
std::string metrics_row(const EpochMetrics& m);

struct LabeledItem {
    const Tensor* image;
    std::size_t label;
    std::uint64_t seed; // drives augmentation and dropout for this item
};

/// Mean cross entropy of strongly augmented labeled samples, dropout active.
Tensor supervised_loss(const rabu::RaumNet& model, const std::vector<LabeledItem>& batch,
                       const augment::AugmentSpec& aug, Tape* tape);

/// Pseudo-label loss over precomputed strong-view logits. Entries for rejected
/// samples are ignored and may be empty tensors. Returns an untaped zero when
/// nothing was accepted.
Tensor masked_pseudo_label_loss(const std::vector<Tensor>& strong_logits,
                                const std::vector<rabu::PseudoLabelDecision>& decisions, Tape* tape);

/// Single deterministic pass thresholded on max softmax (no uncertainty term).
rabu::PseudoLabelDecision confidence_decision(const rabu::RaumNet& model, const Tensor& image, double tau_c);

struct UnlabeledItem {
    const Tensor* image;
    std::uint64_t seed;
};

struct UnsupervisedResult {
    Tensor loss;
    std::vector<rabu::PseudoLabelDecision> decisions;
};

/// Weak view -> filter decision; strong view forward only for accepted samples.
UnsupervisedResult unsupervised_loss(const rabu::RaumNet& model, const std::vector<UnlabeledItem>& batch,
                                     const TrainConfig& cfg, const augment::AugmentSpec& aug, Tape* tape);

Tensor total_loss(const Tensor& loss_s, const Tensor& loss_u, double lambda, Tape* tape);

/// Unlabeled weight after `progress` epochs (fractional).
double ramped_lambda(double lambda, double progress, std::size_t warmup_epochs);

using Predictor = std::function<std::size_t(const Tensor& image)>;

/// Top-1 accuracy of `predict` over `ids`. Throws DataError on an empty id list.
double evaluate(const Predictor& predict, const data::PreparedDataset& ds, const std::vector<std::size_t>& ids);
/// Model accuracy: dropout off, one pass, argmax of the logits.
double evaluate(const rabu::RaumNet& model, const data::PreparedDataset& ds, const std::vector<std::size_t>& ids);

struct TrainResult {
    std::vector<EpochMetrics> history;
    double final_test_acc = 0.0;
    double best_select_acc = 0.0;
    double best_test_acc = 0.0; // test accuracy of the selected checkpoint
    std::size_t best_epoch = 0;
    std::size_t accepted_total = 0;
    std::size_t accepted_correct_total = 0;
    double pooled_precision = 0.0; // NaN when nothing was accepted
    NamedTensors best_parameters;
};

struct RunOptions {
    std::optional<std::filesystem::path> out_dir; // metrics.csv, summary.json, checkpoints
    std::string config_echo;                       // embedded verbatim in summary.json
    std::function<void(const EpochMetrics&)> on_epoch;
};

TrainResult train(const TrainConfig& cfg, const backbone::BackboneConfig& model_cfg,
                  const augment::AugmentSpec& aug, const data::PreparedDataset& ds, const RunOptions& opts = {});

} // namespace raum::trainer
