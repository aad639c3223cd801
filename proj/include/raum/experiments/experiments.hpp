// SPDX-License-Identifier: Apache-2.0
#pragma once
// Multi-run drivers: the four-way ablation table and the tau_u sweep.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "raum/experiments/config.hpp"

namespace raum::experiments {

/// Generates the dataset, splits it and applies the occlusion protocol.
data::PreparedDataset prepare_dataset(const RunConfig& cfg);

/// `cfg` with both the data seed and the training seed set to `seed`.
RunConfig with_seed(RunConfig cfg, std::uint64_t seed);

struct RunSummary {
    trainer::Ablation ablation = trainer::Ablation::full;
    std::uint64_t seed = 0;
    double tau_u = 0.0;
    double final_acc = 0.0;
    double best_acc = 0.0;
    double pooled_precision = 0.0; // NaN when nothing was accepted
    double mean_yield = 0.0;       // over all epochs
    double first_epoch_yield = 0.0;
};

RunSummary summarize(const RunConfig& cfg, const trainer::TrainResult& result);

using Progress = std::function<void(const std::string& line)>;

struct AblationRow {
    trainer::Ablation ablation = trainer::Ablation::full;
    std::vector<RunSummary> runs; // one per seed, in seed order
    double median_acc = 0.0;
    double mean_acc = 0.0;
    double delta_vs_backbone_only = 0.0; // difference of median accuracies
    double median_precision = 0.0;       // over seeds with any accepted pseudo-label; NaN if none
};

/// Runs backbone_only, no_ra, no_bu and full for every seed on the same data.
/// Member runs write into out_dir/runs/<ablation>-seed<k>/ when out_dir is set.
/// Rows come back in that fixed order.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                      const std::optional<std::filesystem::path>& out_dir, const Progress& progress = {});

inline constexpr std::string_view kAblationHeader =
    "config,region_attention,bayesian_uncertainty,seeds,median_acc,mean_acc,delta_vs_backbone_only,median_precision";
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct SweepRow {
    double tau_u = 0.0;
    std::vector<RunSummary> runs;
    double median_acc = 0.0;
    double mean_acc = 0.0;
    double mean_yield = 0.0;
    double first_epoch_yield = 0.0; // mean over seeds
    double median_precision = 0.0;
};

/// One full training run per (tau_u, seed). Rows are sorted by tau_u.
/// Member runs write into out_dir/runs/tau_u-<value>-seed<k>/ when out_dir is set.
std::vector<SweepRow> run_sweep(const RunConfig& base, std::vector<double> grid, const std::vector<std::uint64_t>& seeds,
                                const std::optional<std::filesystem::path>& out_dir, const Progress& progress = {});

inline constexpr std::string_view kSweepHeader =
    "tau_u,seeds,median_acc,mean_acc,mean_yield,first_epoch_yield,median_precision";
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Median of the finite entries; NaN when there are none.
double median(std::vector<double> values);

} // namespace raum::experiments
