// SPDX-License-Identifier: Apache-2.0
#include "raum/experiments/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "raum/error.hpp"
#include "raum/fileio.hpp"

namespace raum::experiments {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

double mean(const std::vector<double>& v) {
    return v.empty() ? kNaN : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

std::optional<std::filesystem::path> run_dir(const std::optional<std::filesystem::path>& out, const std::string& name) {
    if (!out) return std::nullopt;
    auto dir = *out / "runs" / name;
    std::filesystem::create_directories(dir);
    return dir;
}

RunSummary run_member(const RunConfig& cfg, const data::PreparedDataset& ds,
                      const std::optional<std::filesystem::path>& dir) {
    trainer::RunOptions opts;
    opts.out_dir = dir;
    opts.config_echo = to_ini(cfg);
    if (dir) fileio::write_text(*dir / "config.ini", opts.config_echo);
    return summarize(cfg, trainer::train(cfg.train, cfg.model_config(), cfg.augment, ds, opts));
}

} // namespace

data::PreparedDataset prepare_dataset(const RunConfig& cfg) {
    cfg.validate();
    const auto ds = data::generate_dataset(cfg.data);
    const auto manifest = data::make_splits(ds, cfg.label_ratio, cfg.data.seed);
    std::optional<data::OcclusionSpec> occ;
    if (cfg.occlusion.coverage > 0.0) occ = cfg.occlusion;
    return data::occlusion_protocol(ds, manifest, occ);
}

RunConfig with_seed(RunConfig cfg, std::uint64_t seed) {
    cfg.data.seed = seed;
    cfg.train.seed = seed;
    return cfg;
}

RunSummary summarize(const RunConfig& cfg, const trainer::TrainResult& result) {
    RunSummary s;
    s.ablation = cfg.train.ablation;
    s.seed = cfg.train.seed;
    s.tau_u = cfg.train.tau_u;
    s.final_acc = result.final_test_acc;
    s.best_acc = result.best_test_acc;
    s.pooled_precision = result.pooled_precision;
    std::vector<double> yields;
    for (const auto& m : result.history) yields.push_back(m.yield);
    s.mean_yield = mean(yields);
    s.first_epoch_yield = yields.empty() ? kNaN : yields.front();
    return s;
}

double median(std::vector<double> values) {
    std::erase_if(values, [](double v) { return !std::isfinite(v); });
    if (values.empty()) return kNaN;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                      const std::optional<std::filesystem::path>& out_dir, const Progress& progress) {
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    using trainer::Ablation;
    std::vector<AblationRow> rows;
    for (auto a : {Ablation::backbone_only, Ablation::no_ra, Ablation::no_bu, Ablation::full}) {
        AblationRow row;
        row.ablation = a;
        rows.push_back(row);
    }
    for (auto seed : seeds) {
        const RunConfig seeded = with_seed(base, seed);
        const auto ds = prepare_dataset(seeded);
        for (auto& row : rows) {
            RunConfig cfg = seeded;
            cfg.train.ablation = row.ablation;
            const std::string name = std::string(trainer::ablation_name(row.ablation)) + "-seed" + std::to_string(seed);
            row.runs.push_back(run_member(cfg, ds, run_dir(out_dir, name)));
            if (progress)
                progress(name + " final_acc=" + fmt(row.runs.back().final_acc) +
                         " precision=" + fmt(row.runs.back().pooled_precision));
        }
    }
    for (auto& row : rows) {
        std::vector<double> acc, prec;
        for (const auto& r : row.runs) {
            acc.push_back(r.final_acc);
            prec.push_back(r.pooled_precision);
        }
        row.median_acc = median(acc);
        row.mean_acc = mean(acc);
        row.median_precision = median(prec);
    }
    for (auto& row : rows) row.delta_vs_backbone_only = row.median_acc - rows.front().median_acc;
    if (out_dir) fileio::write_text(*out_dir / "table.csv", ablation_csv(rows));
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = std::string(kAblationHeader) + "\n";
    for (const auto& r : rows) {
        out += std::string(trainer::ablation_name(r.ablation)) + "," + (trainer::uses_attention(r.ablation) ? "on" : "off") +
               "," + (trainer::uses_uncertainty(r.ablation) ? "on" : "off") + "," + std::to_string(r.runs.size()) + "," +
               fmt(r.median_acc) + "," + fmt(r.mean_acc) + "," + fmt(r.delta_vs_backbone_only) + "," +
               fmt(r.median_precision) + "\n";
    }
    return out;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, std::vector<double> grid, const std::vector<std::uint64_t>& seeds,
                                const std::optional<std::filesystem::path>& out_dir, const Progress& progress) {
    if (grid.empty()) throw ConfigError("tau_u grid is empty");
    if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    std::vector<SweepRow> rows;
    for (double t : grid) {
        if (!(t >= 0.0)) throw ConfigError("tau_u values must be non-negative");
        SweepRow row;
        row.tau_u = t;
        rows.push_back(row);
    }
    for (auto seed : seeds) {
        const RunConfig seeded = with_seed(base, seed);
        const auto ds = prepare_dataset(seeded);
        for (auto& row : rows) {
            RunConfig cfg = seeded;
            cfg.train.tau_u = row.tau_u;
            const std::string name = "tau_u-" + fmt(row.tau_u) + "-seed" + std::to_string(seed);
            row.runs.push_back(run_member(cfg, ds, run_dir(out_dir, name)));
            if (progress) progress(name + " final_acc=" + fmt(row.runs.back().final_acc));
        }
    }
    for (auto& row : rows) {
        std::vector<double> acc, yield, first, prec;
        for (const auto& r : row.runs) {
            acc.push_back(r.final_acc);
            yield.push_back(r.mean_yield);
            first.push_back(r.first_epoch_yield);
            prec.push_back(r.pooled_precision);
        }
        row.median_acc = median(acc);
        row.mean_acc = mean(acc);
        row.mean_yield = mean(yield);
        row.first_epoch_yield = mean(first);
        row.median_precision = median(prec);
    }
    if (out_dir) fileio::write_text(*out_dir / "sweep.csv", sweep_csv(rows));
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = std::string(kSweepHeader) + "\n";
    for (const auto& r : rows) {
        out += fmt(r.tau_u) + "," + std::to_string(r.runs.size()) + "," + fmt(r.median_acc) + "," + fmt(r.mean_acc) + "," +
               fmt(r.mean_yield) + "," + fmt(r.first_epoch_yield) + "," + fmt(r.median_precision) + "\n";
    }
    return out;
}

} // namespace raum::experiments
