// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "raum/backbone/checkpoint.hpp"

namespace raum::trainer {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// One decoupled-weight-decay Adam update of a flat parameter block. `step`
/// is the 1-based update count used for bias correction.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::uint64_t step, double lr, const AdamWConfig& cfg);

class AdamW {
public:
    AdamW(NamedTensors params, AdamWConfig cfg);

    /// Applies one update using each parameter's current gradient (a missing
    /// gradient counts as zero).
    void step(double lr);
    void zero_grad() const;

    std::uint64_t steps() const noexcept { return step_; }
    const AdamWConfig& config() const noexcept { return cfg_; }

    /// Moments as "m.<name>" / "v.<name>" plus a scalar "step".
    NamedTensors state() const;
    void load_state(const NamedTensors& state);

private:
    NamedTensors params_;
    AdamWConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t step_ = 0;
};

/// base_lr * (1 + cos(pi * epoch / total)) / 2 for a possibly fractional epoch.
double cosine_lr(double epoch, double total_epochs, double base_lr);

} // namespace raum::trainer
