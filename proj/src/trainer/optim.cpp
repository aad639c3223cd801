// SPDX-License-Identifier: Apache-2.0
#include "raum/trainer/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "raum/error.hpp"

namespace raum::trainer {

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::uint64_t step, double lr, const AdamWConfig& cfg) {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
        throw ShapeError("adamw: parameter, gradient and moment sizes differ");
    }
    if (step == 0) {
        throw ConfigError("adamw: step count starts at 1");
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        param[i] -= lr * cfg.weight_decay * param[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
}

AdamW::AdamW(NamedTensors params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.shape());
        v_.emplace_back(p.tensor.shape());
    }
}

void AdamW::step(double lr) {
    ++step_;
    std::vector<double> zeros;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Tensor& p = params_[i].tensor;
        std::span<const double> g;
        if (p.has_grad()) {
            g = p.grad();
        } else {
            zeros.assign(p.numel(), 0.0);
            g = zeros;
        }
        adamw_update(Tensor(p).mutable_data(), g, m_[i].mutable_data(), v_[i].mutable_data(), step_, lr, cfg_);
    }
}

void AdamW::zero_grad() const {
    for (const auto& p : params_) {
        p.tensor.zero_grad();
    }
}

NamedTensors AdamW::state() const {
    NamedTensors out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.push_back({"m." + params_[i].name, m_[i]});
        out.push_back({"v." + params_[i].name, v_[i]});
    }
    out.push_back({"step", Tensor::scalar(double(step_))});
    return out;
}

void AdamW::load_state(const NamedTensors& state) {
    NamedTensors target = this->state();
    load_into(state, target);
    step_ = static_cast<std::uint64_t>(target.back().tensor.item());
}

double cosine_lr(double epoch, double total_epochs, double base_lr) {
    if (!(total_epochs > 0.0) || epoch < 0.0 || epoch > total_epochs) {
        throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(total_epochs) + "]");
    }
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
}

} // namespace raum::trainer
