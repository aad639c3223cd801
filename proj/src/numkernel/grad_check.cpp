// SPDX-License-Identifier: Apache-2.0
#include "raum/numkernel/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "raum/error.hpp"

namespace raum {

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
    Tensor leaf = x.clone();
    leaf.clear_grad();
    return grad_check_leaves([&f](const std::vector<Tensor>& leaves, Tape* tape) { return f(leaves[0], tape); },
                             {leaf}, h);
}

double grad_check_leaves(const MultiScalarFn& f, std::vector<Tensor> leaves, double h) {
    std::vector<bool> prior(leaves.size());
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        prior[i] = leaves[i].requires_grad();
        leaves[i].set_requires_grad(true);
        leaves[i].clear_grad();
    }
    {
        Tape tape;
        const Tensor loss = f(leaves, &tape);
        tape.backward(loss);
    }
    double worst = 0.0;
    for (auto& leaf : leaves) {
        std::vector<double> analytic(leaf.numel(), 0.0);
        if (leaf.has_grad()) {
            auto g = leaf.grad();
            std::copy(g.begin(), g.end(), analytic.begin());
        }
        auto values = leaf.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = f(leaves, nullptr).item();
            values[i] = saved - h;
            const double down = f(leaves, nullptr).item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        leaves[i].set_requires_grad(prior[i]);
        leaves[i].clear_grad();
    }
    return worst;
}

} // namespace raum
