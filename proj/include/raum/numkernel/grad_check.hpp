// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "raum/numkernel/tensor.hpp"

namespace raum {

/// Scalar-valued function of one tensor. Must record on `tape` when given one
/// and must be deterministic (re-seed any Rng it uses on every call).
using ScalarFn = std::function<Tensor(const Tensor& x, Tape* tape)>;

/// Max over coordinates of |autodiff - central difference| / max(1, |central difference|).
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// Function of several leaf tensors (model parameters), checked jointly.
using MultiScalarFn = std::function<Tensor(const std::vector<Tensor>& leaves, Tape* tape)>;

/// grad_check over every coordinate of every leaf. Leaves are perturbed in place
/// and restored.
double grad_check_leaves(const MultiScalarFn& f, std::vector<Tensor> leaves, double h = 1e-5);

} // namespace raum
