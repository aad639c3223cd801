// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable tensor ops. Each op records itself on `tape` when a tape is
// given and at least one input requires a gradient; otherwise it is a plain
// forward computation.

#include <cstddef>

#include "raum/numkernel/rng.hpp"
#include "raum/numkernel/tensor.hpp"

namespace raum::ops {

// Linear algebra --------------------------------------------------------------

/// a[m×k] · b[k×n]
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

/// x[m×n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr);

// Elementwise -----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& x, double s, Tape* tape = nullptr);
Tensor relu(const Tensor& x, Tape* tape = nullptr);
Tensor sigmoid(const Tensor& x, Tape* tape = nullptr);
/// log(1 + e^x), computed without overflow.
Tensor softplus(const Tensor& x, Tape* tape = nullptr);
/// x * sigmoid(x)
Tensor silu(const Tensor& x, Tape* tape = nullptr);
Tensor exp(const Tensor& x, Tape* tape = nullptr);
/// -exp(x); maps a log-rate parameter to a strictly negative decay rate.
Tensor neg_exp(const Tensor& x, Tape* tape = nullptr);

// Reductions and reshapes -----------------------------------------------------

/// Sum of all elements as a scalar tensor.
Tensor sum(const Tensor& x, Tape* tape = nullptr);
/// Mean over rows of x[m×n] -> [n].
Tensor mean_rows(const Tensor& x, Tape* tape = nullptr);
Tensor reshape(const Tensor& x, Shape shape, Tape* tape = nullptr);

// Normalisation and probabilities ---------------------------------------------

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis, Tape* tape = nullptr);

/// Per-row layer normalisation of x[m×n] with learned gain[n] and bias[n].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5,
                  Tape* tape = nullptr);

/// -log softmax(logits)[target] via log-sum-exp. logits is a K-vector.
Tensor cross_entropy_logits(const Tensor& logits, std::size_t target, Tape* tape = nullptr);

/// -log p[target] for a probability vector p. Requires p[target] > 0.
Tensor cross_entropy_probs(const Tensor& probs, std::size_t target, Tape* tape = nullptr);

// Stochastic ------------------------------------------------------------------

/// Inverted dropout. Inactive -> returns `x` itself (same storage).
/// Throws ConfigError when rate is outside [0, 1).
Tensor dropout(const Tensor& x, double rate, bool active, Rng& rng, Tape* tape = nullptr);

// Spatial ---------------------------------------------------------------------

/// "Same"-padded cross-correlation. x[H×W×Cin], kernel[kh×kw×Cin×Cout], bias[Cout]
/// (bias may be undefined). kh, kw must be 1 or 3.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, Tape* tape = nullptr);

/// f[H×W×C] ⊙ gate[H×W], the gate broadcast over channels.
Tensor spatial_gate(const Tensor& f, const Tensor& gate, Tape* tape = nullptr);

/// Rearranges image[H×W×Cin] into [L × patch·patch·Cin], tokens in row-major
/// patch order, each patch flattened row-major (y, x, channel).
Tensor patchify(const Tensor& image, std::size_t patch, Tape* tape = nullptr);

// Sequence --------------------------------------------------------------------

/// Diagonal selective state-space scan.
///
///   x, delta: [L×C]    a: [C×N] (negative)    b, c: [L×N]
///   h_t[c,n] = exp(delta_t[c]·a[c,n])·h_{t-1}[c,n] + delta_t[c]·b_t[n]·x_t[c],  h_0 = 0
///   y_t[c]   = Σ_n c_t[n]·h_t[c,n]
/// Returns y [L×C].
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      Tape* tape = nullptr);

} // namespace raum::ops
