// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace raum {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

/// Dense row-major f64 array with optional gradient buffer.
///
/// Tensor is a handle: copies share storage, which is how the tape refers to
/// inputs and outputs of recorded ops. Use clone() for an independent copy.
/// Ops never modify their inputs; a tensor's values are fixed once an op has
/// produced it.
class Tensor {
public:
    /// Empty tensor of shape [0].
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor from(std::initializer_list<double> values);

    const Shape& shape() const noexcept;
    std::size_t rank() const noexcept { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept;

    std::span<const double> data() const noexcept;
    /// Mutable view for initialisers, optimizers and data loaders. Not for use
    /// on tensors already consumed by a recorded op.
    std::span<double> mutable_data() noexcept;
    double operator[](std::size_t i) const noexcept { return data()[i]; }
    double item() const;

    bool requires_grad() const noexcept;
    Tensor& set_requires_grad(bool on = true);

    bool has_grad() const noexcept;
    std::span<const double> grad() const;
    // Gradient state lives in the shared storage, so these work through const handles.
    /// Grad buffer, allocated (zeroed) on first access.
    std::span<double> grad_buffer() const;
    void zero_grad() const;
    void clear_grad() const;

    Tensor clone() const;
    /// Same storage viewed with a different shape (numel must match); no grad link.
    Tensor detach() const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
    bool defined() const noexcept { return impl_ != nullptr; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        bool requires_grad = false;
        std::optional<std::vector<double>> grad;
    };
    std::shared_ptr<Impl> impl_;
};

/// Reverse-mode tape. One tape per forward pass; backward may run once.
class Tape {
public:
    /// Receives the gradient of the node output and accumulates into the inputs.
    using BackwardFn = std::function<void(std::span<const double> grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Appends a node. `output` is marked requires_grad.
    void record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn);

    /// Seeds d(loss)/d(loss) = 1 and replays nodes in reverse recording order.
    /// Throws TapeError on a non-scalar loss or on a second call.
    void backward(const Tensor& loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }

    /// Indices of nodes in the order the last backward visited them.
    const std::vector<std::size_t>& visit_order() const noexcept { return visit_order_; }

private:
    struct Node {
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn fn;
    };
    std::vector<Node> nodes_;
    std::vector<std::size_t> visit_order_;
    bool consumed_ = false;
};

/// True when a tape is present and any of the inputs participates in autodiff.
bool should_record(const Tape* tape, std::initializer_list<const Tensor*> inputs) noexcept;

} // namespace raum
