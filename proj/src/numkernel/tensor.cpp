// SPDX-License-Identifier: Apache-2.0
#include "raum/numkernel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "raum/error.hpp"
#include "raum/numkernel/rng.hpp"

namespace raum {

double Rng::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
}

std::size_t shape_numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            os << 'x';
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor() : Tensor(Shape{0}, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
    const auto n = shape_numel(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(n, fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                         " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::from(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

const Shape& Tensor::shape() const noexcept { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(impl_->shape));
    }
    return impl_->shape[axis];
}

std::size_t Tensor::numel() const noexcept { return impl_->data.size(); }

std::span<const double> Tensor::data() const noexcept { return impl_->data; }

std::span<double> Tensor::mutable_data() noexcept { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

bool Tensor::requires_grad() const noexcept { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const noexcept { return impl_->grad.has_value(); }

std::span<const double> Tensor::grad() const {
    if (!impl_->grad) {
        throw TapeError("tensor " + shape_str(shape()) + " has no gradient");
    }
    return *impl_->grad;
}

std::span<double> Tensor::grad_buffer() const {
    if (!impl_->grad) {
        impl_->grad.emplace(impl_->data.size(), 0.0);
    }
    return *impl_->grad;
}

void Tensor::zero_grad() const {
    if (impl_->grad) {
        std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
    }
}

void Tensor::clear_grad() const { impl_->grad.reset(); }

Tensor Tensor::clone() const {
    Tensor t(impl_->shape, impl_->data);
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

bool should_record(const Tape* tape, std::initializer_list<const Tensor*> inputs) noexcept {
    if (tape == nullptr) {
        return false;
    }
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t != nullptr && t->defined() && t->requires_grad(); });
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
    if (consumed_) {
        throw TapeError("cannot record on a tape that has already been replayed");
    }
    output.set_requires_grad(true);
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) {
        throw TapeError("backward called twice on the same tape");
    }
    if (loss.numel() != 1) {
        throw TapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw TapeError("loss is not on the tape");
    }
    consumed_ = true;
    Tensor seed = loss;
    seed.grad_buffer()[0] += 1.0;
    visit_order_.clear();
    visit_order_.reserve(nodes_.size());
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& node = nodes_[i];
        visit_order_.push_back(i);
        if (!node.output.has_grad()) {
            continue; // not reachable from the loss
        }
        node.fn(node.output.grad());
    }
    // Release closures; they hold references into the graph.
    nodes_.clear();
}

} // namespace raum
