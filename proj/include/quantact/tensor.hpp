#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "quantact/errors.hpp"

namespace quantact {

using shape_t = std::vector<std::size_t>;

inline std::size_t shape_numel(const shape_t& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const shape_t& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <class T>
class basic_tensor;

namespace detail {

template <class T>
struct node;

template <class T>
struct tensor_impl {
    shape_t shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::shared_ptr<node<T>> grad_fn;

    std::span<T> grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

// One recorded operation. `backward` receives the gradient of the operation's output
// and accumulates into the gradient buffers of `inputs`.
template <class T>
struct node {
    std::string name;
    std::vector<std::shared_ptr<tensor_impl<T>>> inputs;
    std::function<void(std::span<const T>)> backward;
    bool consumed = false;
};

}  // namespace detail

// Dense row-major array with an optional link into the autograd graph. Copies share
// storage, like a handle; use clone() for a deep copy.
template <class T>
class basic_tensor {
public:
    using value_type = T;

    basic_tensor() : impl_(std::make_shared<detail::tensor_impl<T>>()) {}

    basic_tensor(shape_t shape, std::vector<T> data, bool requires_grad = false)
        : impl_(std::make_shared<detail::tensor_impl<T>>()) {
        if (shape_numel(shape) != data.size())
            throw dimension_error("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(data.size()) + " values");
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static basic_tensor zeros(shape_t shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return basic_tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static basic_tensor full(shape_t shape, T value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return basic_tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static basic_tensor scalar(T value) { return basic_tensor({}, {value}); }

    template <class Rng>
    static basic_tensor randn(shape_t shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
        std::vector<T> data(shape_numel(shape));
        for (auto& v : data) v = static_cast<T>(dist(rng));
        return basic_tensor(std::move(shape), std::move(data), requires_grad);
    }

    template <class Rng>
    static basic_tensor uniform(shape_t shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        std::vector<T> data(shape_numel(shape));
        for (auto& v : data) v = static_cast<T>(dist(rng));
        return basic_tensor(std::move(shape), std::move(data), requires_grad);
    }

    const shape_t& shape() const noexcept { return impl_->shape; }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t rank() const noexcept { return impl_->shape.size(); }
    std::size_t numel() const noexcept { return impl_->data.size(); }

    std::span<T> data() noexcept { return impl_->data; }
    std::span<const T> data() const noexcept { return impl_->data; }
    const std::vector<T>& values() const noexcept { return impl_->data; }

    T item() const {
        if (numel() != 1) throw dimension_error("item: tensor has " + std::to_string(numel()) + " elements");
        return impl_->data[0];
    }

    T& operator[](std::size_t i) { return impl_->data[i]; }
    const T& operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const noexcept { return impl_->requires_grad; }

    // Only leaves may toggle this flag; results of recorded ops inherit it from their inputs.
    basic_tensor& set_requires_grad(bool flag) {
        if (impl_->grad_fn) throw tape_error("set_requires_grad: only leaf tensors can change requires_grad");
        impl_->requires_grad = flag;
        return *this;
    }

    bool is_leaf() const noexcept { return !impl_->grad_fn; }

    bool has_grad() const noexcept { return !impl_->grad.empty(); }
    std::span<const T> grad() const noexcept { return impl_->grad; }
    std::span<T> mutable_grad() { return impl_->grad_buffer(); }
    void zero_grad() { impl_->grad.clear(); }

    // Deep copy with no graph history.
    basic_tensor clone() const { return basic_tensor(impl_->shape, impl_->data, false); }

    // Copy of the values, cut from the graph.
    basic_tensor detach() const {
        basic_tensor t;
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        return t;
    }

    const std::shared_ptr<detail::tensor_impl<T>>& impl() const noexcept { return impl_; }

    explicit basic_tensor(std::shared_ptr<detail::tensor_impl<T>> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::tensor_impl<T>> impl_;
};

using tensor = basic_tensor<float>;
using tensor64 = basic_tensor<double>;

namespace detail {

// Builds the result of an operation. When any input participates in differentiation,
// records a node whose backward rule is `bw(grad_out)`.
template <class T, class Backward>
basic_tensor<T> record(std::string name, shape_t shape, std::vector<T> data,
                       std::initializer_list<const basic_tensor<T>*> inputs, Backward&& bw) {
    basic_tensor<T> out(std::move(shape), std::move(data));
    std::vector<std::shared_ptr<tensor_impl<T>>> grad_inputs;
    for (const auto* in : inputs)
        if (in->requires_grad()) grad_inputs.push_back(in->impl());
    if (!grad_inputs.empty()) {
        auto n = std::make_shared<node<T>>();
        n->name = std::move(name);
        n->inputs = std::move(grad_inputs);
        n->backward = std::forward<Backward>(bw);
        out.impl()->requires_grad = true;
        out.impl()->grad_fn = std::move(n);
    }
    return out;
}

// Gradient buffer of `t` if it takes part in differentiation, otherwise an empty span.
template <class T>
std::span<T> grad_sink(const basic_tensor<T>& t) {
    if (!t.requires_grad()) return {};
    return t.impl()->grad_buffer();
}

}  // namespace detail

}  // namespace quantact
