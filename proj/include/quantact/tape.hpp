#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "quantact/tensor.hpp"

namespace quantact {

// The recorded operations reachable from one output, in topological order (every
// operation appears after the operations that produced its inputs). Running the tape
// consumes it: a graph can be differentiated once per forward pass.
template <class T>
class tape {
public:
    struct entry {
        std::shared_ptr<detail::tensor_impl<T>> output;
        std::shared_ptr<detail::node<T>> op;
    };

    static tape record_from(const basic_tensor<T>& output) {
        tape t;
        t.root_ = output.impl();
        std::unordered_set<const detail::tensor_impl<T>*> seen;
        // Iterative post-order DFS over tensors that have a grad_fn.
        struct frame {
            std::shared_ptr<detail::tensor_impl<T>> impl;
            std::size_t next_input;
        };
        std::vector<frame> stack;
        if (t.root_->grad_fn) {
            stack.push_back({t.root_, 0});
            seen.insert(t.root_.get());
        }
        while (!stack.empty()) {
            auto& top = stack.back();
            const auto& inputs = top.impl->grad_fn->inputs;
            if (top.next_input < inputs.size()) {
                auto child = inputs[top.next_input++];
                if (child->grad_fn && seen.insert(child.get()).second) stack.push_back({child, 0});
            } else {
                t.entries_.push_back({top.impl, top.impl->grad_fn});
                stack.pop_back();
            }
        }
        return t;
    }

    const std::vector<entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    // Seeds d(output)/d(output) with `seed` and propagates in reverse order.
    void run(std::span<const T> seed) {
        if (!root_) throw tape_error("tape: nothing recorded");
        if (!root_->requires_grad)
            throw tape_error("backward: tensor was not produced by a recorded forward and does not require grad");
        if (seed.size() != root_->data.size()) throw dimension_error("backward: seed gradient size mismatch");
        for (const auto& e : entries_)
            if (e.op->consumed) throw tape_error("backward: graph through '" + e.op->name + "' was already differentiated");
        auto root_grad = root_->grad_buffer();
        for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            auto& op = *it->op;
            op.consumed = true;
            auto grad = it->output->grad_buffer();
            op.backward(std::span<const T>(grad.data(), grad.size()));
            // Saved forward state is no longer needed.
            op.backward = nullptr;
        }
    }

private:
    std::shared_ptr<detail::tensor_impl<T>> root_;
    std::vector<entry> entries_;
};

// Reverse-mode differentiation of a scalar (or seeded non-scalar) output. Gradients
// accumulate into every requires_grad leaf.
template <class T>
void backward(const basic_tensor<T>& output) {
    if (output.numel() != 1) throw dimension_error("backward: output must be a scalar, got " + shape_str(output.shape()));
    auto t = tape<T>::record_from(output);
    const T one = T(1);
    t.run(std::span<const T>(&one, 1));
}

template <class T>
void backward(const basic_tensor<T>& output, std::span<const T> seed) {
    auto t = tape<T>::record_from(output);
    t.run(seed);
}

// Result of a user-supplied forward function: output values plus whatever the
// matching backward needs.
template <class T, class Ctx>
struct custom_forward_result {
    shape_t shape;
    std::vector<T> values;
    Ctx ctx;
};

// Registers a differentiable operation from a forward/backward pair and returns a
// factory that applies it. The backward function gets the output gradient and the
// saved context, and returns one gradient vector per input (an empty vector means no
// gradient flows to that input). It is called exactly once per recorded application.
template <class T, class Ctx>
auto register_custom_node(
    std::string name,
    std::function<custom_forward_result<T, Ctx>(std::span<const basic_tensor<T>>)> forward_fn,
    std::function<std::vector<std::vector<T>>(std::span<const T>, Ctx&)> backward_fn) {
    return [name = std::move(name), forward_fn = std::move(forward_fn),
            backward_fn = std::move(backward_fn)](std::vector<basic_tensor<T>> inputs) -> basic_tensor<T> {
        auto res = forward_fn(std::span<const basic_tensor<T>>(inputs));
        basic_tensor<T> out(std::move(res.shape), std::move(res.values));
        std::vector<std::shared_ptr<detail::tensor_impl<T>>> grad_inputs;
        for (const auto& in : inputs)
            if (in.requires_grad()) grad_inputs.push_back(in.impl());
        if (grad_inputs.empty()) return out;

        auto n = std::make_shared<detail::node<T>>();
        n->name = name;
        n->inputs = std::move(grad_inputs);
        auto ctx = std::make_shared<Ctx>(std::move(res.ctx));
        n->backward = [inputs, ctx, backward_fn, name](std::span<const T> grad_out) {
            auto grads = backward_fn(grad_out, *ctx);
            if (grads.size() != inputs.size())
                throw tape_error(name + ": backward returned " + std::to_string(grads.size()) + " gradients for " +
                                 std::to_string(inputs.size()) + " inputs");
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                if (!inputs[k].requires_grad() || grads[k].empty()) continue;
                if (grads[k].size() != inputs[k].numel())
                    throw dimension_error(name + ": gradient for input " + std::to_string(k) + " has wrong size");
                auto sink = inputs[k].impl()->grad_buffer();
                for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += grads[k][i];
            }
        };
        out.impl()->requires_grad = true;
        out.impl()->grad_fn = std::move(n);
        return out;
    };
}

}  // namespace quantact
