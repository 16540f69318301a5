#pragma once

#include <algorithm>
#include <cmath>

#include "quantact/tape.hpp"

namespace quantact {

// Largest relative disagreement between the tape gradient of scalar function `f` at `x`
// and central finite differences with step `eps`. Gradient magnitudes below `floor`
// are compared in absolute terms. The default step is a power of two so that inputs on
// a coarse dyadic grid are perturbed exactly.
template <class T, class F>
double grad_check(F&& f, const basic_tensor<T>& x, double eps = std::ldexp(1.0, -20), double floor = 1e-3) {
    auto leaf = x.clone();
    leaf.set_requires_grad(true);
    auto y = f(leaf);
    backward(y);
    std::vector<T> tape_grad(leaf.numel(), T(0));
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), tape_grad.begin());

    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        auto plus = x.clone();
        auto minus = x.clone();
        plus[i] = static_cast<T>(plus[i] + eps);
        minus[i] = static_cast<T>(minus[i] - eps);
        const double step = static_cast<double>(plus[i]) - static_cast<double>(minus[i]);
        const double fd = (static_cast<double>(f(plus).item()) - static_cast<double>(f(minus).item())) / step;
        const double g = tape_grad[i];
        const double denom = std::max({std::abs(g), std::abs(fd), floor});
        worst = std::max(worst, std::abs(g - fd) / denom);
    }
    return worst;
}

}  // namespace quantact
