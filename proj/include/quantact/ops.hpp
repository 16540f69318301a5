#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "quantact/tensor.hpp"

namespace quantact {

namespace detail {

template <class T>
using row_matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using cmap = Eigen::Map<const row_matrix<T>>;
template <class T>
using mmap = Eigen::Map<row_matrix<T>>;

inline void require_same_shape(const shape_t& a, const shape_t& b, const char* op) {
    if (a != b) throw dimension_error(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) + " differ");
}

// Splits a tensor of rank >= 2 as [outer, channels, inner] around axis 1.
struct channel_split {
    std::size_t outer, channels, inner;
};

inline channel_split split_channels(const shape_t& s, const char* op) {
    if (s.size() < 2) throw dimension_error(std::string(op) + ": expected rank >= 2, got " + shape_str(s));
    std::size_t inner = 1;
    for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
    return {s[0], s[1], inner};
}

}  // namespace detail

template <class T>
basic_tensor<T> matmul(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw dimension_error("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw dimension_error("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<T> out(m * n);
    const auto ai = static_cast<Eigen::Index>(m), ki = static_cast<Eigen::Index>(k), ni = static_cast<Eigen::Index>(n);
    detail::mmap<T>(out.data(), ai, ni).noalias() = detail::cmap<T>(a.data().data(), ai, ki) * detail::cmap<T>(b.data().data(), ki, ni);
    return detail::record<T>("matmul", {m, n}, std::move(out), {&a, &b}, [a, b, ai, ki, ni](std::span<const T> g) {
        detail::cmap<T> G(g.data(), ai, ni);
        if (auto ga = detail::grad_sink(a); !ga.empty())
            detail::mmap<T>(ga.data(), ai, ki).noalias() += G * detail::cmap<T>(b.data().data(), ki, ni).transpose();
        if (auto gb = detail::grad_sink(b); !gb.empty())
            detail::mmap<T>(gb.data(), ki, ni).noalias() += detail::cmap<T>(a.data().data(), ai, ki).transpose() * G;
    });
}

template <class T>
basic_tensor<T> add(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::record<T>("add", a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const T> g) {
        for (auto* t : {&a, &b})
            if (auto s = detail::grad_sink(*t); !s.empty())
                for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
    });
}

template <class T>
basic_tensor<T> sub(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::record<T>("sub", a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const T> g) {
        if (auto s = detail::grad_sink(a); !s.empty())
            for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
        if (auto s = detail::grad_sink(b); !s.empty())
            for (std::size_t i = 0; i < g.size(); ++i) s[i] -= g[i];
    });
}

template <class T>
basic_tensor<T> mul(const basic_tensor<T>& a, const basic_tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::record<T>("mul", a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const T> g) {
        if (auto s = detail::grad_sink(a); !s.empty())
            for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * b[i];
        if (auto s = detail::grad_sink(b); !s.empty())
            for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * a[i];
    });
}

template <class T>
basic_tensor<T> scale(const basic_tensor<T>& a, T factor) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    return detail::record<T>("scale", a.shape(), std::move(out), {&a}, [a, factor](std::span<const T> g) {
        auto s = detail::grad_sink(a);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * factor;
    });
}

template <class T>
basic_tensor<T> square(const basic_tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
    return detail::record<T>("square", a.shape(), std::move(out), {&a}, [a](std::span<const T> g) {
        auto s = detail::grad_sink(a);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += T(2) * a[i] * g[i];
    });
}

// Adds a per-channel bias along axis 1 (features of [B,N] or channels of [B,C,H,W]).
template <class T>
basic_tensor<T> add_channel_bias(const basic_tensor<T>& x, const basic_tensor<T>& bias) {
    const auto sp = detail::split_channels(x.shape(), "add_channel_bias");
    if (bias.numel() != sp.channels)
        throw dimension_error("add_channel_bias: bias has " + std::to_string(bias.numel()) + " entries for " +
                              std::to_string(sp.channels) + " channels");
    std::vector<T> out(x.values());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t c = 0; c < sp.channels; ++c) {
            T* p = out.data() + (o * sp.channels + c) * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) p[i] += bias[c];
        }
    return detail::record<T>("add_channel_bias", x.shape(), std::move(out), {&x, &bias}, [x, bias, sp](std::span<const T> g) {
        if (auto s = detail::grad_sink(x); !s.empty())
            for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
        if (auto s = detail::grad_sink(bias); !s.empty())
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t c = 0; c < sp.channels; ++c) {
                    const T* p = g.data() + (o * sp.channels + c) * sp.inner;
                    T acc = 0;
                    for (std::size_t i = 0; i < sp.inner; ++i) acc += p[i];
                    s[c] += acc;
                }
    });
}

template <class T>
basic_tensor<T> relu(const basic_tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    return detail::record<T>("relu", x.shape(), std::move(out), {&x}, [x](std::span<const T> g) {
        auto s = detail::grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > T(0)) s[i] += g[i];
    });
}

// Parametric ReLU with one learnable slope per channel (axis 1).
template <class T>
basic_tensor<T> prelu(const basic_tensor<T>& x, const basic_tensor<T>& alpha) {
    const auto sp = detail::split_channels(x.shape(), "prelu");
    if (alpha.numel() != sp.channels) throw dimension_error("prelu: alpha size does not match channel count");
    std::vector<T> out(x.numel());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t c = 0; c < sp.channels; ++c)
            for (std::size_t i = 0, base = (o * sp.channels + c) * sp.inner; i < sp.inner; ++i) {
                const T v = x[base + i];
                out[base + i] = v > T(0) ? v : alpha[c] * v;
            }
    return detail::record<T>("prelu", x.shape(), std::move(out), {&x, &alpha}, [x, alpha, sp](std::span<const T> g) {
        auto sx = detail::grad_sink(x);
        auto sa = detail::grad_sink(alpha);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t c = 0; c < sp.channels; ++c)
                for (std::size_t i = 0, base = (o * sp.channels + c) * sp.inner; i < sp.inner; ++i) {
                    const T v = x[base + i];
                    if (!sx.empty()) sx[base + i] += v > T(0) ? g[base + i] : alpha[c] * g[base + i];
                    if (!sa.empty() && v <= T(0)) sa[c] += v * g[base + i];
                }
    });
}

inline constexpr double selu_lambda = 1.0507009873554804934193349852946;
inline constexpr double selu_alpha = 1.6732632423543772848170429916717;

template <class T>
basic_tensor<T> selu(const basic_tensor<T>& x) {
    const T lambda = static_cast<T>(selu_lambda), alpha = static_cast<T>(selu_alpha);
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] > T(0) ? lambda * x[i] : lambda * alpha * (std::exp(x[i]) - T(1));
    return detail::record<T>("selu", x.shape(), std::move(out), {&x}, [x, lambda, alpha](std::span<const T> g) {
        auto s = detail::grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i)
            s[i] += g[i] * (x[i] > T(0) ? lambda : lambda * alpha * std::exp(x[i]));
    });
}

template <class T>
basic_tensor<T> sigmoid(const basic_tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] >= T(0) ? T(1) / (T(1) + std::exp(-x[i])) : std::exp(x[i]) / (T(1) + std::exp(x[i]));
    return detail::record<T>("sigmoid", x.shape(), out, {&x}, [x, out](std::span<const T> g) {
        auto s = detail::grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i] * out[i] * (T(1) - out[i]);
    });
}

template <class T>
basic_tensor<T> sum(const basic_tensor<T>& x) {
    T acc = 0;
    for (auto v : x.data()) acc += v;
    return detail::record<T>("sum", {}, {acc}, {&x}, [x](std::span<const T> g) {
        auto s = detail::grad_sink(x);
        for (auto& v : s) v += g[0];
    });
}

template <class T>
basic_tensor<T> mean(const basic_tensor<T>& x) {
    if (x.numel() == 0) throw dimension_error("mean: empty tensor");
    T acc = 0;
    for (auto v : x.data()) acc += v;
    const T inv = T(1) / static_cast<T>(x.numel());
    return detail::record<T>("mean", {}, {acc * inv}, {&x}, [x, inv](std::span<const T> g) {
        auto s = detail::grad_sink(x);
        for (auto& v : s) v += g[0] * inv;
    });
}

template <class T>
basic_tensor<T> reshape(const basic_tensor<T>& x, shape_t shape) {
    if (shape_numel(shape) != x.numel())
        throw dimension_error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    return detail::record<T>("reshape", std::move(shape), x.values(), {&x}, [x](std::span<const T> g) {
        auto s = detail::grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) s[i] += g[i];
    });
}

// [B, ...] -> [B, prod(...)]
template <class T>
basic_tensor<T> flatten(const basic_tensor<T>& x) {
    if (x.rank() < 1) throw dimension_error("flatten: scalar input");
    return reshape(x, {x.dim(0), x.numel() / std::max<std::size_t>(x.dim(0), 1)});
}

}  // namespace quantact
