#pragma once

#include <cmath>
#include <vector>

#include "quantact/ops.hpp"

namespace quantact {

enum class run_mode { train, eval };

struct batchnorm_state {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit batchnorm_state(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Normalizes over every axis except axis 1. In train mode the batch statistics are used
// and folded into the running estimates; in eval mode the running estimates are used.
template <class T>
basic_tensor<T> batchnorm(const basic_tensor<T>& x, const basic_tensor<T>& gamma, const basic_tensor<T>& beta,
                          batchnorm_state& state, run_mode mode) {
    const auto sp = detail::split_channels(x.shape(), "batchnorm");
    if (gamma.numel() != sp.channels || beta.numel() != sp.channels || state.running_mean.size() != sp.channels)
        throw dimension_error("batchnorm: parameter sizes do not match " + std::to_string(sp.channels) + " channels");
    const std::size_t count = sp.outer * sp.inner;
    if (count == 0) throw dimension_error("batchnorm: empty batch");

    std::vector<double> mu(sp.channels), inv_std(sp.channels);
    if (mode == run_mode::train) {
        for (std::size_t c = 0; c < sp.channels; ++c) {
            double s = 0, s2 = 0;
            for (std::size_t o = 0; o < sp.outer; ++o) {
                const T* p = x.data().data() + (o * sp.channels + c) * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) s += p[i];
            }
            const double m = s / static_cast<double>(count);
            for (std::size_t o = 0; o < sp.outer; ++o) {
                const T* p = x.data().data() + (o * sp.channels + c) * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) s2 += (p[i] - m) * (p[i] - m);
            }
            const double var = s2 / static_cast<double>(count);
            mu[c] = m;
            inv_std[c] = 1.0 / std::sqrt(var + state.eps);
            const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
            state.running_mean[c] = (1 - state.momentum) * state.running_mean[c] + state.momentum * m;
            state.running_var[c] = (1 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < sp.channels; ++c) {
            mu[c] = state.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
        }
    }

    std::vector<T> xhat(x.numel()), out(x.numel());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t c = 0; c < sp.channels; ++c)
            for (std::size_t i = 0, base = (o * sp.channels + c) * sp.inner; i < sp.inner; ++i) {
                xhat[base + i] = static_cast<T>((x[base + i] - mu[c]) * inv_std[c]);
                out[base + i] = gamma[c] * xhat[base + i] + beta[c];
            }

    const bool batch_stats = mode == run_mode::train;
    return detail::record<T>(
        "batchnorm", x.shape(), std::move(out), {&x, &gamma, &beta},
        [x, gamma, beta, sp, count, batch_stats, inv_std = std::move(inv_std), xhat = std::move(xhat)](std::span<const T> g) {
            auto sx = detail::grad_sink(x);
            auto sg = detail::grad_sink(gamma);
            auto sb = detail::grad_sink(beta);
            for (std::size_t c = 0; c < sp.channels; ++c) {
                double sum_g = 0, sum_gx = 0;
                for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t i = 0, base = (o * sp.channels + c) * sp.inner; i < sp.inner; ++i) {
                        sum_g += g[base + i];
                        sum_gx += static_cast<double>(g[base + i]) * xhat[base + i];
                    }
                if (!sg.empty()) sg[c] += static_cast<T>(sum_gx);
                if (!sb.empty()) sb[c] += static_cast<T>(sum_g);
                if (sx.empty()) continue;
                const double scale = gamma[c] * inv_std[c];
                const double n = static_cast<double>(count);
                for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t i = 0, base = (o * sp.channels + c) * sp.inner; i < sp.inner; ++i) {
                        if (batch_stats)
                            sx[base + i] += static_cast<T>(scale * (g[base + i] - sum_g / n - xhat[base + i] * sum_gx / n));
                        else
                            sx[base + i] += static_cast<T>(scale * g[base + i]);
                    }
            }
        });
}

}  // namespace quantact
