#pragma once

#include <limits>
#include <vector>

#include "quantact/ops.hpp"

namespace quantact {

struct conv_params {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

namespace detail {

struct conv_geometry {
    std::size_t batch, channels, height, width;
    std::size_t filters, kh, kw;
    std::size_t out_h, out_w;
    std::size_t stride, padding;

    std::size_t patch() const { return channels * kh * kw; }
    std::size_t pixels() const { return out_h * out_w; }
};

inline conv_geometry conv_shape(const shape_t& x, const shape_t& k, conv_params p) {
    if (x.size() != 4 || k.size() != 4)
        throw dimension_error("conv2d: expected [B,C,H,W] input and [F,C,kh,kw] kernel, got " + shape_str(x) + " and " +
                              shape_str(k));
    if (x[1] != k[1])
        throw dimension_error("conv2d: input has " + std::to_string(x[1]) + " channels, kernel expects " + std::to_string(k[1]));
    if (p.stride == 0) throw dimension_error("conv2d: stride must be positive");
    const auto ph = x[2] + 2 * p.padding, pw = x[3] + 2 * p.padding;
    if (k[2] > ph || k[3] > pw) throw dimension_error("conv2d: kernel does not fit the padded input");
    return {x[0], x[1], x[2], x[3], k[0], k[2], k[3], (ph - k[2]) / p.stride + 1, (pw - k[3]) / p.stride + 1, p.stride, p.padding};
}

// Unfolds input patches into columns laid out as [C*kh*kw, B*out_h*out_w].
template <class T>
void im2col(const T* x, const conv_geometry& g, T* cols) {
    const std::size_t ncols = g.batch * g.pixels();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
                for (std::size_t b = 0; b < g.batch; ++b) {
                    const T* plane = x + (b * g.channels + c) * g.height * g.width;
                    T* dst = row + b * g.pixels();
                    for (std::size_t oi = 0; oi < g.out_h; ++oi) {
                        const auto ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
                        for (std::size_t oj = 0; oj < g.out_w; ++oj) {
                            const auto jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
                            const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(g.height) &&
                                                jj < static_cast<long>(g.width);
                            dst[oi * g.out_w + oj] = inside ? plane[ii * g.width + jj] : T(0);
                        }
                    }
                }
            }
}

// Adjoint of im2col: scatters column gradients back onto the input.
template <class T>
void col2im(const T* cols, const conv_geometry& g, T* x) {
    const std::size_t ncols = g.batch * g.pixels();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
                for (std::size_t b = 0; b < g.batch; ++b) {
                    T* plane = x + (b * g.channels + c) * g.height * g.width;
                    const T* src = row + b * g.pixels();
                    for (std::size_t oi = 0; oi < g.out_h; ++oi) {
                        const auto ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
                        if (ii < 0 || ii >= static_cast<long>(g.height)) continue;
                        for (std::size_t oj = 0; oj < g.out_w; ++oj) {
                            const auto jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
                            if (jj < 0 || jj >= static_cast<long>(g.width)) continue;
                            plane[ii * g.width + jj] += src[oi * g.out_w + oj];
                        }
                    }
                }
            }
}

}  // namespace detail

// Cross-correlation of x [B,C,H,W] with kernel [F,C,kh,kw]; result [B,F,H',W'].
template <class T>
basic_tensor<T> conv2d(const basic_tensor<T>& x, const basic_tensor<T>& kernel, conv_params p = {}) {
    const auto g = detail::conv_shape(x.shape(), kernel.shape(), p);
    const auto patch = static_cast<Eigen::Index>(g.patch());
    const auto ncols = static_cast<Eigen::Index>(g.batch * g.pixels());
    const auto nf = static_cast<Eigen::Index>(g.filters);

    std::vector<T> cols(g.patch() * g.batch * g.pixels());
    detail::im2col(x.data().data(), g, cols.data());
    std::vector<T> prod(g.filters * g.batch * g.pixels());
    detail::mmap<T>(prod.data(), nf, ncols).noalias() =
        detail::cmap<T>(kernel.data().data(), nf, patch) * detail::cmap<T>(cols.data(), patch, ncols);

    // [F, B*P] -> [B, F, P]
    std::vector<T> out(prod.size());
    for (std::size_t f = 0; f < g.filters; ++f)
        for (std::size_t b = 0; b < g.batch; ++b)
            std::copy_n(prod.data() + (f * g.batch + b) * g.pixels(), g.pixels(),
                        out.data() + (b * g.filters + f) * g.pixels());

    return detail::record<T>(
        "conv2d", {g.batch, g.filters, g.out_h, g.out_w}, std::move(out), {&x, &kernel},
        [x, kernel, g, cols = std::move(cols), patch, ncols, nf](std::span<const T> grad) {
            std::vector<T> gmat(grad.size());
            for (std::size_t f = 0; f < g.filters; ++f)
                for (std::size_t b = 0; b < g.batch; ++b)
                    std::copy_n(grad.data() + (b * g.filters + f) * g.pixels(), g.pixels(),
                                gmat.data() + (f * g.batch + b) * g.pixels());
            detail::cmap<T> G(gmat.data(), nf, ncols);
            if (auto gk = detail::grad_sink(kernel); !gk.empty())
                detail::mmap<T>(gk.data(), nf, patch).noalias() += G * detail::cmap<T>(cols.data(), patch, ncols).transpose();
            if (auto gx = detail::grad_sink(x); !gx.empty()) {
                std::vector<T> gcols(cols.size());
                detail::mmap<T>(gcols.data(), patch, ncols).noalias() =
                    detail::cmap<T>(kernel.data().data(), nf, patch).transpose() * G;
                detail::col2im(gcols.data(), g, gx.data());
            }
        });
}

// Non-overlapping max pooling with a square window; trailing rows/columns that do not
// fill a window are dropped.
template <class T>
basic_tensor<T> maxpool2d(const basic_tensor<T>& x, std::size_t window = 2) {
    if (x.rank() != 4) throw dimension_error("maxpool2d: expected [B,C,H,W], got " + shape_str(x.shape()));
    if (window == 0 || x.dim(2) < window || x.dim(3) < window) throw dimension_error("maxpool2d: window does not fit");
    const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto oh = H / window, ow = W / window;
    std::vector<T> out(B * C * oh * ow);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* plane = x.data().data() + bc * H * W;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t di = 0; di < window; ++di)
                    for (std::size_t dj = 0; dj < window; ++dj) {
                        const auto idx = (i * window + di) * W + (j * window + dj);
                        if (plane[idx] > best) {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                const auto o = (bc * oh + i) * ow + j;
                out[o] = best;
                argmax[o] = bc * H * W + best_idx;
            }
    }
    return detail::record<T>("maxpool2d", {B, C, oh, ow}, std::move(out), {&x},
                             [x, argmax = std::move(argmax)](std::span<const T> g) {
                                 auto s = detail::grad_sink(x);
                                 for (std::size_t o = 0; o < g.size(); ++o) s[argmax[o]] += g[o];
                             });
}

}  // namespace quantact
