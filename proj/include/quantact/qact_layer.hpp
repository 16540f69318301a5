#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "quantact/qact.hpp"
#include "quantact/tape.hpp"

namespace quantact {

enum class context_layout { dense, conv };

// Which values form one neuron's context: a feature column over the batch for dense
// [B, N] input, or a channel over batch and spatial positions for conv [B, C, H, W].
struct context_shape {
    context_layout layout = context_layout::dense;
    std::size_t batch = 0, channels = 0, spatial = 1;

    static context_shape of(const shape_t& s, context_layout layout) {
        if (layout == context_layout::dense && s.size() != 2)
            throw dimension_error("qact: dense layout expects [B, N], got " + shape_str(s));
        if (layout == context_layout::conv && s.size() != 4)
            throw dimension_error("qact: conv layout expects [B, C, H, W], got " + shape_str(s));
        return {layout, s[0], s[1], layout == context_layout::conv ? s[2] * s[3] : 1};
    }

    std::size_t context_size() const noexcept { return batch * spatial; }
    std::size_t index(std::size_t b, std::size_t ch, std::size_t pos) const noexcept {
        return (b * channels + ch) * spatial + pos;
    }
};

// Quantile activation over tensors. Each call to operator() records one tape node;
// its backward draws the KDE sample of context k from a stream keyed by
// (seed, layer_index, k, call number), so training runs are reproducible.
template <class T>
class qact_layer {
public:
    explicit qact_layer(qact_config cfg = {}, std::uint64_t layer_index = 0)
        : cfg_(cfg), layer_index_(layer_index), calls_(std::make_shared<std::uint64_t>(0)) {
        cfg_.validate();
    }

    const qact_config& config() const noexcept { return cfg_; }
    std::uint64_t layer_index() const noexcept { return layer_index_; }

    basic_tensor<T> operator()(const basic_tensor<T>& x, context_layout layout) const {
        const auto shape = context_shape::of(x.shape(), layout);
        const std::uint64_t call = (*calls_)++;
        auto op = register_custom_node<T, std::vector<qact_context>>(
            "qact",
            [cfg = cfg_, shape](std::span<const basic_tensor<T>> in) {
                const auto& xv = in[0];
                custom_forward_result<T, std::vector<qact_context>> r;
                r.shape = xv.shape();
                r.values.resize(xv.numel());
                r.ctx.reserve(shape.channels);
                std::vector<double> z(shape.context_size());
                for (std::size_t ch = 0; ch < shape.channels; ++ch) {
                    gather(xv.data(), shape, ch, z);
                    auto res = qact_forward(z, cfg);
                    scatter(res.activations, shape, ch, std::span<T>(r.values));
                    r.ctx.push_back(std::move(res.ctx));
                }
                return r;
            },
            [cfg = cfg_, shape, layer = layer_index_, call](std::span<const T> grad_out, std::vector<qact_context>& ctxs) {
                std::vector<std::vector<T>> grads(1, std::vector<T>(grad_out.size()));
                std::vector<double> g(shape.context_size());
                for (std::size_t ch = 0; ch < shape.channels; ++ch) {
                    gather(grad_out, shape, ch, g);
                    auto rng = context_stream(cfg.rng_seed, layer, ch, call);
                    const auto gi = qact_backward(g, ctxs[ch], cfg, rng);
                    scatter(gi, shape, ch, std::span<T>(grads[0]));
                }
                return grads;
            });
        return op({x});
    }

private:
    static void gather(std::span<const T> src, const context_shape& s, std::size_t ch, std::vector<double>& dst) {
        std::size_t k = 0;
        for (std::size_t b = 0; b < s.batch; ++b)
            for (std::size_t p = 0; p < s.spatial; ++p) dst[k++] = static_cast<double>(src[s.index(b, ch, p)]);
    }

    static void scatter(std::span<const double> src, const context_shape& s, std::size_t ch, std::span<T> dst) {
        std::size_t k = 0;
        for (std::size_t b = 0; b < s.batch; ++b)
            for (std::size_t p = 0; p < s.spatial; ++p) dst[s.index(b, ch, p)] = static_cast<T>(src[k++]);
    }

    qact_config cfg_;
    std::uint64_t layer_index_;
    std::shared_ptr<std::uint64_t> calls_;
};

}  // namespace quantact
