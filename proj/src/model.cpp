#include "quantact/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "quantact/conv.hpp"
#include "quantact/errors.hpp"
#include "quantact/ops.hpp"

namespace quantact {

model_spec model_spec::toy_mlp(activation_spec act, std::vector<std::size_t> widths, std::size_t embed_dim) {
    model_spec s;
    s.arch = architecture::toy_mlp;
    s.widths = std::move(widths);
    s.activation = act;
    s.embed_dim = embed_dim;
    s.num_classes = 2;
    return s;
}

model_spec model_spec::lenet_plus(activation_spec act, std::vector<std::size_t> widths, std::size_t embed_dim,
                                  std::size_t num_classes) {
    model_spec s;
    s.arch = architecture::lenet_plus;
    s.widths = std::move(widths);
    s.activation = act;
    s.embed_dim = embed_dim;
    s.num_classes = num_classes;
    return s;
}

std::string to_string(activation_kind k) {
    switch (k) {
        case activation_kind::relu: return "relu";
        case activation_kind::prelu: return "prelu";
        case activation_kind::selu: return "selu";
        case activation_kind::qact: return "qact";
    }
    return "?";
}

activation_kind parse_activation(const std::string& name) {
    if (name == "relu") return activation_kind::relu;
    if (name == "prelu") return activation_kind::prelu;
    if (name == "selu") return activation_kind::selu;
    if (name == "qact") return activation_kind::qact;
    throw config_error("unknown activation '" + name + "' (expected relu, prelu, selu or qact)");
}

std::string to_string(architecture a) { return a == architecture::toy_mlp ? "toy_mlp" : "lenet_plus"; }

architecture parse_architecture(const std::string& name) {
    if (name == "toy_mlp") return architecture::toy_mlp;
    if (name == "lenet_plus") return architecture::lenet_plus;
    throw config_error("unknown architecture '" + name + "' (expected toy_mlp or lenet_plus)");
}

activation_site::activation_site(const activation_spec& spec, std::size_t channels, std::uint64_t layer_index,
                                 std::uint64_t seed)
    : kind_(spec.kind) {
    if (kind_ == activation_kind::prelu) prelu_alpha_ = tensor::full({channels}, spec.prelu_init, true);
    if (kind_ != activation_kind::qact) return;
    auto make_bn = [channels] {
        return std::make_unique<bn_block>(
            bn_block{tensor::full({channels}, 1.0f, true), tensor::zeros({channels}, true), batchnorm_state(channels)});
    };
    if (spec.sandwich == sandwich_mode::full) before_ = make_bn();
    if (spec.sandwich != sandwich_mode::none) after_ = make_bn();
    auto cfg = spec.qact;
    cfg.rng_seed = seed;
    qact_ = std::make_unique<qact_layer<float>>(cfg, layer_index);
}

tensor activation_site::operator()(const tensor& x, context_layout layout, run_mode mode) {
    switch (kind_) {
        case activation_kind::relu: return relu(x);
        case activation_kind::prelu: return prelu(x, prelu_alpha_);
        case activation_kind::selu: return selu(x);
        case activation_kind::qact: break;
    }
    tensor h = x;
    if (before_) h = batchnorm(h, before_->gamma, before_->beta, before_->state, mode);
    h = (*qact_)(h, layout);
    if (after_) h = batchnorm(h, after_->gamma, after_->beta, after_->state, mode);
    return h;
}

void activation_site::collect(const std::string& prefix, std::vector<named_parameter>& out) const {
    if (kind_ == activation_kind::prelu) out.push_back({prefix + ".alpha", prelu_alpha_});
    if (before_) {
        out.push_back({prefix + ".bn_in.gamma", before_->gamma});
        out.push_back({prefix + ".bn_in.beta", before_->beta});
    }
    if (after_) {
        out.push_back({prefix + ".bn_out.gamma", after_->gamma});
        out.push_back({prefix + ".bn_out.beta", after_->beta});
    }
}

void activation_site::collect_state(const std::string& prefix, std::vector<checkpoint_entry>& out) const {
    auto add = [&](const std::string& name, const bn_block& bn) {
        const shape_t s{bn.state.running_mean.size()};
        out.push_back({prefix + name + ".running_mean", s, bn.state.running_mean});
        out.push_back({prefix + name + ".running_var", s, bn.state.running_var});
    };
    if (before_) add(".bn_in", *before_);
    if (after_) add(".bn_out", *after_);
}

namespace {

const checkpoint_entry& find_entry(const std::vector<checkpoint_entry>& entries, const std::string& name) {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw format_error("checkpoint has no entry '" + name + "'", 0);
}

template <class Dst>
void copy_values(const checkpoint_entry& e, Dst& dst) {
    std::visit(
        [&](const auto& v) {
            if (v.size() != dst.size())
                throw format_error("checkpoint entry '" + e.name + "' has " + std::to_string(v.size()) +
                                       " values, expected " + std::to_string(dst.size()),
                                   0);
            for (std::size_t i = 0; i < v.size(); ++i) dst[i] = static_cast<std::decay_t<decltype(dst[0])>>(v[i]);
        },
        e.values);
}

}  // namespace

void activation_site::restore_state(const std::string& prefix, const std::vector<checkpoint_entry>& entries) {
    auto load = [&](const std::string& name, bn_block& bn) {
        copy_values(find_entry(entries, prefix + name + ".running_mean"), bn.state.running_mean);
        copy_values(find_entry(entries, prefix + name + ".running_var"), bn.state.running_var);
    };
    if (before_) load(".bn_in", *before_);
    if (after_) load(".bn_out", *after_);
}

namespace {

// He-style initialization for rectifier-like and quantile activations, LeCun for SELU.
tensor init_weight(shape_t shape, std::size_t fan_in, activation_kind kind, std::mt19937_64& rng) {
    const double gain = kind == activation_kind::selu ? 1.0 : 2.0;
    return tensor::randn(std::move(shape), rng, static_cast<float>(std::sqrt(gain / static_cast<double>(fan_in))), true);
}

}  // namespace

model::model(model_spec spec) : spec_(std::move(spec)) {
    std::mt19937_64 rng(spec_.seed);
    const auto kind = spec_.activation.kind;
    std::uint64_t layer = 0;
    auto add_site = [&](std::size_t channels) { sites_.emplace_back(spec_.activation, channels, layer++, spec_.seed); };
    auto dense = [&](std::size_t in, std::size_t out) {
        return dense_layer{init_weight({in, out}, in, kind, rng), tensor::zeros({out}, true)};
    };

    if (spec_.embed_dim == 0 || spec_.num_classes < 2) throw config_error("model: embed_dim must be >= 1 and num_classes >= 2");
    std::size_t features = 0;
    if (spec_.arch == architecture::toy_mlp) {
        if (spec_.widths.empty()) throw config_error("toy_mlp: at least one hidden width is required");
        features = 2;
        for (std::size_t w : spec_.widths) {
            hidden_.push_back(dense(features, w));
            add_site(w);
            features = w;
        }
    } else if (spec_.arch == architecture::lenet_plus) {
        if (spec_.widths.size() != 3) throw config_error("lenet_plus: widths must be {conv1, conv2, dense}");
        std::size_t channels = 1, side = 28;
        for (std::size_t k = 0; k < 2; ++k) {
            const std::size_t out = spec_.widths[k];
            convs_.push_back({init_weight({out, channels, 5, 5}, channels * 25, kind, rng), tensor::zeros({out}, true)});
            add_site(out);
            channels = out;
            side = (side - 4) / 2;
        }
        features = channels * side * side;
        hidden_.push_back(dense(features, spec_.widths[2]));
        add_site(spec_.widths[2]);
        features = spec_.widths[2];
    } else {
        throw config_error("unknown architecture");
    }
    embed_ = dense(features, spec_.embed_dim);
    head_ = {init_weight({spec_.embed_dim, spec_.num_classes}, spec_.embed_dim, activation_kind::selu, rng),
             tensor::zeros({spec_.num_classes}, true)};
}

model_output model::forward(const tensor& batch, run_mode mode) {
    tensor h = batch;
    std::size_t site = 0;
    if (spec_.arch == architecture::lenet_plus) {
        if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != 28 || batch.dim(3) != 28)
            throw dimension_error("lenet_plus expects [B, 1, 28, 28], got " + shape_str(batch.shape()));
        for (const auto& c : convs_) {
            h = add_channel_bias(conv2d(h, c.kernel), c.bias);
            h = sites_[site++](h, context_layout::conv, mode);
            h = maxpool2d(h, 2);
        }
        h = flatten(h);
    } else if (batch.rank() != 2 || batch.dim(1) != 2) {
        throw dimension_error("toy_mlp expects [B, 2], got " + shape_str(batch.shape()));
    }
    for (const auto& d : hidden_) {
        h = add_channel_bias(matmul(h, d.weight), d.bias);
        h = sites_[site++](h, context_layout::dense, mode);
    }
    model_output out;
    out.embedding = add_channel_bias(matmul(h, embed_.weight), embed_.bias);
    out.logits = add_channel_bias(matmul(out.embedding, head_.weight), head_.bias);
    return out;
}

std::vector<named_parameter> model::named_parameters() const {
    std::vector<named_parameter> out;
    std::size_t site = 0;
    for (std::size_t k = 0; k < convs_.size(); ++k) {
        const auto p = "conv" + std::to_string(k);
        out.push_back({p + ".kernel", convs_[k].kernel});
        out.push_back({p + ".bias", convs_[k].bias});
        sites_[site++].collect(p + ".act", out);
    }
    for (std::size_t k = 0; k < hidden_.size(); ++k) {
        const auto p = "dense" + std::to_string(k);
        out.push_back({p + ".weight", hidden_[k].weight});
        out.push_back({p + ".bias", hidden_[k].bias});
        sites_[site++].collect(p + ".act", out);
    }
    out.push_back({"embed.weight", embed_.weight});
    out.push_back({"embed.bias", embed_.bias});
    out.push_back({"head.weight", head_.weight});
    out.push_back({"head.bias", head_.bias});
    return out;
}

std::vector<tensor> model::parameters() const {
    std::vector<tensor> out;
    for (auto& p : named_parameters()) out.push_back(p.value);
    return out;
}

std::size_t model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named_parameters()) n += p.value.numel();
    return n;
}

std::vector<checkpoint_entry> model::state() const {
    std::vector<checkpoint_entry> out;
    for (const auto& p : named_parameters())
        out.push_back({p.name, p.value.shape(), std::vector<float>(p.value.data().begin(), p.value.data().end())});
    std::size_t site = 0;
    for (std::size_t k = 0; k < convs_.size(); ++k) sites_[site++].collect_state("conv" + std::to_string(k) + ".act", out);
    for (std::size_t k = 0; k < hidden_.size(); ++k) sites_[site++].collect_state("dense" + std::to_string(k) + ".act", out);
    return out;
}

void model::load_state(const std::vector<checkpoint_entry>& entries) {
    for (auto& p : named_parameters()) {
        const auto& e = find_entry(entries, p.name);
        if (e.shape != p.value.shape())
            throw format_error("checkpoint entry '" + p.name + "' has shape " + shape_str(e.shape) + ", expected " +
                                   shape_str(p.value.shape()),
                               0);
        auto data = p.value.data();
        copy_values(e, data);
    }
    std::size_t site = 0;
    for (std::size_t k = 0; k < convs_.size(); ++k) sites_[site++].restore_state("conv" + std::to_string(k) + ".act", entries);
    for (std::size_t k = 0; k < hidden_.size(); ++k) sites_[site++].restore_state("dense" + std::to_string(k) + ".act", entries);
}

model_output forward_with_context(model& m, const tensor& batch, run_mode mode) {
    if (batch.rank() == 0 || batch.dim(0) == 0) throw std::invalid_argument("forward_with_context: empty batch");
    return m.forward(batch, mode);
}

model build_model(const model_spec& spec) { return model(spec); }

}  // namespace quantact
