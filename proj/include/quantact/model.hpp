#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "quantact/batchnorm.hpp"
#include "quantact/checkpoint.hpp"
#include "quantact/qact.hpp"
#include "quantact/qact_layer.hpp"
#include "quantact/tensor.hpp"

namespace quantact {

enum class activation_kind { relu, prelu, selu, qact };

// Which BatchNorm layers surround each QAct site.
//   full:       BN -> QAct -> BN at every site
//   after_only: QAct -> BN at every site
//   none:       bare QAct
enum class sandwich_mode { full, after_only, none };

struct activation_spec {
    activation_kind kind = activation_kind::relu;
    qact_config qact{};
    sandwich_mode sandwich = sandwich_mode::full;
    float prelu_init = 0.25f;
};

enum class architecture { toy_mlp, lenet_plus };

struct model_spec {
    architecture arch = architecture::toy_mlp;
    // toy_mlp: hidden widths; lenet_plus: the two conv channel counts followed by the dense width.
    std::vector<std::size_t> widths{64, 64};
    activation_spec activation{};
    std::size_t embed_dim = 16;
    std::size_t num_classes = 2;
    std::uint64_t seed = 0;

    static model_spec toy_mlp(activation_spec act = {}, std::vector<std::size_t> widths = {64, 64},
                              std::size_t embed_dim = 16);
    static model_spec lenet_plus(activation_spec act = {}, std::vector<std::size_t> widths = {32, 64, 256},
                                 std::size_t embed_dim = 64, std::size_t num_classes = 10);
};

std::string to_string(activation_kind k);
activation_kind parse_activation(const std::string& name);
std::string to_string(architecture a);
architecture parse_architecture(const std::string& name);

struct model_output {
    tensor embedding;
    tensor logits;
};

struct named_parameter {
    std::string name;
    tensor value;
};

// An activation site: the nonlinearity and, for QAct, its BatchNorm sandwich.
class activation_site {
public:
    activation_site(const activation_spec& spec, std::size_t channels, std::uint64_t layer_index, std::uint64_t seed);

    tensor operator()(const tensor& x, context_layout layout, run_mode mode);

    void collect(const std::string& prefix, std::vector<named_parameter>& out) const;
    void collect_state(const std::string& prefix, std::vector<checkpoint_entry>& out) const;
    void restore_state(const std::string& prefix, const std::vector<checkpoint_entry>& entries);

private:
    struct bn_block {
        tensor gamma, beta;
        batchnorm_state state;
    };

    activation_kind kind_;
    tensor prelu_alpha_;
    std::unique_ptr<bn_block> before_, after_;
    std::unique_ptr<qact_layer<float>> qact_;
};

class model {
public:
    explicit model(model_spec spec);

    const model_spec& spec() const noexcept { return spec_; }

    // Inputs are [B, 2] for toy_mlp and [B, 1, 28, 28] for lenet_plus. In eval mode
    // BatchNorm uses running statistics while QAct still ranks within the live batch.
    model_output forward(const tensor& batch, run_mode mode);

    std::vector<named_parameter> named_parameters() const;
    std::vector<tensor> parameters() const;
    std::size_t parameter_count() const;

    // Parameters plus BatchNorm running statistics.
    std::vector<checkpoint_entry> state() const;
    void load_state(const std::vector<checkpoint_entry>& entries);

private:
    struct dense_layer {
        tensor weight, bias;
    };
    struct conv_layer {
        tensor kernel, bias;
    };

    model_spec spec_;
    std::vector<conv_layer> convs_;
    std::vector<dense_layer> hidden_;
    dense_layer embed_, head_;
    std::vector<activation_site> sites_;
};

// Validates the batch and runs model.forward.
model_output forward_with_context(model& m, const tensor& batch, run_mode mode);

model build_model(const model_spec& spec);

}  // namespace quantact
