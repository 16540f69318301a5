#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "quantact/checkpoint.hpp"
#include "quantact/qact.hpp"
#include "quantact/qact_layer.hpp"
#include "quantact/tensor.hpp"

namespace quantact {

struct quantile_head_config {
    double positive_weight = 0.9;  // side weight of non-negative logits; the BCE uses the same pair
    std::size_t n_tau = 100;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 30;
    std::size_t patience = 3;  // epochs without validation improvement before stopping
    std::size_t warm_start_epochs = 5;  // one-vs-rest sigmoid BCE on the logits before the quantile phase
    double warm_start_lr = 1e-2;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

// One-vs-rest head: a linear map to class logits followed by a per-class quantile
// activation whose context is the batch. Outputs lie in [0, 1] and are not normalized.
class quantile_head {
public:
    quantile_head(std::size_t embed_dim, std::size_t num_classes, quantile_head_config cfg = {});

    const quantile_head_config& config() const noexcept { return cfg_; }
    bool trained() const noexcept { return trained_; }
    void mark_trained() noexcept { trained_ = true; }
    std::size_t num_classes() const noexcept { return weight_.dim(1); }

    tensor logits(const tensor& batch) const;
    // Differentiable probabilities; usable before training (fit_head relies on it).
    tensor forward(const tensor& batch) const;

    std::vector<tensor> parameters() const { return {weight_, bias_}; }
    std::vector<checkpoint_entry> state() const;
    void load_state(const std::vector<checkpoint_entry>& entries);

private:
    quantile_head_config cfg_;
    tensor weight_, bias_;
    qact_layer<float> act_;
    bool trained_ = false;
};

struct head_fit_log {
    std::vector<double> train_loss;
    std::vector<double> validation_accuracy;
};

// Trains with Adam: first one-vs-rest sigmoid BCE on the raw logits for
// warm_start_epochs, then the weighted one-vs-rest BCE of the quantile outputs. When a
// validation set is given, keeps the best state among the end of the warm start and
// every quantile epoch, stopping after `patience` epochs without improvement.
quantile_head fit_head(const tensor& embeddings, std::span<const std::size_t> labels, std::size_t num_classes,
                       const quantile_head_config& cfg = {}, const tensor* val_embeddings = nullptr,
                       std::span<const std::size_t> val_labels = {}, head_fit_log* log = nullptr);

// Probabilities for one inference batch, which is also the quantile context.
tensor predict_proba(const quantile_head& head, const tensor& batch);

// Runs predict_proba over consecutive batches of `batch_size` rows (the last one may be shorter).
tensor predict_proba_batched(const quantile_head& head, const tensor& embeddings, std::size_t batch_size);

// Assignment rule 1 iff w.x exceeds the median of w over the reference batch.
struct linear_quantile_rule {
    std::vector<double> w;
    double b = 0;
    std::vector<std::vector<double>> reference;
};

int linear_rule_assign(const linear_quantile_rule& rule, std::span<const double> x);

// The plain rule I[w.x + b >= 0].
int plain_linear_assign(std::span<const double> w, double b, std::span<const double> x);

}  // namespace quantact
