#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "quantact/datasets.hpp"
#include "quantact/losses.hpp"
#include "quantact/metrics.hpp"
#include "quantact/model.hpp"
#include "quantact/optim.hpp"
#include "quantact/quantile_head.hpp"

namespace quantact {

// Toy experiment: two Gaussian blobs whose centres are resampled for every batch.
// One model per activation is trained on the streamed batches; each evaluation task
// draws its own centres and is scored with its batch as the context.
struct toy_config {
    activation_kind activation = activation_kind::qact;
    sandwich_mode sandwich = sandwich_mode::none;
    std::size_t train_steps = 4000;
    std::size_t batch_size = 256;
    double lr = 3e-3;
    std::size_t tasks = 200;
    std::size_t eval_batch = 512;
    bool resample_tasks = true;  // false: every batch and every evaluation uses one fixed task
    double sigma = 0.1;
    std::uint64_t seed = 1;
};

struct toy_result {
    std::vector<double> task_accuracy;
    double mean = 0;
    double median = 0;
    double final_loss = 0;
};

toy_result run_toy(const toy_config& cfg);

enum class loss_kind { cross_entropy, triplet, watershed };

std::string to_string(loss_kind k);
loss_kind parse_loss(const std::string& name);

struct train_config {
    activation_spec activation{};
    loss_kind loss = loss_kind::cross_entropy;
    triplet_config triplet{};
    std::size_t batch_size = 128;
    double lr = 1e-3;
    std::size_t max_epochs = 20;
    std::size_t steps_per_epoch = 0;  // 0: one pass over the training split
    std::size_t train_limit = 0;      // 0: the whole training split
    std::size_t val_limit = 0;        // 0: the whole validation split
    double val_fraction = 0.2;
    std::uint64_t split_seed = 42;
    plateau_config plateau{};
    double early_stop_delta = 0.001;
    int early_stop_patience = 3;
    std::size_t eval_batch = 1024;
    std::size_t centroid_reference = 2000;  // training embeddings behind the metric-loss validation
    std::uint64_t seed = 0;
};

struct data_split {
    std::vector<std::size_t> train, val;
};

// Seeded shuffle of 0..n-1 cut into train and validation parts.
data_split split_indices(std::size_t n, double val_fraction, std::uint64_t seed);

struct epoch_record {
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_accuracy = 0;
    double lr = 0;
    double seconds = 0;
};

struct training_run {
    model net;
    std::vector<epoch_record> log;
    std::size_t best_epoch = 0;
};

// Adam with plateau schedule and early stopping on validation accuracy; returns the
// best-validation state. Validation uses the logits for cross-entropy and the nearest
// class centroid of training embeddings for the metric losses. Throws
// divergence_error on a non-finite loss.
training_run train_model(const image_dataset& train, const train_config& cfg,
                         const std::function<void(const epoch_record&)>& on_epoch = {});

std::string epoch_log_csv(const std::vector<epoch_record>& log);

// Forward pass in eval mode over consecutive context batches.
model_output embed_dataset(model& net, const image_dataset& data, std::size_t eval_batch);

// Multinomial logistic regression on embeddings.
struct logistic_head {
    tensor weight, bias;
};

logistic_head fit_logistic_head(const tensor& embeddings, std::span<const std::size_t> labels, std::size_t num_classes,
                                std::size_t epochs = 20, double lr = 1e-2, std::uint64_t seed = 0);
tensor logistic_proba(const logistic_head& head, const tensor& embeddings);
tensor softmax_rows(const tensor& logits);

struct eval_config {
    std::size_t eval_batch = 1024;
    std::vector<distortion_kind> distortions = all_distortions();
    std::vector<int> severities{1, 2, 3, 4, 5};
    std::size_t test_limit = 0;        // 0: whole test set
    std::size_t head_train_limit = 10000;
    std::size_t head_val_limit = 2000;
    std::size_t map_k = 10;
    std::size_t map_limit = 2000;      // queries per MAP@K evaluation
    std::vector<std::size_t> batch_sweep{64, 256, 1024};
    quantile_head_config quantile_head{};
    std::size_t logistic_epochs = 20;
    std::uint64_t distortion_seed = 7;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> mnistc_root;
    double val_fraction = 0.2;
    std::uint64_t split_seed = 42;
};

// Fits the head (quantile head for qact, logistic head otherwise) on the training
// embedding and scores clean data plus every distortion and severity.
metrics_report evaluate_model(model& net, const mnist_data& data, const eval_config& cfg);

}  // namespace quantact
