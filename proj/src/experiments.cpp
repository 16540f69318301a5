#include "quantact/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "quantact/errors.hpp"
#include "quantact/ops.hpp"
#include "quantact/tape.hpp"

namespace quantact {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

double batch_accuracy(const tensor& logits, std::span<const std::size_t> labels) {
    const std::vector<double> d(logits.data().begin(), logits.data().end());
    return accuracy(argmax_rows(matrix_view(d, logits.dim(0), logits.dim(1))), labels);
}

std::vector<std::size_t> labels_of(const image_dataset& d, std::span<const std::size_t> idx) {
    std::vector<std::size_t> y;
    y.reserve(idx.size());
    for (auto i : idx) y.push_back(d.labels[i]);
    return y;
}

std::vector<std::size_t> first(const std::vector<std::size_t>& v, std::size_t limit) {
    if (limit == 0 || limit >= v.size()) return v;
    return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(limit)};
}

// Nearest class centroid of the reference embedding.
double centroid_accuracy(const tensor& ref, std::span<const std::size_t> ref_labels, const tensor& emb,
                         std::span<const std::size_t> labels, std::size_t classes) {
    const std::size_t d = ref.dim(1);
    std::vector<double> centroid(classes * d, 0.0), count(classes, 0.0);
    for (std::size_t i = 0; i < ref_labels.size(); ++i) {
        count[ref_labels[i]] += 1;
        for (std::size_t k = 0; k < d; ++k) centroid[ref_labels[i] * d + k] += ref[i * d + k];
    }
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t k = 0; k < d; ++k) centroid[c * d + k] /= std::max(count[c], 1.0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t c = 0; c < classes; ++c) {
            if (count[c] == 0) continue;
            double s = 0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = emb[i * d + k] - centroid[c * d + k];
                s += diff * diff;
            }
            if (s < best_d) best_d = s, best = c;
        }
        correct += best == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

toy_result run_toy(const toy_config& cfg) {
    if (cfg.tasks == 0) throw config_error("toy: tasks must be positive");
    if (cfg.batch_size % 2 || cfg.eval_batch % 2) throw config_error("toy: batch sizes must be even");

    activation_spec act;
    act.kind = cfg.activation;
    act.sandwich = cfg.sandwich;
    auto spec = model_spec::toy_mlp(act);
    spec.seed = cfg.seed;
    model net(spec);
    optimizer<float> opt(net.parameters(), {optimizer_kind::adam, cfg.lr});

    auto data_rng = stream(cfg.seed, 1);
    const auto fixed_task = sample_task(data_rng, cfg.sigma);
    toy_result r;
    for (std::size_t step = 0; step < cfg.train_steps; ++step) {
        const auto task = cfg.resample_tasks ? sample_task(data_rng, cfg.sigma) : fixed_task;
        const auto b = sample_toy_batch(task, cfg.batch_size, data_rng);
        opt.zero_grad();
        auto loss = cross_entropy(net.forward(b.inputs, run_mode::train).logits, b.labels);
        const double l = loss.item();
        if (!std::isfinite(l)) throw divergence_error("toy: non-finite loss at step " + std::to_string(step));
        r.final_loss = step == 0 ? l : 0.98 * r.final_loss + 0.02 * l;
        backward(loss);
        opt.step();
    }

    for (std::size_t t = 0; t < cfg.tasks; ++t) {
        auto rng = stream(cfg.seed, 2, t);
        const auto task = cfg.resample_tasks ? sample_task(rng, cfg.sigma) : fixed_task;
        const auto b = sample_toy_batch(task, cfg.eval_batch, rng);
        r.task_accuracy.push_back(batch_accuracy(net.forward(b.inputs, run_mode::eval).logits, b.labels));
    }
    r.mean = std::accumulate(r.task_accuracy.begin(), r.task_accuracy.end(), 0.0) / static_cast<double>(cfg.tasks);
    auto sorted = r.task_accuracy;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    r.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return r;
}

std::string to_string(loss_kind k) {
    switch (k) {
        case loss_kind::cross_entropy: return "ce";
        case loss_kind::triplet: return "triplet";
        case loss_kind::watershed: return "watershed";
    }
    return "?";
}

loss_kind parse_loss(const std::string& name) {
    if (name == "ce" || name == "cross_entropy") return loss_kind::cross_entropy;
    if (name == "triplet") return loss_kind::triplet;
    if (name == "watershed") return loss_kind::watershed;
    throw config_error("unknown loss '" + name + "' (expected ce, triplet or watershed)");
}

data_split split_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0 && val_fraction < 1)) throw config_error("validation fraction must lie in (0, 1)");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::round(val_fraction * static_cast<double>(n)));
    data_split s;
    s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    return s;
}

model_output embed_dataset(model& net, const image_dataset& data, std::size_t eval_batch) {
    if (eval_batch == 0) throw config_error("eval batch must be positive");
    std::vector<float> emb, logits;
    std::size_t emb_dim = 0, classes = 0;
    for (std::size_t f = 0; f < data.size(); f += eval_batch) {
        const auto out = net.forward(data.batch(f, std::min(eval_batch, data.size() - f)), run_mode::eval);
        emb_dim = out.embedding.dim(1);
        classes = out.logits.dim(1);
        emb.insert(emb.end(), out.embedding.data().begin(), out.embedding.data().end());
        logits.insert(logits.end(), out.logits.data().begin(), out.logits.data().end());
    }
    return {tensor({data.size(), emb_dim}, std::move(emb)), tensor({data.size(), classes}, std::move(logits))};
}

training_run train_model(const image_dataset& train, const train_config& cfg,
                         const std::function<void(const epoch_record&)>& on_epoch) {
    if (cfg.batch_size < 2) throw config_error("train: batch size must be at least 2");
    if (cfg.max_epochs == 0) throw config_error("train: max_epochs must be positive");
    const auto split = split_indices(train.size(), cfg.val_fraction, cfg.split_seed);
    const auto train_idx = first(split.train, cfg.train_limit);
    const auto val_idx = first(split.val, cfg.val_limit);
    const auto val_set = train.subset(val_idx);
    const auto ref_set = train.subset(first(train_idx, cfg.centroid_reference));
    if (train_idx.size() < cfg.batch_size) throw config_error("train: fewer training images than one batch");

    auto spec = model_spec::lenet_plus(cfg.activation);
    spec.seed = cfg.seed;
    training_run run{model(spec), {}, 0};
    optimizer<float> opt(run.net.parameters(), {optimizer_kind::adam, cfg.lr});
    plateau_scheduler plateau(cfg.plateau);
    early_stopping stopper(cfg.early_stop_delta, cfg.early_stop_patience);
    auto rng = stream(cfg.seed, 3);
    auto loss_rng = stream(cfg.seed, 4);

    const std::size_t per_epoch = cfg.steps_per_epoch ? cfg.steps_per_epoch : train_idx.size() / cfg.batch_size;
    std::vector<std::size_t> order = train_idx;
    std::size_t cursor = order.size();
    double best_val = -1;
    std::vector<checkpoint_entry> best_state;
    const auto t0 = std::chrono::steady_clock::now();

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double loss_sum = 0;
        for (std::size_t step = 0; step < per_epoch; ++step) {
            if (cursor + cfg.batch_size > order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const std::span<const std::size_t> idx(order.data() + cursor, cfg.batch_size);
            cursor += cfg.batch_size;
            const auto y = labels_of(train, idx);
            opt.zero_grad();
            const auto out = run.net.forward(train.gather(idx), run_mode::train);
            tensor loss;
            switch (cfg.loss) {
                case loss_kind::cross_entropy: loss = cross_entropy(out.logits, y); break;
                case loss_kind::triplet: loss = triplet_loss(out.embedding, y, cfg.triplet); break;
                case loss_kind::watershed: loss = watershed_loss(out.embedding, y, loss_rng); break;
            }
            const double l = loss.item();
            if (!std::isfinite(l))
                throw divergence_error("train: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                       std::to_string(step));
            loss_sum += l;
            backward(loss);
            opt.step();
        }

        const auto val_out = embed_dataset(run.net, val_set, cfg.eval_batch);
        double val_acc;
        if (cfg.loss == loss_kind::cross_entropy) {
            val_acc = batch_accuracy(val_out.logits, val_set.labels);
        } else {
            const auto ref_out = embed_dataset(run.net, ref_set, cfg.eval_batch);
            val_acc = centroid_accuracy(ref_out.embedding, ref_set.labels, val_out.embedding, val_set.labels,
                                        spec.num_classes);
        }
        epoch_record rec{epoch, loss_sum / static_cast<double>(per_epoch), val_acc, opt.lr(),
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
        run.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (val_acc > best_val) {
            best_val = val_acc;
            best_state = run.net.state();
            run.best_epoch = epoch;
        }
        opt.set_lr(plateau.observe(val_acc, opt.lr()));
        if (stopper.should_stop(val_acc)) break;
    }
    run.net.load_state(best_state);
    return run;
}

std::string epoch_log_csv(const std::vector<epoch_record>& log) {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,train_loss,val_accuracy,lr,seconds\n";
    for (const auto& r : log) os << r.epoch << ',' << r.train_loss << ',' << r.val_accuracy << ',' << r.lr << ',' << r.seconds << '\n';
    return os.str();
}

tensor softmax_rows(const tensor& logits) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<float> out(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        float mx = logits[i * k];
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits[i * k + c]);
        double s = 0;
        for (std::size_t c = 0; c < k; ++c) s += std::exp(static_cast<double>(logits[i * k + c] - mx));
        for (std::size_t c = 0; c < k; ++c)
            out[i * k + c] = static_cast<float>(std::exp(static_cast<double>(logits[i * k + c] - mx)) / s);
    }
    return tensor({n, k}, std::move(out));
}

logistic_head fit_logistic_head(const tensor& embeddings, std::span<const std::size_t> labels, std::size_t num_classes,
                                std::size_t epochs, double lr, std::uint64_t seed) {
    const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
    if (labels.size() != n) throw dimension_error("fit_logistic_head: label count mismatch");
    auto rng = stream(seed, 5);
    logistic_head h{tensor::randn({d, num_classes}, rng, static_cast<float>(1.0 / std::sqrt(static_cast<double>(d)))),
                    tensor::zeros({num_classes})};
    h.weight.set_requires_grad(true);
    h.bias.set_requires_grad(true);
    optimizer<float> opt({h.weight, h.bias}, {optimizer_kind::adam, lr});
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t batch = 256;
    for (std::size_t e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t f = 0; f < n; f += batch) {
            const std::size_t c = std::min(batch, n - f);
            std::vector<float> xb(c * d);
            std::vector<std::size_t> yb(c);
            for (std::size_t i = 0; i < c; ++i) {
                std::copy_n(embeddings.data().begin() + static_cast<std::ptrdiff_t>(order[f + i] * d), d,
                            xb.begin() + static_cast<std::ptrdiff_t>(i * d));
                yb[i] = labels[order[f + i]];
            }
            opt.zero_grad();
            auto loss = cross_entropy(add_channel_bias(matmul(tensor({c, d}, std::move(xb)), h.weight), h.bias), yb);
            backward(loss);
            opt.step();
        }
    }
    h.weight.set_requires_grad(false);
    h.bias.set_requires_grad(false);
    return h;
}

tensor logistic_proba(const logistic_head& head, const tensor& embeddings) {
    return softmax_rows(add_channel_bias(matmul(embeddings, head.weight), head.bias));
}

namespace {

struct head_pipeline {
    bool quantile = false;
    std::optional<quantile_head> qhead;
    logistic_head lhead;

    tensor proba(const tensor& emb, std::size_t eval_batch) const {
        return quantile ? predict_proba_batched(*qhead, emb, eval_batch) : logistic_proba(lhead, emb);
    }
};

severity_metrics score(const std::string& dataset, int severity, const model_output& out, const head_pipeline& head,
                       std::span<const std::size_t> labels, const eval_config& cfg) {
    const auto p = head.proba(out.embedding, cfg.eval_batch);
    const std::vector<double> pd(p.data().begin(), p.data().end());
    const matrix_view probs(pd, p.dim(0), p.dim(1));
    severity_metrics m;
    m.dataset = dataset;
    m.severity = severity;
    m.accuracy = accuracy(argmax_rows(probs), labels);
    m.ece_top_label = ece(probs, labels, {10, binning::equal_mass, calibration_variant::top_label});
    m.ece_marginal = ece(probs, labels, {10, binning::equal_mass, calibration_variant::marginal});
    const std::size_t nq = cfg.map_limit ? std::min(cfg.map_limit, labels.size()) : labels.size();
    const std::vector<double> ed(out.embedding.data().begin(),
                                 out.embedding.data().begin() + static_cast<std::ptrdiff_t>(nq * out.embedding.dim(1)));
    m.map_at_k = map_at_k(matrix_view(ed, nq, out.embedding.dim(1)), labels.subspan(0, nq), cfg.map_k);
    return m;
}

}  // namespace

metrics_report evaluate_model(model& net, const mnist_data& data, const eval_config& cfg) {
    const bool is_qact = net.spec().activation.kind == activation_kind::qact;
    const std::size_t classes = net.spec().num_classes;
    const auto split = split_indices(data.train.size(), cfg.val_fraction, cfg.split_seed);
    const auto head_train = data.train.subset(first(split.train, cfg.head_train_limit));
    const auto head_val = data.train.subset(first(split.val, cfg.head_val_limit));
    const auto train_emb = embed_dataset(net, head_train, cfg.eval_batch).embedding;

    head_pipeline head;
    head.quantile = is_qact;
    if (is_qact) {
        auto hc = cfg.quantile_head;
        hc.seed = cfg.seed;
        const auto val_emb = embed_dataset(net, head_val, cfg.eval_batch).embedding;
        head.qhead = fit_head(train_emb, head_train.labels, classes, hc, &val_emb, head_val.labels);
    } else {
        head.lhead = fit_logistic_head(train_emb, head_train.labels, classes, cfg.logistic_epochs, 1e-2, cfg.seed);
    }

    metrics_report report;
    report.activation = to_string(net.spec().activation.kind);
    report.head = is_qact ? "quantile" : "logistic";
    report.seed = cfg.seed;
    report.eval_batch = cfg.eval_batch;
    report.map_k = cfg.map_k;

    std::vector<std::size_t> test_idx(cfg.test_limit ? std::min(cfg.test_limit, data.test.size()) : data.test.size());
    std::iota(test_idx.begin(), test_idx.end(), std::size_t{0});
    const auto test = data.test.subset(test_idx);
    report.rows.push_back(score("clean", 0, embed_dataset(net, test, cfg.eval_batch), head, test.labels, cfg));

    for (auto kind : cfg.distortions)
        for (int s : cfg.severities) {
            const auto d = apply_distortion(test, {kind, s}, cfg.distortion_seed);
            report.rows.push_back(score(to_string(kind), s, embed_dataset(net, d, cfg.eval_batch), head, d.labels, cfg));
        }

    if (is_qact && !cfg.batch_sweep.empty()) {
        std::vector<std::pair<std::string, image_dataset>> sets{{"clean", test}};
        if (!cfg.distortions.empty() && !cfg.severities.empty())
            sets.emplace_back(to_string(cfg.distortions.front()),
                              apply_distortion(test, {cfg.distortions.front(), cfg.severities.back()}, cfg.distortion_seed));
        for (const auto& [name, set] : sets)
            for (auto b : cfg.batch_sweep) {
                const auto out = embed_dataset(net, set, b);
                const auto p = predict_proba_batched(*head.qhead, out.embedding, b);
                report.batch_sweep.push_back(
                    {name, name == "clean" ? 0 : cfg.severities.back(), b, batch_accuracy(p, set.labels)});
            }
    }

    if (cfg.mnistc_root) {
        if (!std::filesystem::is_directory(*cfg.mnistc_root)) {
            report.gaps.push_back("mnistc: directory " + cfg.mnistc_root->string() + " not found");
        } else {
            for (const auto& name : mnistc_corruptions(*cfg.mnistc_root)) {
                try {
                    const auto d = load_mnistc(*cfg.mnistc_root, name);
                    report.rows.push_back(score("mnistc/" + name, 1, embed_dataset(net, d, cfg.eval_batch), head, d.labels, cfg));
                } catch (const std::exception& e) {
                    report.gaps.push_back("mnistc/" + name + ": " + e.what());
                }
            }
        }
    }
    return report;
}

}  // namespace quantact
