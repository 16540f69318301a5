#include "quantact/quantile_head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "quantact/errors.hpp"
#include "quantact/losses.hpp"
#include "quantact/metrics.hpp"
#include "quantact/ops.hpp"
#include "quantact/optim.hpp"
#include "quantact/tape.hpp"

namespace quantact {

namespace {

constexpr std::uint64_t head_layer_index = 1u << 20;

qact_config head_qact(const quantile_head_config& cfg) {
    auto q = qact_config::classifier(cfg.positive_weight);
    q.n_tau = cfg.n_tau;
    q.rng_seed = cfg.seed;
    return q;
}

}  // namespace

quantile_head::quantile_head(std::size_t embed_dim, std::size_t num_classes, quantile_head_config cfg)
    : cfg_(cfg), act_(head_qact(cfg), head_layer_index) {
    if (!(cfg.positive_weight > 0 && cfg.positive_weight < 1))
        throw std::invalid_argument("quantile_head: positive weight must lie in (0, 1)");
    if (embed_dim == 0 || num_classes < 2) throw std::invalid_argument("quantile_head: need embed_dim >= 1 and >= 2 classes");
    std::mt19937_64 rng(cfg.seed);
    weight_ = tensor::randn({embed_dim, num_classes}, rng, static_cast<float>(1.0 / std::sqrt(static_cast<double>(embed_dim))), true);
    bias_ = tensor::zeros({num_classes}, true);
}

tensor quantile_head::logits(const tensor& batch) const {
    if (batch.rank() != 2 || batch.dim(1) != weight_.dim(0))
        throw dimension_error("quantile_head: expected [B, " + std::to_string(weight_.dim(0)) + "], got " +
                              shape_str(batch.shape()));
    return add_channel_bias(matmul(batch, weight_), bias_);
}

tensor quantile_head::forward(const tensor& batch) const { return act_(logits(batch), context_layout::dense); }

std::vector<checkpoint_entry> quantile_head::state() const {
    return {{"head.weight", weight_.shape(), weight_.values()}, {"head.bias", bias_.shape(), bias_.values()}};
}

void quantile_head::load_state(const std::vector<checkpoint_entry>& entries) {
    for (auto [name, t] : {std::pair{"head.weight", weight_}, std::pair{"head.bias", bias_}}) {
        auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
        if (it == entries.end()) throw format_error(std::string("checkpoint has no entry '") + name + "'", 0);
        const auto* v = std::get_if<std::vector<float>>(&it->values);
        if (!v || it->shape != t.shape()) throw format_error(std::string("checkpoint entry '") + name + "' does not match", 0);
        std::copy(v->begin(), v->end(), t.data().begin());
    }
    trained_ = true;
}

tensor predict_proba(const quantile_head& head, const tensor& batch) {
    if (!head.trained()) throw state_error("predict_proba: quantile head has not been trained");
    return head.forward(batch).detach();
}

tensor predict_proba_batched(const quantile_head& head, const tensor& embeddings, std::size_t batch_size) {
    if (embeddings.rank() != 2) throw dimension_error("predict_proba_batched: expected [N, D]");
    if (batch_size == 0) throw std::invalid_argument("predict_proba_batched: batch size must be positive");
    const std::size_t n = embeddings.dim(0), d = embeddings.dim(1), l = head.num_classes();
    std::vector<float> out;
    out.reserve(n * l);
    for (std::size_t first = 0; first < n; first += batch_size) {
        const std::size_t count = std::min(batch_size, n - first);
        tensor chunk({count, d}, std::vector<float>(embeddings.data().begin() + static_cast<std::ptrdiff_t>(first * d),
                                                    embeddings.data().begin() + static_cast<std::ptrdiff_t>((first + count) * d)));
        const auto p = predict_proba(head, chunk);
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return tensor({n, l}, std::move(out));
}

namespace {

double head_accuracy(const quantile_head& head, const tensor& emb, std::span<const std::size_t> labels, std::size_t batch) {
    const auto p = predict_proba_batched(head, emb, batch);
    const std::vector<double> pd(p.data().begin(), p.data().end());
    return accuracy(argmax_rows(matrix_view(pd, p.dim(0), p.dim(1))), labels);
}

}  // namespace

quantile_head fit_head(const tensor& embeddings, std::span<const std::size_t> labels, std::size_t num_classes,
                       const quantile_head_config& cfg, const tensor* val_embeddings,
                       std::span<const std::size_t> val_labels, head_fit_log* log) {
    if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size())
        throw dimension_error("fit_head: embeddings must be [N, D] with N labels");
    const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
    if (n < cfg.batch_size && n < 2) throw std::invalid_argument("fit_head: need at least one batch of embeddings");
    if (std::set<std::size_t>(labels.begin(), labels.end()).size() < 2)
        throw std::invalid_argument("fit_head: labels contain a single class");
    for (auto y : labels)
        if (y >= num_classes) throw std::invalid_argument("fit_head: label out of range");

    quantile_head head(d, num_classes, cfg);
    head.mark_trained();
    // The quantile phase trains the weights only: its surrogate gradient ignores that the
    // quantile grid moves with a common shift, so a trainable bias drifts across the sign
    // boundary.
    optimizer<float> warm_opt(head.parameters(), {optimizer_kind::adam, cfg.warm_start_lr});
    optimizer<float> quantile_opt({head.parameters()[0]}, {optimizer_kind::adam, cfg.lr});
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    const bool validate = val_embeddings && !val_labels.empty();
    double best_acc = -1;
    std::vector<checkpoint_entry> best_state;
    std::size_t stale = 0;
    const std::size_t batch = std::min(cfg.batch_size, n);
    const std::size_t epochs = cfg.warm_start_epochs + cfg.max_epochs;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const bool warm = epoch < cfg.warm_start_epochs;
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        std::size_t steps = 0;
        // Drop the ragged tail so every training context has the full batch size.
        for (std::size_t first = 0; first + batch <= n; first += batch) {
            std::vector<float> xb(batch * d);
            std::vector<std::size_t> yb(batch);
            for (std::size_t k = 0; k < batch; ++k) {
                const auto src = order[first + k];
                std::copy_n(embeddings.data().begin() + static_cast<std::ptrdiff_t>(src * d), d,
                            xb.begin() + static_cast<std::ptrdiff_t>(k * d));
                yb[k] = labels[src];
            }
            auto& opt = warm ? warm_opt : quantile_opt;
            opt.zero_grad();
            const tensor xt({batch, d}, std::move(xb));
            auto loss = warm ? bce_weighted(sigmoid(head.logits(xt)), yb, 0.5, 0.5)
                             : bce_weighted(head.forward(xt), yb, cfg.positive_weight, 1.0 - cfg.positive_weight);
            if (!std::isfinite(loss.item())) throw divergence_error("fit_head: non-finite loss");
            loss_sum += loss.item();
            ++steps;
            backward(loss);
            opt.step();
        }
        if (warm && epoch + 1 < cfg.warm_start_epochs) continue;
        if (!warm && log) log->train_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(steps, 1)));
        if (!validate) continue;
        const double acc = head_accuracy(head, *val_embeddings, val_labels, cfg.batch_size);
        if (log) log->validation_accuracy.push_back(acc);
        if (acc > best_acc) {
            best_acc = acc;
            best_state = head.state();
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    if (validate && !best_state.empty()) head.load_state(best_state);
    return head;
}

int linear_rule_assign(const linear_quantile_rule& rule, std::span<const double> x) {
    if (rule.reference.empty()) throw std::invalid_argument("linear_rule_assign: empty reference batch");
    if (x.size() != rule.w.size()) throw dimension_error("linear_rule_assign: dimension mismatch");
    double norm = 0;
    for (double v : rule.w) norm += v * v;
    if (!(norm > 0)) throw std::invalid_argument("linear_rule_assign: w must be nonzero");
    auto project = [&](std::span<const double> v) {
        if (v.size() != rule.w.size()) throw dimension_error("linear_rule_assign: reference dimension mismatch");
        double s = 0;
        for (std::size_t k = 0; k < v.size(); ++k) s += rule.w[k] * v[k];
        return s;
    };
    std::vector<double> proj;
    for (const auto& r : rule.reference) proj.push_back(project(r));
    const std::vector<double> ones(proj.size(), 1.0), half{0.5};
    const double median = weighted_quantiles(proj, ones, half)[0];
    return project(x) > median ? 1 : 0;
}

int plain_linear_assign(std::span<const double> w, double b, std::span<const double> x) {
    if (w.size() != x.size()) throw dimension_error("plain_linear_assign: dimension mismatch");
    double s = b;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * x[k];
    return s >= 0 ? 1 : 0;
}

}  // namespace quantact
