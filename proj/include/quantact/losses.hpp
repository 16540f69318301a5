#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "quantact/tensor.hpp"

namespace quantact {

using label_span = std::span<const std::size_t>;

namespace detail {

inline void require_labels(const shape_t& s, label_span labels, const char* op) {
    if (s.size() != 2) throw dimension_error(std::string(op) + ": expected [B, L], got " + shape_str(s));
    if (labels.size() != s[0])
        throw dimension_error(std::string(op) + ": " + std::to_string(labels.size()) + " labels for batch of " +
                              std::to_string(s[0]));
    if (s[0] == 0) throw std::invalid_argument(std::string(op) + ": empty batch");
}

inline double squared_distance(const double* a, const double* b, std::size_t d) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
}

// Pairwise Euclidean distances of the rows of a [B, D] buffer, in double.
template <class T>
std::vector<double> pairwise_distances(std::span<const T> x, std::size_t b, std::size_t d) {
    std::vector<double> xd(x.begin(), x.end()), out(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = i + 1; j < b; ++j)
            out[i * b + j] = out[j * b + i] = std::sqrt(squared_distance(&xd[i * d], &xd[j * d], d));
    return out;
}

// Adds coef * d||x_i - x_j|| / d(x_i, x_j) into grad. The zero-distance subgradient is zero.
template <class T>
void accumulate_distance_grad(std::span<const T> x, std::span<T> grad, std::size_t d, std::size_t i, std::size_t j,
                              double dist, double coef) {
    if (grad.empty() || dist <= 0 || coef == 0) return;
    for (std::size_t k = 0; k < d; ++k) {
        const double u = (static_cast<double>(x[i * d + k]) - static_cast<double>(x[j * d + k])) / dist;
        grad[i * d + k] += static_cast<T>(coef * u);
        grad[j * d + k] -= static_cast<T>(coef * u);
    }
}

}  // namespace detail

// Mean negative log-softmax of the true class.
template <class T>
basic_tensor<T> cross_entropy(const basic_tensor<T>& logits, label_span labels) {
    detail::require_labels(logits.shape(), labels, "cross_entropy");
    const std::size_t b = logits.dim(0), l = logits.dim(1);
    std::vector<double> softmax(b * l);
    double total = 0;
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= l) throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
        const T* z = logits.data().data() + i * l;
        const double m = *std::max_element(z, z + l);
        double s = 0;
        for (std::size_t k = 0; k < l; ++k) s += std::exp(static_cast<double>(z[k]) - m);
        for (std::size_t k = 0; k < l; ++k) softmax[i * l + k] = std::exp(static_cast<double>(z[k]) - m) / s;
        total += m + std::log(s) - static_cast<double>(z[labels[i]]);
    }
    std::vector<std::size_t> y(labels.begin(), labels.end());
    return detail::record<T>("cross_entropy", {}, {static_cast<T>(total / static_cast<double>(b))}, {&logits},
                             [logits, softmax = std::move(softmax), y = std::move(y), b, l](std::span<const T> g) {
                                 auto gl = detail::grad_sink(logits);
                                 const double s = static_cast<double>(g[0]) / static_cast<double>(b);
                                 for (std::size_t i = 0; i < b; ++i)
                                     for (std::size_t k = 0; k < l; ++k)
                                         gl[i * l + k] += static_cast<T>(s * (softmax[i * l + k] - (k == y[i] ? 1.0 : 0.0)));
                             });
}

inline constexpr double bce_clamp = 1e-6;

// One-vs-rest binary cross-entropy: mean over the batch of the sum over classes of
// -pos_weight * ln p for the true class and -neg_weight * ln(1 - p) for the others.
// Probabilities are clamped to [1e-6, 1 - 1e-6]; clamped entries pass no gradient.
template <class T>
basic_tensor<T> bce_weighted(const basic_tensor<T>& probs, label_span labels, double pos_weight = 0.9,
                             double neg_weight = 0.1) {
    detail::require_labels(probs.shape(), labels, "bce_weighted");
    if (!(pos_weight > 0) || !(neg_weight > 0)) throw std::invalid_argument("bce_weighted: weights must be positive");
    const std::size_t b = probs.dim(0), l = probs.dim(1);
    std::vector<double> dloss(b * l);
    double total = 0;
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= l) throw std::invalid_argument("bce_weighted: label " + std::to_string(labels[i]) + " out of range");
        for (std::size_t k = 0; k < l; ++k) {
            const double raw = static_cast<double>(probs[i * l + k]);
            const double p = std::clamp(raw, bce_clamp, 1.0 - bce_clamp);
            const bool inside = raw > bce_clamp && raw < 1.0 - bce_clamp;
            if (k == labels[i]) {
                total -= pos_weight * std::log(p);
                dloss[i * l + k] = inside ? -pos_weight / p : 0.0;
            } else {
                total -= neg_weight * std::log(1.0 - p);
                dloss[i * l + k] = inside ? neg_weight / (1.0 - p) : 0.0;
            }
        }
    }
    return detail::record<T>("bce_weighted", {}, {static_cast<T>(total / static_cast<double>(b))}, {&probs},
                             [probs, dloss = std::move(dloss), b](std::span<const T> g) {
                                 auto gp = detail::grad_sink(probs);
                                 const double s = static_cast<double>(g[0]) / static_cast<double>(b);
                                 for (std::size_t i = 0; i < dloss.size(); ++i) gp[i] += static_cast<T>(s * dloss[i]);
                             });
}

enum class triplet_mining { all, batch_hard, random };

struct triplet_config {
    double margin = 0.2;
    triplet_mining mining = triplet_mining::batch_hard;
    std::uint64_t seed = 0;  // used by random mining
};

struct loss_diagnostics {
    bool no_valid_triplet = false;
};

// Hinge max(0, d(a,p) - d(a,n) + margin) with Euclidean d, averaged over
//   all:        every (anchor, positive, negative) triplet
//   batch_hard: one triplet per anchor, its farthest positive and nearest negative
//   random:     one triplet per anchor, uniformly drawn positive and negative
// A batch without any valid triplet yields 0 and sets diag->no_valid_triplet.
template <class T>
basic_tensor<T> triplet_loss(const basic_tensor<T>& emb, label_span labels, const triplet_config& cfg,
                             loss_diagnostics* diag = nullptr) {
    detail::require_labels(emb.shape(), labels, "triplet_loss");
    if (!(cfg.margin > 0)) throw std::invalid_argument("triplet_loss: margin must be positive");
    const std::size_t b = emb.dim(0), d = emb.dim(1);
    const auto dist = detail::pairwise_distances<T>(emb.data(), b, d);
    std::mt19937_64 rng(cfg.seed);

    struct term {
        std::size_t a, p, n;
    };
    std::vector<term> terms;
    std::size_t count = 0;
    double total = 0;
    auto add = [&](std::size_t a, std::size_t p, std::size_t n) {
        ++count;
        const double h = dist[a * b + p] - dist[a * b + n] + cfg.margin;
        if (h > 0) {
            total += h;
            terms.push_back({a, p, n});
        }
    };
    for (std::size_t a = 0; a < b; ++a) {
        std::vector<std::size_t> pos, neg;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == a) continue;
            (labels[j] == labels[a] ? pos : neg).push_back(j);
        }
        if (pos.empty() || neg.empty()) continue;
        switch (cfg.mining) {
            case triplet_mining::all:
                for (auto p : pos)
                    for (auto n : neg) add(a, p, n);
                break;
            case triplet_mining::batch_hard: {
                // Ties resolve to the lowest index.
                std::size_t p = pos[0], n = neg[0];
                for (auto j : pos)
                    if (dist[a * b + j] > dist[a * b + p]) p = j;
                for (auto j : neg)
                    if (dist[a * b + j] < dist[a * b + n]) n = j;
                add(a, p, n);
                break;
            }
            case triplet_mining::random: {
                const auto p = pos[std::uniform_int_distribution<std::size_t>(0, pos.size() - 1)(rng)];
                const auto n = neg[std::uniform_int_distribution<std::size_t>(0, neg.size() - 1)(rng)];
                add(a, p, n);
                break;
            }
        }
    }
    if (diag) diag->no_valid_triplet = count == 0;
    const double value = count ? total / static_cast<double>(count) : 0.0;
    return detail::record<T>("triplet_loss", {}, {static_cast<T>(value)}, {&emb},
                             [emb, dist, terms = std::move(terms), count, b, d](std::span<const T> g) {
                                 auto ge = detail::grad_sink(emb);
                                 if (count == 0) return;
                                 const double s = static_cast<double>(g[0]) / static_cast<double>(count);
                                 for (const auto& t : terms) {
                                     detail::accumulate_distance_grad<T>(emb.data(), ge, d, t.a, t.p, dist[t.a * b + t.p], s);
                                     detail::accumulate_distance_grad<T>(emb.data(), ge, d, t.a, t.n, dist[t.a * b + t.n], -s);
                                 }
                             });
}

struct watershed_batch_state {
    std::vector<std::size_t> classes;     // sorted distinct labels present
    std::vector<std::size_t> seeds;       // one batch index per entry of `classes`
    std::vector<std::size_t> propagated;  // propagated label of each sample
    std::vector<std::vector<std::size_t>> correct_sets;  // per class: indices with propagated == true == class
};

// One uniformly drawn seed per class, in ascending class order. Throws when a class has
// a single sample.
inline std::vector<std::size_t> watershed_seeds(label_span labels, std::mt19937_64& rng) {
    std::map<std::size_t, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
    std::vector<std::size_t> seeds;
    for (const auto& [cls, idx] : members) {
        if (idx.size() < 2)
            throw std::invalid_argument("watershed_loss: class " + std::to_string(cls) +
                                        " has a single sample in the batch; use a larger batch");
        seeds.push_back(idx[std::uniform_int_distribution<std::size_t>(0, idx.size() - 1)(rng)]);
    }
    return seeds;
}

// Single-linkage propagation from the seeds: repeatedly label the unlabeled sample
// closest to any labeled one with that neighbor's label.
inline watershed_batch_state watershed_propagate(const std::vector<double>& dist, std::size_t b, label_span labels,
                                                 const std::vector<std::size_t>& seeds) {
    watershed_batch_state st;
    for (auto y : labels) st.classes.push_back(y);
    std::sort(st.classes.begin(), st.classes.end());
    st.classes.erase(std::unique(st.classes.begin(), st.classes.end()), st.classes.end());
    if (seeds.size() != st.classes.size()) throw std::invalid_argument("watershed: need one seed per class");
    st.seeds = seeds;

    constexpr std::size_t unlabeled = std::numeric_limits<std::size_t>::max();
    st.propagated.assign(b, unlabeled);
    std::vector<double> best(b, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> best_label(b, unlabeled);
    auto relax = [&](std::size_t from) {
        for (std::size_t j = 0; j < b; ++j)
            if (st.propagated[j] == unlabeled && dist[from * b + j] < best[j]) {
                best[j] = dist[from * b + j];
                best_label[j] = st.propagated[from];
            }
    };
    for (std::size_t c = 0; c < seeds.size(); ++c) {
        if (labels[seeds[c]] != st.classes[c]) throw std::invalid_argument("watershed: seed label mismatch");
        st.propagated[seeds[c]] = st.classes[c];
    }
    for (auto s : seeds) relax(s);
    for (std::size_t step = seeds.size(); step < b; ++step) {
        std::size_t pick = unlabeled;
        for (std::size_t j = 0; j < b; ++j)
            if (st.propagated[j] == unlabeled && (pick == unlabeled || best[j] < best[pick])) pick = j;
        st.propagated[pick] = best_label[pick];
        relax(pick);
    }
    st.correct_sets.resize(st.classes.size());
    for (std::size_t i = 0; i < b; ++i)
        if (st.propagated[i] == labels[i]) {
            const auto c = static_cast<std::size_t>(std::lower_bound(st.classes.begin(), st.classes.end(), labels[i]) -
                                                    st.classes.begin());
            st.correct_sets[c].push_back(i);
        }
    return st;
}

// Watershed loss with explicit seeds. For each sample i and class l, d_il is the distance
// to the nearest member of S_l other than i (+inf if none). The per-sample loss is the
// negative log-softmax over classes of -d_il at the true class; samples whose own
// class has no reference are left out of the mean.
template <class T>
basic_tensor<T> watershed_loss_with_seeds(const basic_tensor<T>& emb, label_span labels,
                                          const std::vector<std::size_t>& seeds, watershed_batch_state* state_out = nullptr) {
    detail::require_labels(emb.shape(), labels, "watershed_loss");
    const std::size_t b = emb.dim(0), d = emb.dim(1);
    const auto dist = detail::pairwise_distances<T>(emb.data(), b, d);
    auto st = watershed_propagate(dist, b, labels, seeds);
    const std::size_t nc = st.classes.size();
    constexpr double inf = std::numeric_limits<double>::infinity();

    struct sample_term {
        std::size_t i;
        std::vector<std::size_t> nn;    // nearest reference per class (b if none)
        std::vector<double> coef;       // d loss / d d_il
    };
    std::vector<sample_term> terms;
    double total = 0;
    for (std::size_t i = 0; i < b; ++i) {
        sample_term t{i, std::vector<std::size_t>(nc, b), std::vector<double>(nc, 0.0)};
        std::vector<double> di(nc, inf);
        std::size_t own = nc;
        for (std::size_t c = 0; c < nc; ++c) {
            if (st.classes[c] == labels[i]) own = c;
            for (auto j : st.correct_sets[c])
                if (j != i && dist[i * b + j] < di[c]) {
                    di[c] = dist[i * b + j];
                    t.nn[c] = j;
                }
        }
        if (di[own] == inf) continue;
        double m = inf;
        for (double v : di) m = std::min(m, v);
        double z = 0;
        for (double v : di) z += std::exp(-(v - m));
        total += di[own] - m + std::log(z);
        for (std::size_t c = 0; c < nc; ++c) {
            const double softmax = di[c] == inf ? 0.0 : std::exp(-(di[c] - m)) / z;
            t.coef[c] = (c == own ? 1.0 : 0.0) - softmax;
        }
        terms.push_back(std::move(t));
    }
    const std::size_t used = terms.size();
    if (state_out) *state_out = st;
    const double value = used ? total / static_cast<double>(used) : 0.0;
    return detail::record<T>("watershed_loss", {}, {static_cast<T>(value)}, {&emb},
                             [emb, dist, terms = std::move(terms), used, b, d](std::span<const T> g) {
                                 auto ge = detail::grad_sink(emb);
                                 if (used == 0) return;
                                 const double s = static_cast<double>(g[0]) / static_cast<double>(used);
                                 for (const auto& t : terms)
                                     for (std::size_t c = 0; c < t.nn.size(); ++c)
                                         if (t.nn[c] < b)
                                             detail::accumulate_distance_grad<T>(emb.data(), ge, d, t.i, t.nn[c],
                                                                                 dist[t.i * b + t.nn[c]], s * t.coef[c]);
                             });
}

template <class T>
basic_tensor<T> watershed_loss(const basic_tensor<T>& emb, label_span labels, std::mt19937_64& rng,
                               watershed_batch_state* state_out = nullptr) {
    detail::require_labels(emb.shape(), labels, "watershed_loss");
    return watershed_loss_with_seeds(emb, labels, watershed_seeds(labels, rng), state_out);
}

}  // namespace quantact
