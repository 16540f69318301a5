#include "quantact/qact.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace quantact {

void qact_config::validate() const {
    if (n_tau < 2) throw std::invalid_argument("qact_config: n_tau must be at least 2");
    if (!(c > 0) || !std::isfinite(c)) throw std::invalid_argument("qact_config: c must be positive and finite");
    if (s_kde < 1) throw std::invalid_argument("qact_config: s_kde must be at least 1");
    if (!(w_pos_total > 0) || !(w_neg_total > 0))
        throw std::invalid_argument("qact_config: side weights must be strictly positive");
    if (std::abs(w_pos_total + w_neg_total - 1.0) > 1e-12)
        throw std::invalid_argument("qact_config: side weights must sum to 1");
    if (bandwidth.kind == bandwidth_kind::fixed && !(bandwidth.h > 0))
        throw std::invalid_argument("qact_config: fixed bandwidth must be positive");
}

std::vector<double> midpoint_taus(std::size_t n_tau) {
    std::vector<double> taus(n_tau);
    for (std::size_t i = 0; i < n_tau; ++i) taus[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n_tau);
    return taus;
}

namespace {

std::vector<double> quantiles_of_sorted(const std::vector<double>& sorted, const std::vector<double>& weights,
                                        std::span<const double> taus) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<double> mid(sorted.size());
    double running = 0;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        mid[k] = (running + 0.5 * weights[k]) / total;
        running += weights[k];
    }

    std::vector<double> out(taus.size());
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const double t = taus[i];
        if (t <= mid.front()) {
            out[i] = sorted.front();
            continue;
        }
        if (t >= mid.back()) {
            out[i] = sorted.back();
            continue;
        }
        // First placement strictly above t; its predecessor is at or below t.
        const auto hi = static_cast<std::size_t>(std::upper_bound(mid.begin(), mid.end(), t) - mid.begin());
        const std::size_t lo = hi - 1;
        const double span = mid[hi] - mid[lo];
        const double frac = span > 0 ? (t - mid[lo]) / span : 0.0;
        out[i] = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
    }
    // Guard the non-decreasing contract against rounding in the interpolation.
    for (std::size_t i = 1; i < out.size(); ++i)
        if (taus[i] >= taus[i - 1]) out[i] = std::max(out[i], out[i - 1]);
    return out;
}

}  // namespace

std::vector<double> weighted_quantiles(std::span<const double> values, std::span<const double> weights,
                                       std::span<const double> taus) {
    if (values.empty()) throw std::invalid_argument("weighted_quantiles: empty input");
    if (weights.size() != values.size()) throw std::invalid_argument("weighted_quantiles: weights/values length mismatch");
    for (double w : weights)
        if (!(w > 0)) throw std::invalid_argument("weighted_quantiles: weights must be positive");

    std::vector<std::pair<double, double>> pairs(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) pairs[k] = {values[k], weights[k]};
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<double> sorted(pairs.size()), w(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        sorted[k] = pairs[k].first;
        w[k] = pairs[k].second;
    }
    return quantiles_of_sorted(sorted, w, taus);
}

grounded_values ground_and_pad(std::span<const double> z, const qact_config& cfg) {
    grounded_values g;
    g.values.reserve(z.size() + 2);
    for (double v : z) {
        if (!std::isfinite(v)) throw std::invalid_argument("ground_and_pad: non-finite pre-activation");
        g.values.push_back(v);
    }
    g.values.push_back(cfg.c);
    g.values.push_back(-cfg.c);
    for (double v : g.values) (v >= 0 ? g.n_pos : g.n_neg) += 1;
    const double wp = cfg.w_pos_total / static_cast<double>(g.n_pos);
    const double wn = cfg.w_neg_total / static_cast<double>(g.n_neg);
    g.weights.reserve(g.values.size());
    for (double v : g.values) g.weights.push_back(v >= 0 ? wp : wn);
    return g;
}

double qact_evaluate(const quantile_grid& grid, double x) {
    const auto below = std::upper_bound(grid.values.begin(), grid.values.end(), x) - grid.values.begin();
    return static_cast<double>(below) / static_cast<double>(grid.values.size());
}

qact_result qact_forward(std::span<const double> z, const qact_config& cfg) {
    cfg.validate();
    auto g = ground_and_pad(z, cfg);

    qact_result r;
    r.ctx.z.assign(z.begin(), z.end());
    r.ctx.weight_pos = cfg.w_pos_total / static_cast<double>(g.n_pos);
    r.ctx.weight_neg = cfg.w_neg_total / static_cast<double>(g.n_neg);
    r.ctx.c = cfg.c;
    r.ctx.grid.taus = midpoint_taus(cfg.n_tau);
    // Weights depend only on the sign, so a plain sort of the values is enough.
    std::vector<double> sorted = std::move(g.values);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> weights(sorted.size());
    for (std::size_t k = 0; k < sorted.size(); ++k) weights[k] = sorted[k] >= 0 ? r.ctx.weight_pos : r.ctx.weight_neg;
    r.ctx.grid.values = quantiles_of_sorted(sorted, weights, r.ctx.grid.taus);

    r.activations.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) r.activations[i] = qact_evaluate(r.ctx.grid, z[i]);
    r.ctx.outputs = r.activations;
    return r;
}

double silverman_bandwidth(std::span<const double> sample, double fallback) {
    const std::size_t m = sample.size();
    if (m < 2) return fallback;
    const double mean = std::accumulate(sample.begin(), sample.end(), 0.0) / static_cast<double>(m);
    double ss = 0;
    for (double v : sample) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(m - 1));

    const std::vector<double> ones(m, 1.0);
    const double quartile_levels[2] = {0.25, 0.75};
    const auto q = weighted_quantiles(sample, ones, quartile_levels);
    const double iqr_scale = (q[1] - q[0]) / 1.34;

    double spread = std::min(sd, iqr_scale);
    if (!(spread > 0)) spread = sd;
    if (!(spread > 0) || !std::isfinite(spread)) return fallback;
    return 0.9 * spread * std::pow(static_cast<double>(m), -0.2);
}

double resolve_bandwidth(std::span<const double> sample, const bandwidth_rule& rule) {
    if (rule.kind == bandwidth_kind::fixed) {
        if (!(rule.h > 0)) throw std::invalid_argument("kde: fixed bandwidth must be positive");
        return rule.h;
    }
    return silverman_bandwidth(sample, rule.h);
}

std::vector<double> kde_density_with_bandwidth(std::span<const double> sample, std::span<const double> eval_points,
                                               double h) {
    if (sample.empty()) throw std::invalid_argument("kde_density: empty sample");
    if (!(h > 0)) throw std::invalid_argument("kde_density: bandwidth must be positive");

    // Repeated draws collapse into (value, multiplicity) pairs; the estimate is unchanged.
    std::vector<double> sorted(sample.begin(), sample.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> uniq, count;
    for (double v : sorted) {
        if (!uniq.empty() && uniq.back() == v) {
            count.back() += 1.0;
        } else {
            uniq.push_back(v);
            count.push_back(1.0);
        }
    }

    const Eigen::Map<const Eigen::ArrayXd> centers(uniq.data(), static_cast<Eigen::Index>(uniq.size()));
    const Eigen::Map<const Eigen::ArrayXd> mult(count.data(), static_cast<Eigen::Index>(count.size()));
    const double inv_h = 1.0 / h;
    const double norm = 1.0 / (static_cast<double>(sample.size()) * h * std::sqrt(2.0 * std::numbers::pi));

    std::vector<double> out(eval_points.size());
    Eigen::ArrayXd u(centers.size());
    for (std::size_t i = 0; i < eval_points.size(); ++i) {
        u = (centers - eval_points[i]) * inv_h;
        out[i] = norm * (mult * (-0.5 * u.square()).exp()).sum();
    }
    return out;
}

std::vector<double> kde_density(std::span<const double> sample, std::span<const double> eval_points,
                                const bandwidth_rule& rule) {
    if (sample.empty()) throw std::invalid_argument("kde_density: empty sample");
    return kde_density_with_bandwidth(sample, eval_points, resolve_bandwidth(sample, rule));
}

std::vector<double> weighted_sample(std::span<const double> values, std::span<const double> weights, std::size_t count,
                                    std::mt19937_64& rng) {
    if (values.empty() || values.size() != weights.size())
        throw std::invalid_argument("weighted_sample: values and weights must be nonempty and equally long");
    std::vector<double> cumulative(weights.size());
    std::partial_sum(weights.begin(), weights.end(), cumulative.begin());
    const double total = cumulative.back();
    std::uniform_real_distribution<double> uniform(0.0, total);
    std::vector<double> out(count);
    for (auto& v : out) {
        const double u = uniform(rng);
        auto idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        v = values[std::min(idx, values.size() - 1)];
    }
    return out;
}

grounded_values context_population(const qact_context& ctx) {
    grounded_values g;
    g.values = ctx.z;
    g.values.push_back(ctx.c);
    g.values.push_back(-ctx.c);
    g.weights.reserve(g.values.size());
    for (double v : g.values) {
        (v >= 0 ? g.n_pos : g.n_neg) += 1;
        g.weights.push_back(v >= 0 ? ctx.weight_pos : ctx.weight_neg);
    }
    return g;
}

namespace {

// Exact density at a subset of the sorted points spaced at least h/8 apart (plus the
// largest point), linearly interpolated for the points in between.
std::vector<double> density_on_sorted_nodes(std::span<const double> sample, std::span<const double> points, double h) {
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });

    const double step = h / 8;
    std::vector<double> nodes;
    for (auto i : order)
        if (nodes.empty() || points[i] - nodes.back() >= step) nodes.push_back(points[i]);
    if (points[order.back()] != nodes.back()) nodes.push_back(points[order.back()]);
    const auto node_density = kde_density_with_bandwidth(sample, nodes, h);

    std::vector<double> out(points.size());
    std::size_t hi = 0;
    for (auto i : order) {
        const double x = points[i];
        while (nodes[hi] < x) ++hi;
        if (nodes[hi] == x || hi == 0) {
            out[i] = node_density[hi];
            continue;
        }
        const double t = (x - nodes[hi - 1]) / (nodes[hi] - nodes[hi - 1]);
        out[i] = node_density[hi - 1] + t * (node_density[hi] - node_density[hi - 1]);
    }
    return out;
}

// Same idea without sorting: nodes on a uniform h/8 lattice, evaluated only at the ends
// of cells that hold a point. Falls back to sorted nodes when the lattice is too long.
std::vector<double> interpolated_density(std::span<const double> sample, std::span<const double> points, double h) {
    const auto [lo_it, hi_it] = std::minmax_element(points.begin(), points.end());
    const double lo = *lo_it, step = h / 8;
    const double cells_real = std::floor((*hi_it - lo) / step) + 1;
    if (!(cells_real <= 4.0 * static_cast<double>(points.size()))) return density_on_sorted_nodes(sample, points, h);
    const auto cells = static_cast<std::size_t>(cells_real);

    std::vector<std::size_t> cell(points.size());
    std::vector<char> used(cells + 1, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        cell[i] = std::min(static_cast<std::size_t>((points[i] - lo) / step), cells - 1);
        used[cell[i]] = used[cell[i] + 1] = 1;
    }
    std::vector<double> nodes;
    std::vector<std::size_t> slot(cells + 1, 0);
    for (std::size_t k = 0; k <= cells; ++k)
        if (used[k]) {
            slot[k] = nodes.size();
            nodes.push_back(lo + static_cast<double>(k) * step);
        }
    const auto node_density = kde_density_with_bandwidth(sample, nodes, h);

    std::vector<double> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::size_t k = cell[i];
        const double t = (points[i] - nodes[slot[k]]) / step;
        out[i] = node_density[slot[k]] + t * (node_density[slot[k + 1]] - node_density[slot[k]]);
    }
    return out;
}

}  // namespace

std::vector<double> qact_backward(std::span<const double> grad_output, const qact_context& ctx, const qact_config& cfg,
                                  std::mt19937_64& rng) {
    if (grad_output.size() != ctx.z.size())
        throw std::invalid_argument("qact_backward: grad_output has " + std::to_string(grad_output.size()) +
                                    " entries for a context of " + std::to_string(ctx.z.size()));
    const auto population = context_population(ctx);
    const auto sample = weighted_sample(population.values, population.weights, cfg.s_kde, rng);
    const double h = resolve_bandwidth(sample, cfg.bandwidth);

    const bool exact = cfg.density == density_eval::exact ||
                       (cfg.density == density_eval::automatic && ctx.z.size() <= cfg.exact_density_limit);
    const auto density = exact ? kde_density_with_bandwidth(sample, ctx.z, h)
                               : interpolated_density(sample, ctx.z, h);

    std::vector<double> grad(grad_output.size());
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = grad_output[i] * density[i];
    return grad;
}

std::mt19937_64 context_stream(std::uint64_t seed, std::uint64_t layer, std::uint64_t context, std::uint64_t call) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(layer), static_cast<std::uint32_t>(context),
                      static_cast<std::uint32_t>(call), static_cast<std::uint32_t>(call >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace quantact
