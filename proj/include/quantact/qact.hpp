#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace quantact {

enum class bandwidth_kind { silverman, fixed };

struct bandwidth_rule {
    bandwidth_kind kind = bandwidth_kind::silverman;
    double h = 0.1;  // used by `fixed`, and as the silverman fallback for degenerate samples

    static bandwidth_rule silverman() { return {}; }
    static bandwidth_rule fixed(double h) { return {bandwidth_kind::fixed, h}; }
};

// How the backward pass evaluates the density at the context values.
//   exact:        KDE evaluated at every context value.
//   interpolated: KDE evaluated on a lattice of spacing h/8 around the context values
//                 and interpolated linearly in between.
//   automatic:    exact for contexts up to `exact_density_limit` values, interpolated above.
enum class density_eval { exact, interpolated, automatic };

struct qact_config {
    std::size_t n_tau = 100;
    double c = 100.0;
    std::size_t s_kde = 1000;
    // Total probability mass carried by non-negative and by negative values.
    double w_pos_total = 0.5;
    double w_neg_total = 0.5;
    bandwidth_rule bandwidth = bandwidth_rule::silverman();
    std::uint64_t rng_seed = 0;
    density_eval density = density_eval::automatic;
    std::size_t exact_density_limit = 1024;

    // Throws std::invalid_argument when an invariant is violated.
    void validate() const;

    static qact_config classifier(double positive_weight = 0.9) {
        qact_config cfg;
        cfg.w_pos_total = positive_weight;
        cfg.w_neg_total = 1.0 - positive_weight;
        return cfg;
    }
};

// Uniform midpoints (i - 0.5) / n, i = 1..n.
std::vector<double> midpoint_taus(std::size_t n_tau);

struct quantile_grid {
    std::vector<double> taus;
    std::vector<double> values;
};

// Inverse of the weighted CDF at each level in `taus`. Sorted values are placed at the
// midpoint of their cumulative weight step, and the inverse interpolates linearly
// between adjacent placements; levels outside the first/last placement clamp to the
// extreme values.
std::vector<double> weighted_quantiles(std::span<const double> values, std::span<const double> weights,
                                       std::span<const double> taus);

struct grounded_values {
    std::vector<double> values;   // input values followed by +c and -c
    std::vector<double> weights;  // sums to 1
    std::size_t n_pos = 0;        // count of values >= 0, padding included
    std::size_t n_neg = 0;
};

// Appends the +c/-c sentinels and spreads w_pos_total over the non-negative values and
// w_neg_total over the negative ones.
grounded_values ground_and_pad(std::span<const double> z, const qact_config& cfg);

// State saved by the forward pass of one context for its backward pass.
struct qact_context {
    std::vector<double> z;
    double weight_pos = 0;  // per-value weight of non-negative values
    double weight_neg = 0;
    double c = 0;
    quantile_grid grid;
    std::vector<double> outputs;
};

struct qact_result {
    std::vector<double> activations;
    qact_context ctx;
};

// Quantile activation of one context: the fraction of grid quantiles at or below each value.
qact_result qact_forward(std::span<const double> z, const qact_config& cfg);

// Counts grid quantiles <= x, divided by the grid size.
double qact_evaluate(const quantile_grid& grid, double x);

// Silverman's rule of thumb, 0.9 * min(sd, IQR / 1.34) * m^(-1/5). Falls back to the
// standard deviation when the IQR vanishes and to `fallback` when both do.
double silverman_bandwidth(std::span<const double> sample, double fallback = 0.1);

double resolve_bandwidth(std::span<const double> sample, const bandwidth_rule& rule);

// Gaussian kernel density estimate of `sample` at each evaluation point.
std::vector<double> kde_density(std::span<const double> sample, std::span<const double> eval_points,
                                const bandwidth_rule& rule);
std::vector<double> kde_density_with_bandwidth(std::span<const double> sample, std::span<const double> eval_points,
                                               double h);

// Draws `count` values with replacement, value i chosen with probability
// weights[i] / sum(weights).
std::vector<double> weighted_sample(std::span<const double> values, std::span<const double> weights, std::size_t count,
                                    std::mt19937_64& rng);

// The padded, weighted population the backward pass samples from.
grounded_values context_population(const qact_context& ctx);

// grad_input = grad_output * density estimate at each saved value.
std::vector<double> qact_backward(std::span<const double> grad_output, const qact_context& ctx, const qact_config& cfg,
                                  std::mt19937_64& rng);

// Random stream for one context of one layer at one backward call.
std::mt19937_64 context_stream(std::uint64_t seed, std::uint64_t layer, std::uint64_t context, std::uint64_t call);

}  // namespace quantact
