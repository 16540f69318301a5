#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "quantact/ops.hpp"
#include "quantact/qact.hpp"
#include "quantact/qact_layer.hpp"
#include "quantact/tape.hpp"

using namespace quantact;

namespace {

const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

std::vector<double> normal_draws(std::size_t n, std::uint64_t seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, sd);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

// Oracle: tabulate the piecewise-linear weighted CDF (sorted values placed at their
// cumulative midpoints) on a dense grid and return the first grid point reaching tau.
double dense_grid_quantile(std::vector<double> values, std::vector<double> weights, double tau,
                           std::size_t grid_points = 100000) {
    std::vector<std::pair<double, double>> vw;
    for (std::size_t i = 0; i < values.size(); ++i) vw.emplace_back(values[i], weights[i]);
    std::sort(vw.begin(), vw.end());
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<double> xs, ps;
    double run = 0;
    for (auto [v, w] : vw) {
        xs.push_back(v);
        ps.push_back((run + w / 2) / total);
        run += w;
    }
    auto cdf = [&](double x) {
        if (x < xs.front()) return 0.0;
        if (x >= xs.back()) return 1.0;
        std::size_t k = 0;
        while (xs[k + 1] <= x) ++k;
        return ps[k] + (ps[k + 1] - ps[k]) * (x - xs[k]) / (xs[k + 1] - xs[k]);
    };
    if (tau <= ps.front()) return xs.front();
    const double lo = xs.front(), hi = xs.back();
    for (std::size_t g = 0; g <= grid_points; ++g) {
        const double x = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid_points);
        if (cdf(x) >= tau) return x;
    }
    return hi;
}

// Oracle: the placement of each z_i in the explicitly grounded and padded population.
std::vector<double> grounded_cdf_at(const std::vector<double>& z, double c) {
    std::vector<double> pop = z;
    pop.push_back(c);
    pop.push_back(-c);
    double n_pos = 0, n_neg = 0;
    for (double v : pop) (v >= 0 ? n_pos : n_neg) += 1;
    std::vector<double> out;
    for (double x : z) {
        double below = 0, at = 0;
        for (double v : pop) {
            const double w = v >= 0 ? 0.5 / n_pos : 0.5 / n_neg;
            if (v < x) below += w;
            if (v == x) at += w;
        }
        out.push_back(below + at / 2);
    }
    return out;
}

qact_config exact_cfg(std::uint64_t seed = 1) {
    qact_config cfg;
    cfg.rng_seed = seed;
    cfg.density = density_eval::exact;
    return cfg;
}

}  // namespace

TEST(QActConfig, RejectsInvalidSettings) {
    qact_config cfg;
    EXPECT_NO_THROW(cfg.validate());
    auto bad = cfg;
    bad.n_tau = 1;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.c = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.s_kde = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.w_pos_total = 0.6;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.w_pos_total = 1.0;
    bad.w_neg_total = 0.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    EXPECT_NO_THROW(qact_config::classifier().validate());
}

TEST(MidpointTaus, StrictlyIncreasingInsideUnitInterval) {
    const auto t = midpoint_taus(100);
    EXPECT_DOUBLE_EQ(t.front(), 0.005);
    EXPECT_DOUBLE_EQ(t.back(), 0.995);
    for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LT(t[i - 1], t[i]);
}

TEST(WeightedQuantiles, MedianOfFourEqualPoints) {
    const std::vector<double> v{1, 2, 3, 4}, w(4, 1.0), tau{0.5};
    EXPECT_DOUBLE_EQ(weighted_quantiles(v, w, tau)[0], 2.5);
}

TEST(WeightedQuantiles, ExtremeLevelsReturnMinAndMax) {
    const auto v = normal_draws(37, 4);
    std::vector<double> w(v.size());
    std::mt19937_64 rng(5);
    for (auto& x : w) x = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
    const std::vector<double> tau{1e-9, 1 - 1e-9};
    const auto q = weighted_quantiles(v, w, tau);
    EXPECT_EQ(q[0], *std::min_element(v.begin(), v.end()));
    EXPECT_EQ(q[1], *std::max_element(v.begin(), v.end()));
}

TEST(WeightedQuantiles, TwoPointCaseMatchesDenseGridOracle) {
    const std::vector<double> v{-1, 2}, w{0.5, 0.5}, tau{0.25, 0.75};
    const auto q = weighted_quantiles(v, w, tau);
    const double step = 3.0 / 100000;
    EXPECT_NEAR(q[0], dense_grid_quantile(v, w, 0.25), step);
    EXPECT_NEAR(q[1], dense_grid_quantile(v, w, 0.75), step);
}

TEST(WeightedQuantiles, RandomCasesMatchDenseGridOracle) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        const auto v = normal_draws(6 + trial, 100 + trial);
        std::vector<double> w(v.size());
        for (auto& x : w) x = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
        const std::vector<double> tau{0.1, 0.33, 0.5, 0.77, 0.9};
        const auto q = weighted_quantiles(v, w, tau);
        const double range = *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
        for (std::size_t i = 0; i < tau.size(); ++i)
            EXPECT_NEAR(q[i], dense_grid_quantile(v, w, tau[i], 20000), 2 * range / 20000) << trial << " " << tau[i];
    }
}

TEST(WeightedQuantiles, OutputNonDecreasingInTau) {
    for (int seed = 0; seed < 20; ++seed) {
        const auto v = normal_draws(50, seed);
        const std::vector<double> w(v.size(), 1.0);
        const auto q = weighted_quantiles(v, w, midpoint_taus(100));
        EXPECT_TRUE(std::is_sorted(q.begin(), q.end()));
    }
}

TEST(WeightedQuantiles, InvalidInputsThrow) {
    const std::vector<double> none, tau{0.5};
    EXPECT_THROW(weighted_quantiles(none, none, tau), std::invalid_argument);
    const std::vector<double> v{1, 2}, w{1, 0};
    EXPECT_THROW(weighted_quantiles(v, w, tau), std::invalid_argument);
    const std::vector<double> neg{1, -1};
    EXPECT_THROW(weighted_quantiles(v, neg, tau), std::invalid_argument);
}

TEST(GroundAndPad, EmptyContextIsPaddingOnly) {
    const auto g = ground_and_pad({}, qact_config{});
    EXPECT_EQ(g.values, (std::vector<double>{100, -100}));
    EXPECT_EQ(g.weights, (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(g.n_pos, 1u);
    EXPECT_EQ(g.n_neg, 1u);
}

TEST(GroundAndPad, AllPositiveContext) {
    const std::vector<double> z{5, 7};
    const auto g = ground_and_pad(z, qact_config{});
    EXPECT_EQ(g.n_pos, 3u);
    EXPECT_EQ(g.n_neg, 1u);
    EXPECT_DOUBLE_EQ(g.weights[0], 1.0 / 6);
    EXPECT_DOUBLE_EQ(g.weights[1], 1.0 / 6);
    EXPECT_DOUBLE_EQ(g.weights[2], 1.0 / 6);
    EXPECT_DOUBLE_EQ(g.weights[3], 0.5);
}

TEST(GroundAndPad, SymmetricContextHasZeroMedian) {
    const std::vector<double> z{-1, 1};
    const auto g = ground_and_pad(z, qact_config{});
    EXPECT_EQ(g.n_pos, 2u);
    EXPECT_EQ(g.n_neg, 2u);
    for (double w : g.weights) EXPECT_DOUBLE_EQ(w, 0.25);
    const std::vector<double> half{0.5};
    EXPECT_DOUBLE_EQ(weighted_quantiles(g.values, g.weights, half)[0], 0.0);
}

TEST(GroundAndPad, ZeroCountsAsPositiveAndWeightsSumToOne) {
    const std::vector<double> z{0, -3, -4};
    auto cfg = qact_config::classifier(0.9);
    const auto g = ground_and_pad(z, cfg);
    EXPECT_EQ(g.n_pos, 2u);
    EXPECT_EQ(g.n_neg, 3u);
    EXPECT_NEAR(std::accumulate(g.weights.begin(), g.weights.end(), 0.0), 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(g.weights[0], 0.45);
}

TEST(GroundAndPad, NonFiniteInputThrows) {
    const std::vector<double> z{1, std::nan("")};
    EXPECT_THROW(ground_and_pad(z, qact_config{}), std::invalid_argument);
    const std::vector<double> inf{1, INFINITY};
    EXPECT_THROW(ground_and_pad(inf, qact_config{}), std::invalid_argument);
}

TEST(QActForward, ZeroMapsToHalfWhenBothSignsPresent) {
    auto z = normal_draws(255, 19);
    z.push_back(0.0);
    const auto r = qact_forward(z, qact_config{});
    EXPECT_NEAR(r.activations.back(), 0.5, 1.0 / 100);
}

TEST(QActForward, ZeroInTinyContextIsOffsetByItsOwnWeight) {
    // The zero carries weight 0.5 / 5 and sits at cumulative level 0.5 + 0.05.
    const std::vector<double> z{-3, -0.2, 0, 0.7, 5, 1.1};
    const auto r = qact_forward(z, qact_config{});
    EXPECT_NEAR(r.activations[2], 0.55, 1e-12);
}

TEST(QActForward, MatchesWeightedCdfOracle) {
    const std::vector<double> z{-2, -1, 1, 2};
    const auto r = qact_forward(z, qact_config{});
    const auto expected = grounded_cdf_at(z, 100.0);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(r.activations[i], expected[i], 2.0 / 100) << i;
}

TEST(QActForward, RandomContextsMatchWeightedCdfOracle) {
    for (int seed = 0; seed < 10; ++seed) {
        const auto z = normal_draws(200, seed, 2.0);
        const auto r = qact_forward(z, qact_config{});
        const auto expected = grounded_cdf_at(z, 100.0);
        for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(r.activations[i], expected[i], 2.0 / 100);
    }
}

TEST(QActForward, InvariantUnderSignPreservingIncreasingMaps) {
    for (int seed = 0; seed < 20; ++seed) {
        const auto z = normal_draws(64 + seed, 300 + seed);
        std::vector<double> z3(z.size()), zc(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
            z3[i] = 3 * z[i];
            zc[i] = z[i] * z[i] * z[i];
        }
        const auto a = qact_forward(z, qact_config{}).activations;
        const auto b = qact_forward(z3, qact_config{}).activations;
        const auto c = qact_forward(zc, qact_config{}).activations;
        for (std::size_t i = 0; i < z.size(); ++i) {
            EXPECT_LE(std::abs(a[i] - b[i]), 2.0 / 100);
            EXPECT_LE(std::abs(a[i] - c[i]), 2.0 / 100);
        }
    }
}

TEST(QActForward, RangeMonotonicityAndGroundingProperties) {
    std::mt19937_64 rng(8);
    for (int seed = 0; seed < 50; ++seed) {
        const std::size_t n = 1 + rng() % 300;
        auto z = normal_draws(n, 1000 + seed, 0.1 + static_cast<double>(rng() % 50));
        if (seed % 5 == 0)
            for (auto& v : z) v = std::round(v);  // ties
        z.push_back(0.0);
        z.push_back(-1.0);
        qact_config cfg;
        cfg.n_tau = 2 + rng() % 200;
        const auto r = qact_forward(z, cfg);
        ASSERT_EQ(r.activations.size(), z.size());
        for (double a : r.activations) {
            EXPECT_GE(a, 0.0);
            EXPECT_LE(a, 1.0);
        }
        for (std::size_t i = 0; i < z.size(); ++i)
            for (std::size_t j = 0; j < z.size(); ++j)
                if (z[i] <= z[j]) {
                    ASSERT_LE(r.activations[i], r.activations[j]);
                }
        // A value at 0 sits at level 0.5 plus the positive mass of the zeros before it.
        const auto grounded = ground_and_pad(z, cfg);
        const double zeros = static_cast<double>(std::count(z.begin(), z.end(), 0.0));
        const double w_pos = 0.5 / static_cast<double>(grounded.n_pos);
        EXPECT_GE(r.activations[z.size() - 2], 0.5 - 1.0 / static_cast<double>(cfg.n_tau)) << seed;
        EXPECT_LE(r.activations[z.size() - 2], 0.5 + zeros * w_pos + 1.0 / static_cast<double>(cfg.n_tau)) << seed;
        EXPECT_TRUE(std::is_sorted(r.ctx.grid.values.begin(), r.ctx.grid.values.end()));
        EXPECT_EQ(r.ctx.outputs, r.activations);
    }
}

TEST(QActForward, LargeContextIsNearlyUniform) {
    const auto z = normal_draws(4096, 55, 3.0);
    auto a = qact_forward(z, qact_config{}).activations;
    std::sort(a.begin(), a.end());
    const double n = static_cast<double>(a.size());
    double ks = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ks = std::max(ks, std::abs(static_cast<double>(i + 1) / n - a[i]));
        ks = std::max(ks, std::abs(a[i] - static_cast<double>(i) / n));
    }
    EXPECT_LE(ks, 0.05);
}

TEST(QActForward, ForwardScalesNearLogLinearly) {
    auto seconds = [](std::size_t n) {
        const auto z = normal_draws(n, 9);
        double best = 1e9;
        for (int rep = 0; rep < 3; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            auto r = qact_forward(z, qact_config{});
            const auto t1 = std::chrono::steady_clock::now();
            EXPECT_EQ(r.activations.size(), n);
            best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
        }
        return best;
    };
    const double t3 = seconds(1000), t4 = seconds(10000), t5 = seconds(100000);
    // n log n grows by about 13x per decade here; quadratic growth would be 100x.
    EXPECT_LT(t5 / t4, 30.0);
    EXPECT_LT(t5 / std::max(t3, 1e-6), 30.0 * 30.0);
}

TEST(KdeDensity, KernelValueAtOrigin) {
    const std::vector<double> s{0}, x{0};
    EXPECT_NEAR(kde_density(s, x, bandwidth_rule::fixed(1.0))[0], inv_sqrt_2pi, 1e-12);
    EXPECT_NEAR(inv_sqrt_2pi, 0.39894, 1e-5);
}

TEST(KdeDensity, FarTailIsNegligible) {
    const std::vector<double> s{-1, 0, 2}, x{2 + 100 * 0.5};
    EXPECT_LT(kde_density(s, x, bandwidth_rule::fixed(0.5))[0], 1e-30);
}

TEST(KdeDensity, StandardNormalSampleAtZero) {
    const auto s = normal_draws(1000, 2024);
    const std::vector<double> x{0};
    EXPECT_NEAR(kde_density(s, x, bandwidth_rule::silverman())[0], inv_sqrt_2pi, 0.05);
}

TEST(KdeDensity, MatchesDirectSumAndIsNonNegative) {
    const auto s = normal_draws(300, 6);
    std::vector<double> rep(s.begin(), s.begin() + 100);
    rep.insert(rep.end(), s.begin(), s.begin() + 50);  // repeated values
    const std::vector<double> x{-3, -0.5, 0, 0.25, 4, 40};
    const double h = 0.3;
    const auto d = kde_density_with_bandwidth(rep, x, h);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double direct = 0;
        for (double v : rep) direct += std::exp(-0.5 * (x[i] - v) * (x[i] - v) / (h * h));
        direct *= inv_sqrt_2pi / (h * static_cast<double>(rep.size()));
        EXPECT_NEAR(d[i], direct, 1e-12 + 1e-10 * direct);
        EXPECT_GE(d[i], 0.0);
    }
}

TEST(KdeDensity, DegenerateSampleFallsBackToFixedBandwidth) {
    const std::vector<double> s(10, 3.0), x{3.0};
    EXPECT_DOUBLE_EQ(silverman_bandwidth(s, 0.1), 0.1);
    EXPECT_NEAR(kde_density(s, x, bandwidth_rule::silverman())[0], inv_sqrt_2pi / 0.1, 1e-9);
    const std::vector<double> none;
    EXPECT_THROW(kde_density(none, x, bandwidth_rule::silverman()), std::invalid_argument);
    EXPECT_THROW(kde_density(s, x, bandwidth_rule::fixed(0.0)), std::invalid_argument);
}

TEST(KdeDensity, SilvermanRuleValue) {
    const std::vector<double> s{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    // sd = 3.02765, IQR/1.34 = 5/1.34 under the midpoint convention (quartiles 3 and 8)
    const double expected = 0.9 * std::min(std::sqrt(110.0 / 12), 5.0 / 1.34) * std::pow(10.0, -0.2);
    EXPECT_NEAR(silverman_bandwidth(s), expected, 1e-12);
}

TEST(WeightedSample, FrequenciesFollowWeights) {
    const std::vector<double> v{1, 2, 3}, w{0.2, 0.3, 0.5};
    std::mt19937_64 rng(3);
    const auto s = weighted_sample(v, w, 100000, rng);
    for (std::size_t k = 0; k < 3; ++k)
        EXPECT_NEAR(static_cast<double>(std::count(s.begin(), s.end(), v[k])) / 1e5, w[k], 0.01);
}

TEST(QActBackward, ZeroUpstreamGivesZero) {
    const auto z = normal_draws(100, 1);
    const auto r = qact_forward(z, qact_config{});
    std::mt19937_64 rng(0);
    const std::vector<double> g(z.size(), 0.0);
    for (double v : qact_backward(g, r.ctx, qact_config{}, rng)) EXPECT_EQ(v, 0.0);
}

TEST(QActBackward, SymmetricContextGivesSymmetricGradient) {
    std::vector<double> z;
    for (int i = 1; i <= 50; ++i) {
        z.push_back(0.05 * i);
        z.push_back(-0.05 * i);
    }
    const auto r = qact_forward(z, qact_config{});
    std::mt19937_64 rng(42);
    const std::vector<double> ones(z.size(), 1.0);
    const auto g = qact_backward(ones, r.ctx, exact_cfg(), rng);
    for (std::size_t i = 0; i < z.size(); i += 2) EXPECT_NEAR(g[i], g[i + 1], 0.05) << z[i];
}

TEST(QActBackward, MatchesHistogramDensityOfGroundedContext) {
    const auto z = normal_draws(4096, 77);
    const auto r = qact_forward(z, qact_config{});
    std::mt19937_64 rng(7);
    const std::vector<double> ones(z.size(), 1.0);
    const auto g = qact_backward(ones, r.ctx, exact_cfg(), rng);

    // Weighted histogram of the grounded, padded population in a bin around zero.
    const auto pop = ground_and_pad(z, qact_config{});
    const double half_width = 0.15;
    double mass = 0;
    for (std::size_t i = 0; i < pop.values.size(); ++i)
        if (std::abs(pop.values[i]) < half_width) mass += pop.weights[i];
    const double oracle = mass / (2 * half_width);

    const auto nearest = std::min_element(z.begin(), z.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    EXPECT_NEAR(g[static_cast<std::size_t>(nearest - z.begin())], oracle, 0.08);
}

TEST(QActBackward, GradientNeverFlipsSign) {
    for (int seed = 0; seed < 20; ++seed) {
        const auto z = normal_draws(128, 400 + seed, 2.0);
        const auto up = normal_draws(128, 500 + seed);
        const auto r = qact_forward(z, qact_config{});
        std::mt19937_64 rng(seed);
        const auto g = qact_backward(up, r.ctx, exact_cfg(), rng);
        for (std::size_t i = 0; i < z.size(); ++i) EXPECT_GE(g[i] * up[i], 0.0);
    }
}

TEST(QActBackward, InterpolatedDensityTracksExact) {
    const auto z = normal_draws(3000, 12, 1.5);
    const auto r = qact_forward(z, qact_config{});
    const std::vector<double> ones(z.size(), 1.0);
    auto cfg = exact_cfg();
    std::mt19937_64 rng_a(5), rng_b(5);
    const auto exact = qact_backward(ones, r.ctx, cfg, rng_a);
    cfg.density = density_eval::interpolated;
    const auto interp = qact_backward(ones, r.ctx, cfg, rng_b);
    double worst = 0;
    for (std::size_t i = 0; i < z.size(); ++i) worst = std::max(worst, std::abs(exact[i] - interp[i]));
    EXPECT_LT(worst, 0.01);
}

TEST(QActBackward, LengthMismatchThrows) {
    const std::vector<double> z{1, 2, 3}, g{1, 1};
    const auto r = qact_forward(z, qact_config{});
    std::mt19937_64 rng(0);
    EXPECT_THROW(qact_backward(g, r.ctx, qact_config{}, rng), std::invalid_argument);
}

TEST(QActLayer, PermutedColumnGivesPermutedOutput) {
    const std::size_t b = 40;
    const auto col = normal_draws(b, 31);
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(2));
    tensor64 x = tensor64::zeros({b, 2});
    for (std::size_t i = 0; i < b; ++i) {
        x[i * 2] = col[i];
        x[i * 2 + 1] = col[perm[i]];
    }
    const auto y = qact_layer<double>()(x, context_layout::dense);
    for (std::size_t i = 0; i < b; ++i) EXPECT_EQ(y[i * 2 + 1], y[perm[i] * 2]);
}

TEST(QActLayer, ConvChannelEqualsFlattenedDenseContext) {
    const auto v = normal_draws(8, 13);
    tensor64 conv({2, 1, 2, 2}, v);
    tensor64 dense({8, 1}, v);
    auto a = qact_layer<double>()(conv, context_layout::conv).values();
    auto b = qact_layer<double>()(dense, context_layout::dense).values();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
}

TEST(QActLayer, ConvChannelsAreIndependentContexts) {
    tensor64 x = tensor64::zeros({2, 2, 2, 2});
    const auto v = normal_draws(16, 21);
    for (std::size_t i = 0; i < 16; ++i) x[i] = v[i];
    const auto y = qact_layer<double>()(x, context_layout::conv);
    for (std::size_t ch = 0; ch < 2; ++ch) {
        std::vector<double> z;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t p = 0; p < 4; ++p) z.push_back(x[(b * 2 + ch) * 4 + p]);
        const auto expect = qact_forward(z, qact_config{}).activations;
        std::size_t k = 0;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(y[(b * 2 + ch) * 4 + p], expect[k++]);
    }
}

TEST(QActLayer, ConstantPositiveChannelSitsAboveMedian) {
    const auto y = qact_layer<double>()(tensor64::full({6, 1}, 3.0), context_layout::dense);
    for (double v : y.values()) {
        EXPECT_EQ(v, y[0]);
        EXPECT_GT(v, 0.5);
    }
}

TEST(QActLayer, LayoutMismatchIsDimensionError) {
    qact_layer<double> layer;
    EXPECT_THROW(layer(tensor64::zeros({2, 3}), context_layout::conv), dimension_error);
    EXPECT_THROW(layer(tensor64::zeros({2, 3, 4, 4}), context_layout::dense), dimension_error);
}

TEST(QActLayer, ComposesWithMatmulAndIsReproducible) {
    auto run = [](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        auto x = tensor::randn({32, 3}, rng);
        auto w = tensor::randn({3, 4}, rng, 1.0f, true);
        qact_config cfg;
        cfg.rng_seed = 11;
        qact_layer<float> act(cfg, 0);
        auto v = tensor::randn({4, 1}, rng);
        auto loss = sum(matmul(act(matmul(x, w), context_layout::dense), v));
        backward(loss);
        return std::vector<float>(w.grad().begin(), w.grad().end());
    };
    const auto g1 = run(3);
    const auto g2 = run(3);
    EXPECT_EQ(g1, g2);
    double norm = 0;
    for (float v : g1) norm += std::abs(v);
    EXPECT_GT(norm, 0.0);
}
