#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "quantact/errors.hpp"
#include "quantact/metrics.hpp"

using namespace quantact;

namespace {

// Direct equal-width oracle: partitions [0,1] into bins by explicit edges.
double equal_width_oracle(const std::vector<double>& conf, const std::vector<double>& out, std::size_t bins) {
    double err = 0;
    for (std::size_t b = 0; b < bins; ++b) {
        const double lo = static_cast<double>(b) / static_cast<double>(bins), hi = static_cast<double>(b + 1) / static_cast<double>(bins);
        double cs = 0, os = 0;
        for (std::size_t i = 0; i < conf.size(); ++i) {
            const bool in = conf[i] >= lo && (conf[i] < hi || (b + 1 == bins && conf[i] <= hi));
            if (!in) continue;
            cs += conf[i];
            os += out[i];
        }
        err += std::abs(cs - os);
    }
    return err / static_cast<double>(conf.size());
}

double map_oracle(const std::vector<double>& x, std::size_t d, const std::vector<std::size_t>& y, std::size_t k) {
    const std::size_t n = y.size();
    double total = 0;
    for (std::size_t q = 0; q < n; ++q) {
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == q) continue;
            double s = 0;
            for (std::size_t c = 0; c < d; ++c) s += (x[q * d + c] - x[j * d + c]) * (x[q * d + c] - x[j * d + c]);
            ranked.emplace_back(s, j);
        }
        std::sort(ranked.begin(), ranked.end());
        double hits = 0, ap = 0;
        for (std::size_t r = 0; r < k; ++r)
            if (y[ranked[r].second] == y[q]) ap += ++hits / static_cast<double>(r + 1);
        total += hits > 0 ? ap / hits : 0;
    }
    return total / static_cast<double>(n);
}

}  // namespace

TEST(Accuracy, DirectCounts) {
    const std::vector<std::size_t> y{0, 1, 2, 3};
    EXPECT_EQ(accuracy(y, y), 1.0);
    EXPECT_EQ(accuracy(std::vector<std::size_t>{1, 2, 3, 0}, y), 0.0);
    EXPECT_EQ(accuracy(std::vector<std::size_t>{0, 1, 2, 0}, y), 0.75);
    EXPECT_THROW(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), std::invalid_argument);
    EXPECT_THROW(accuracy(std::vector<std::size_t>{0}, y), std::invalid_argument);
}

TEST(Ece, ConstructedCalibratedSetIsZero) {
    std::vector<double> probs;
    std::vector<std::size_t> labels;
    for (int i = 0; i < 10; ++i) {
        probs.insert(probs.end(), {0.3, 0.7});
        labels.push_back(i < 7 ? 1 : 0);
    }
    for (int i = 0; i < 10; ++i) {
        probs.insert(probs.end(), {0.8, 0.2});
        labels.push_back(i < 2 ? 1 : 0);
    }
    const matrix_view m(probs, 20, 2);
    for (auto scheme : {binning::equal_mass, binning::equal_width})
        for (auto variant : {calibration_variant::marginal, calibration_variant::top_label})
            EXPECT_NEAR(ece(m, labels, {10, scheme, variant}), 0.0, 1e-12);
}

TEST(Ece, ConfidentHalfRightTopLabelIsHalf) {
    const std::vector<double> probs{1, 0, 1, 0, 0, 1, 0, 1};
    const std::vector<std::size_t> labels{0, 1, 1, 0};
    for (auto scheme : {binning::equal_mass, binning::equal_width})
        EXPECT_DOUBLE_EQ(ece(matrix_view(probs, 4, 2), labels, {10, scheme, calibration_variant::top_label}), 0.5);
}

TEST(Ece, MatchesDirectSummationOracle) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 200, l = 3;
        std::vector<double> probs(n * l);
        std::vector<std::size_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t c = 0; c < l; ++c) s += probs[i * l + c] = u(rng);
            for (std::size_t c = 0; c < l; ++c) probs[i * l + c] /= s;
            labels[i] = static_cast<std::size_t>(u(rng) * l);
        }
        const matrix_view m(probs, n, l);
        double marginal = 0;
        for (std::size_t c = 0; c < l; ++c) {
            std::vector<double> conf(n), out(n);
            for (std::size_t i = 0; i < n; ++i) {
                conf[i] = probs[i * l + c];
                out[i] = labels[i] == c;
            }
            marginal += equal_width_oracle(conf, out, 10) / l;
        }
        EXPECT_NEAR(ece(m, labels, {10, binning::equal_width, calibration_variant::marginal}), marginal, 1e-10);

        const auto pred = argmax_rows(m);
        std::vector<double> conf(n), hit(n);
        for (std::size_t i = 0; i < n; ++i) {
            conf[i] = probs[i * l + pred[i]];
            hit[i] = pred[i] == labels[i];
        }
        EXPECT_NEAR(ece(m, labels, {10, binning::equal_width, calibration_variant::top_label}),
                    equal_width_oracle(conf, hit, 10), 1e-10);

        // Distinct confidences: equal-mass bins are consecutive blocks of n / bins sorted values.
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return conf[a] < conf[b]; });
        double mass = 0;
        for (std::size_t b = 0; b < 10; ++b) {
            double cs = 0, hs = 0;
            for (std::size_t k = b * 20; k < (b + 1) * 20; ++k) {
                cs += conf[order[k]];
                hs += hit[order[k]];
            }
            mass += std::abs(cs - hs) / n;
        }
        EXPECT_NEAR(ece(m, labels, {10, binning::equal_mass, calibration_variant::top_label}), mass, 1e-10);
    }
}

TEST(Ece, EqualMassNeverSplitsTies) {
    const std::vector<double> conf{0.5, 0.5, 0.5, 0.5, 0.9, 0.9}, out{1, 1, 0, 0, 1, 0};
    // Ties form bins {0.5 x4} and {0.9 x2}: |2 - 2| + |1.8 - 1| = 0.8 over 6.
    EXPECT_NEAR(binned_calibration_error(conf, out, 3, binning::equal_mass), 0.8 / 6, 1e-15);
}

TEST(Ece, InvalidInputsThrow) {
    const std::vector<double> p{0.5, 1.5};
    const std::vector<std::size_t> y{0};
    EXPECT_THROW(ece(matrix_view(p, 1, 2), y), std::invalid_argument);
    EXPECT_THROW(binned_calibration_error(p, p, 1, binning::equal_mass), std::invalid_argument);
}

TEST(MapAtK, CollapsedClassesArePerfect) {
    std::vector<double> x;
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < 30; ++i) {
        y.push_back(i % 3);
        x.insert(x.end(), {10.0 * static_cast<double>(i % 3), -5.0 * static_cast<double>(i % 3)});
    }
    EXPECT_DOUBLE_EQ(map_at_k(matrix_view(x, 30, 2), y, 9), 1.0);
}

TEST(MapAtK, RandomBalancedLabelsNearHalf) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    const std::size_t n = 2000;
    std::vector<double> x(n * 4);
    for (auto& v : x) v = g(rng);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = i % 2;
    std::shuffle(y.begin(), y.end(), rng);
    EXPECT_NEAR(map_at_k(matrix_view(x, n, 4), y, 100), 0.5, 0.05);
}

TEST(MapAtK, FourPointHandInstance) {
    const std::vector<double> x{0, 1, 3, 6};
    const std::vector<std::size_t> y{0, 0, 1, 1};
    // k = 2. Query 0: [1, 3] -> AP 1. Query 1: [0, 3] -> AP 1. Query 3 (at 3): [1, 0]
    // by distance 2, 3 -> no hit -> 0. Query 6: [3, 1] -> hit at rank 1 -> 1.
    EXPECT_DOUBLE_EQ(map_at_k(matrix_view(x, 4, 1), y, 2), 0.75);
    EXPECT_DOUBLE_EQ(map_at_k(matrix_view(x, 4, 1), y, 2), map_oracle(x, 1, y, 2));
}

TEST(MapAtK, MatchesBruteForceAcrossBlocks) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    const std::size_t n = 600, d = 3;
    std::vector<double> x(n * d);
    for (auto& v : x) v = g(rng);
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = rng() % 4;
    EXPECT_NEAR(map_at_k(matrix_view(x, n, d), y, 10), map_oracle(x, d, y, 10), 1e-12);
}

TEST(MapAtK, InvalidKThrows) {
    const std::vector<double> x{0, 1};
    const std::vector<std::size_t> y{0, 1};
    EXPECT_THROW(map_at_k(matrix_view(x, 2, 1), y, 0), std::invalid_argument);
    EXPECT_THROW(map_at_k(matrix_view(x, 2, 1), y, 2), std::invalid_argument);
}

TEST(AccDrop, ReproducesPublishedDifferences) {
    std::map<int, double> relu{{0, 90.48}, {1, 80}, {2, 70}, {3, 60}, {4, 50}, {5, 35.86}};
    std::map<int, double> qact{{0, 88.02}, {1, 80}, {2, 75}, {3, 70}, {4, 68}, {5, 65.34}};
    EXPECT_NEAR(acc_drop_table(relu)[0][5], 54.62, 1e-9);
    EXPECT_NEAR(acc_drop_table(qact)[0][5], 22.68, 1e-9);
}

TEST(AccDrop, ArithmeticInvariants) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u;
    std::map<int, double> acc;
    for (int s = 0; s <= 5; ++s) acc[s] = u(rng);
    const auto t = acc_drop_table(acc);
    for (int i = 0; i <= 5; ++i)
        for (int j = 0; j <= 5; ++j) {
            EXPECT_EQ(t[i][j], acc[i] - acc[j]);
            EXPECT_EQ(t[i][j], -t[j][i]);
        }
    std::map<int, double> flat{{0, .5}, {1, .5}, {2, .5}, {3, .5}, {4, .5}, {5, .5}};
    for (const auto& r : acc_drop_table(flat))
        for (double v : r) EXPECT_EQ(v, 0.0);
    acc.erase(3);
    EXPECT_THROW(acc_drop_table(acc), report_error);
}

TEST(Report, JsonRoundTripAndCsv) {
    metrics_report r;
    r.activation = "qact";
    r.head = "quantile";
    r.seed = 7;
    r.eval_batch = 1024;
    r.map_k = 10;
    r.rows.push_back({"clean", 0, 0.99, 0.01, 0.02, 0.95});
    for (int s = 1; s <= 5; ++s) r.rows.push_back({"gaussian_noise", s, 0.99 - 0.1 * s, 0.01 * s, 0.02 * s, 0.9});
    r.batch_sweep.push_back({"gaussian_noise", 5, 64, 0.4});
    r.gaps.push_back("mnistc/fog");
    const auto text = report_to_json(r);
    const auto back = report_from_json(text);
    EXPECT_EQ(report_to_json(back), text);
    const auto drops = back.acc_drop();
    ASSERT_EQ(drops.count("gaussian_noise"), 1u);
    EXPECT_EQ(drops.at("gaussian_noise")[0][5], 0.99 - (0.99 - 0.5));
    const auto csv = report_to_csv(r);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
    EXPECT_THROW(report_from_json("{"), report_error);
    EXPECT_THROW(report_from_json("{}"), report_error);
}
