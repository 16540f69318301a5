#include <gtest/gtest.h>

#include <boost/property_tree/xml_parser.hpp>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "quantact/errors.hpp"
#include "quantact/experiments.hpp"
#include "quantact/report.hpp"

using namespace quantact;

namespace {

metrics_report fake_report(const std::string& activation, std::uint64_t seed, std::vector<double> acc) {
    metrics_report r;
    r.activation = activation;
    r.head = activation == "qact" ? "quantile" : "logistic";
    r.seed = seed;
    for (std::size_t s = 0; s < acc.size(); ++s) {
        severity_metrics m;
        m.dataset = s == 0 ? "clean" : "gaussian_noise";
        m.severity = static_cast<int>(s);
        m.accuracy = acc[s];
        m.ece_top_label = 0.01 * static_cast<double>(s);
        m.ece_marginal = 0.02 * static_cast<double>(s);
        m.map_at_k = 1 - acc[s];
        r.rows.push_back(m);
    }
    return r;
}

bool parses_as_xml(const std::string& text) {
    std::istringstream is(text);
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_xml(is, tree);
    } catch (const boost::property_tree::xml_parser_error&) {
        return false;
    }
    return tree.count("svg") == 1;
}

}  // namespace

TEST(SplitIndices, DisjointCoveringAndSeeded) {
    const auto s = split_indices(1000, 0.2, 42);
    EXPECT_EQ(s.val.size(), 200u);
    EXPECT_EQ(s.train.size(), 800u);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    EXPECT_EQ(all.size(), 1000u);
    EXPECT_EQ(*all.rbegin(), 999u);
    const auto again = split_indices(1000, 0.2, 42);
    EXPECT_EQ(again.train, s.train);
    EXPECT_NE(split_indices(1000, 0.2, 43).train, s.train);
}

TEST(LossKind, RoundTripAndUnknownName) {
    for (auto k : {loss_kind::cross_entropy, loss_kind::triplet, loss_kind::watershed})
        EXPECT_EQ(parse_loss(to_string(k)), k);
    EXPECT_THROW(parse_loss("hinge"), config_error);
}

TEST(Toy, FixedTaskIsLearned) {
    toy_config cfg;
    cfg.activation = activation_kind::relu;
    cfg.resample_tasks = false;
    cfg.train_steps = 400;
    cfg.tasks = 5;
    const auto r = run_toy(cfg);
    ASSERT_EQ(r.task_accuracy.size(), 5u);
    EXPECT_GE(r.mean, 0.99);
}

TEST(Toy, SameSeedSameResult) {
    toy_config cfg;
    cfg.activation = activation_kind::qact;
    cfg.train_steps = 20;
    cfg.tasks = 4;
    cfg.batch_size = 64;
    cfg.eval_batch = 64;
    const auto a = run_toy(cfg), b = run_toy(cfg);
    EXPECT_EQ(a.task_accuracy, b.task_accuracy);
    EXPECT_EQ(a.final_loss, b.final_loss);
    cfg.seed = 2;
    EXPECT_NE(run_toy(cfg).task_accuracy, a.task_accuracy);
}

TEST(LogisticHead, SeparableBlobsAndNormalizedRows) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    const std::size_t n = 300, d = 4, classes = 3;
    auto x = tensor::zeros({n, d});
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % classes;
        for (std::size_t k = 0; k < d; ++k)
            x[i * d + k] = static_cast<float>((k == y[i] ? 5.0 : 0.0) + 0.3 * g(rng));
    }
    const auto head = fit_logistic_head(x, y, classes, 30, 5e-2, 1);
    const auto p = logistic_proba(head, x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        std::size_t best = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            s += p[i * classes + c];
            if (p[i * classes + c] > p[i * classes + best]) best = c;
        }
        EXPECT_NEAR(s, 1.0, 1e-5);
        correct += best == y[i];
    }
    EXPECT_GE(static_cast<double>(correct) / n, 0.98);
}

TEST(Summarize, MatchesTwoPassSampleDeviation) {
    const std::vector<double> v{0.91, 0.87, 0.95, 0.90};
    const double m = (0.91 + 0.87 + 0.95 + 0.90) / 4;
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    const auto s = summarize(v);
    EXPECT_NEAR(s.mean, m, 1e-15);
    EXPECT_NEAR(s.sd, std::sqrt(ss / 3), 1e-15);
    const std::vector<double> one{0.5};
    EXPECT_EQ(summarize(one).sd, 0.0);
}

TEST(MergeReports, SingleReportIsIdentity) {
    const auto r = fake_report("relu", 0, {0.98, 0.97, 0.9});
    const auto merged = merge_reports({r});
    ASSERT_EQ(merged.size(), 3u);
    for (const auto& m : merged) {
        EXPECT_EQ(m.runs, 1u);
        EXPECT_EQ(m.accuracy.sd, 0.0);
        const auto& row = r.rows[static_cast<std::size_t>(m.severity)];
        EXPECT_EQ(m.accuracy.mean, row.accuracy);
        EXPECT_EQ(m.ece_top_label.mean, row.ece_top_label);
        EXPECT_DOUBLE_EQ(m.drop.mean, 0.98 - row.accuracy);
    }
}

TEST(MergeReports, AveragesSeedsAndSeparatesActivations) {
    const auto merged = merge_reports({fake_report("relu", 0, {0.9, 0.8}), fake_report("relu", 1, {0.8, 0.6}),
                                       fake_report("qact", 0, {0.7, 0.7})});
    ASSERT_EQ(merged.size(), 4u);
    for (const auto& m : merged) {
        if (m.activation != "relu" || m.severity != 1) continue;
        EXPECT_EQ(m.runs, 2u);
        EXPECT_NEAR(m.accuracy.mean, 0.7, 1e-12);
        EXPECT_NEAR(m.drop.mean, 0.15, 1e-12);
        EXPECT_NEAR(m.drop.sd, std::sqrt(0.005), 1e-12);
    }
    const auto csv = merged_to_csv(merged);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(MergeReports, MismatchedGridThrows) {
    EXPECT_THROW(merge_reports({fake_report("relu", 0, {0.9, 0.8}), fake_report("relu", 1, {0.9, 0.8, 0.7})}),
                 report_error);
    EXPECT_THROW(merge_reports({}), report_error);
}

TEST(Svg, LinePlotAndHistogramAreWellFormed) {
    const auto line = svg_line_plot("a < b & c", "severity", "accuracy",
                                    {{"relu/logistic", {0, 1, 2}, {0.9, 0.8, 0.7}, {0.01, 0.02, 0.0}},
                                     {"qact/quantile", {0, 1, 2}, {0.85, 0.84, 0.83}, {}}});
    EXPECT_TRUE(parses_as_xml(line));
    EXPECT_NE(line.find("a &lt; b &amp; c"), std::string::npos);
    EXPECT_EQ(line.find("<script"), std::string::npos);
    const auto hist = svg_histogram("tasks", "accuracy", {{"qact", {0.5, 0.9, 0.95, 1.0}}}, 10, 0.0, 1.0);
    EXPECT_TRUE(parses_as_xml(hist));
    EXPECT_TRUE(parses_as_xml(svg_line_plot("empty", "x", "y", {})));
    EXPECT_THROW(svg_histogram("t", "x", {}, 0, 0.0, 1.0), std::invalid_argument);
}

TEST(EpochLog, CsvHasOneLinePerEpoch) {
    const std::vector<epoch_record> log{{1, 0.5, 0.9, 1e-3, 2.0}, {2, 0.4, 0.92, 1e-3, 2.1}};
    const auto csv = epoch_log_csv(log);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_EQ(csv.rfind("epoch,", 0), 0u);
}
