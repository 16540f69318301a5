#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace quantact {

// Row-major [rows, cols] view of probabilities or embeddings.
struct matrix_view {
    std::span<const double> data;
    std::size_t rows = 0, cols = 0;

    matrix_view() = default;
    matrix_view(std::span<const double> d, std::size_t r, std::size_t c);
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

// Row-wise argmax, ties to the lowest class index.
std::vector<std::size_t> argmax_rows(matrix_view probs);

enum class binning { equal_mass, equal_width };
enum class calibration_variant { marginal, top_label };

struct calibration_config {
    std::size_t num_bins = 10;
    binning scheme = binning::equal_mass;
    calibration_variant variant = calibration_variant::top_label;
};

// Binned calibration error of (confidence, outcome) pairs: sum over bins of
// (bin mass) * |mean confidence - mean outcome|. Equal-mass bins never split equal
// confidences.
double binned_calibration_error(std::span<const double> confidence, std::span<const double> outcome,
                                std::size_t num_bins, binning scheme);

// top_label bins max-class confidence against correctness; marginal averages the
// one-vs-rest error of every class column with equal weight.
double ece(matrix_view probs, std::span<const std::size_t> labels, const calibration_config& cfg = {});

// Mean over queries of average precision among the k nearest other samples
// (Euclidean, ties by index). AP is normalized by the number of same-class hits in
// the top k, and is 0 when there are none.
double map_at_k(matrix_view embeddings, std::span<const std::size_t> labels, std::size_t k);

// drop[i][j] = accuracy[i] - accuracy[j] for severities 0..5.
using drop_table = std::vector<std::vector<double>>;
drop_table acc_drop_table(const std::map<int, double>& accuracy_by_severity);

struct severity_metrics {
    std::string dataset;  // distortion name, or "clean"
    int severity = 0;
    double accuracy = 0;
    double ece_marginal = 0;
    double ece_top_label = 0;
    double map_at_k = 0;
};

struct batch_sweep_point {
    std::string dataset;
    int severity = 0;
    std::size_t eval_batch = 0;
    double accuracy = 0;
};

struct metrics_report {
    std::string activation;
    std::string head;
    std::uint64_t seed = 0;
    std::size_t eval_batch = 0;
    std::size_t map_k = 0;
    std::vector<severity_metrics> rows;
    std::vector<batch_sweep_point> batch_sweep;
    std::vector<std::string> gaps;  // (dataset, severity) combinations that could not be evaluated

    // Per-dataset accuracy-drop tables built from `rows`.
    std::map<std::string, drop_table> acc_drop() const;
};

std::string report_to_json(const metrics_report& r);
metrics_report report_from_json(const std::string& text);
std::string report_to_csv(const metrics_report& r);

}  // namespace quantact
