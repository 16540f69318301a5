#pragma once

#include <span>
#include <string>
#include <vector>

#include "quantact/metrics.hpp"

namespace quantact {

struct mean_sd {
    double mean = 0;
    double sd = 0;  // sample standard deviation, 0 for a single value
};

mean_sd summarize(std::span<const double> values);

// One (activation, head, dataset, severity) cell averaged over the merged reports.
struct merged_row {
    std::string activation;
    std::string head;
    std::string dataset;
    int severity = 0;
    std::size_t runs = 0;
    mean_sd accuracy, drop, ece_marginal, ece_top_label, map_at_k;
};

// Groups reports by activation and head. Every report must carry the same
// (dataset, severity) grid, otherwise report_error. `drop` is clean accuracy minus the
// cell accuracy, per report.
std::vector<merged_row> merge_reports(const std::vector<metrics_report>& reports);

std::string merged_to_csv(const std::vector<merged_row>& rows);

struct svg_series {
    std::string label;
    std::vector<double> x, y, err;  // err may be empty
};

// Self-contained SVG documents (no scripts, fonts or external references).
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<svg_series>& series);

struct svg_histogram_series {
    std::string label;
    std::vector<double> values;
};

std::string svg_histogram(const std::string& title, const std::string& x_label,
                          const std::vector<svg_histogram_series>& series, std::size_t bins, double lo, double hi);

}  // namespace quantact
