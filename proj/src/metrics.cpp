#include "quantact/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "quantact/errors.hpp"

namespace quantact {

matrix_view::matrix_view(std::span<const double> d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {
    if (d.size() != r * c) throw dimension_error("matrix_view: " + std::to_string(d.size()) + " values for " +
                                                 std::to_string(r) + "x" + std::to_string(c));
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
    if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
    if (predictions.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<std::size_t> argmax_rows(matrix_view probs) {
    std::vector<std::size_t> out(probs.rows);
    for (std::size_t r = 0; r < probs.rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.cols; ++c)
            if (probs(r, c) > probs(r, best)) best = c;
        out[r] = best;
    }
    return out;
}

double binned_calibration_error(std::span<const double> confidence, std::span<const double> outcome,
                                std::size_t num_bins, binning scheme) {
    if (num_bins < 2) throw std::invalid_argument("calibration: num_bins must be at least 2");
    if (confidence.size() != outcome.size()) throw std::invalid_argument("calibration: length mismatch");
    const std::size_t n = confidence.size();
    if (n == 0) throw std::invalid_argument("calibration: empty input");

    std::vector<std::size_t> bin_of(n);
    if (scheme == binning::equal_width) {
        for (std::size_t i = 0; i < n; ++i) {
            const double c = std::clamp(confidence[i], 0.0, 1.0);
            bin_of[i] = std::min(num_bins - 1, static_cast<std::size_t>(c * static_cast<double>(num_bins)));
        }
    } else {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return confidence[a] < confidence[b]; });
        std::size_t bin = 0;
        for (std::size_t k = 0; k < n; ++k) {
            // Advance to the next bin only between distinct confidence values.
            const std::size_t target = std::min(num_bins - 1, k * num_bins / n);
            if (target > bin && confidence[order[k]] != confidence[order[k - 1]]) bin = target;
            bin_of[order[k]] = bin;
        }
    }

    std::vector<double> conf_sum(num_bins, 0.0), out_sum(num_bins, 0.0), count(num_bins, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        conf_sum[bin_of[i]] += confidence[i];
        out_sum[bin_of[i]] += outcome[i];
        count[bin_of[i]] += 1;
    }
    double err = 0;
    for (std::size_t b = 0; b < num_bins; ++b)
        if (count[b] > 0) err += std::abs(conf_sum[b] - out_sum[b]) / static_cast<double>(n);
    return err;
}

double ece(matrix_view probs, std::span<const std::size_t> labels, const calibration_config& cfg) {
    if (probs.rows != labels.size()) throw std::invalid_argument("ece: label count does not match rows");
    if (probs.rows == 0) throw std::invalid_argument("ece: empty input");
    for (double p : probs.data)
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("ece: probabilities must lie in [0, 1]");
    const std::size_t n = probs.rows;
    if (cfg.variant == calibration_variant::top_label) {
        const auto pred = argmax_rows(probs);
        std::vector<double> conf(n), hit(n);
        for (std::size_t i = 0; i < n; ++i) {
            conf[i] = probs(i, pred[i]);
            hit[i] = pred[i] == labels[i] ? 1.0 : 0.0;
        }
        return binned_calibration_error(conf, hit, cfg.num_bins, cfg.scheme);
    }
    double total = 0;
    std::vector<double> conf(n), hit(n);
    for (std::size_t c = 0; c < probs.cols; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            conf[i] = probs(i, c);
            hit[i] = labels[i] == c ? 1.0 : 0.0;
        }
        total += binned_calibration_error(conf, hit, cfg.num_bins, cfg.scheme);
    }
    return total / static_cast<double>(probs.cols);
}

double map_at_k(matrix_view embeddings, std::span<const std::size_t> labels, std::size_t k) {
    const std::size_t n = embeddings.rows, d = embeddings.cols;
    if (k == 0) throw std::invalid_argument("map_at_k: k must be positive");
    if (k >= n) throw std::invalid_argument("map_at_k: k must be smaller than the number of samples");
    if (labels.size() != n) throw std::invalid_argument("map_at_k: label count mismatch");

    using mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const mat> x(embeddings.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    const Eigen::VectorXd norms = x.rowwise().squaredNorm();
    constexpr std::size_t block = 256;
    double total = 0;
    std::vector<std::size_t> idx(n);
    for (std::size_t q0 = 0; q0 < n; q0 += block) {
        const std::size_t qn = std::min(block, n - q0);
        const auto qi = static_cast<Eigen::Index>(q0), qc = static_cast<Eigen::Index>(qn);
        mat dist = (-2.0 * x.middleRows(qi, qc) * x.transpose()).rowwise() + norms.transpose();
        dist.colwise() += norms.segment(qi, qc);
        for (std::size_t r = 0; r < qn; ++r) {
            const std::size_t q = q0 + r;
            auto key = [&](std::size_t j) { return std::pair(dist(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)), j); };
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::swap(idx[q], idx[n - 1]);
            std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end() - 1,
                              [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
            double hits = 0, ap = 0;
            for (std::size_t j = 0; j < k; ++j)
                if (labels[idx[j]] == labels[q]) {
                    hits += 1;
                    ap += hits / static_cast<double>(j + 1);
                }
            total += hits > 0 ? ap / hits : 0.0;
        }
    }
    return total / static_cast<double>(n);
}

drop_table acc_drop_table(const std::map<int, double>& accuracy_by_severity) {
    for (int s = 0; s <= 5; ++s)
        if (!accuracy_by_severity.count(s)) throw report_error("acc_drop_table: missing severity " + std::to_string(s));
    drop_table t(6, std::vector<double>(6));
    for (int i = 0; i <= 5; ++i)
        for (int j = 0; j <= 5; ++j) t[i][j] = accuracy_by_severity.at(i) - accuracy_by_severity.at(j);
    return t;
}

std::map<std::string, drop_table> metrics_report::acc_drop() const {
    std::map<std::string, std::map<int, double>> by_dataset;
    for (const auto& r : rows) by_dataset[r.dataset][r.severity] = r.accuracy;
    std::map<std::string, drop_table> out;
    for (auto& [name, acc] : by_dataset) {
        if (name == "clean") continue;
        if (!acc.count(0))
            for (const auto& r : rows)
                if (r.dataset == "clean") acc[0] = r.accuracy;
        bool complete = true;
        for (int s = 0; s <= 5; ++s) complete = complete && acc.count(s);
        if (complete) out[name] = acc_drop_table(acc);
    }
    return out;
}

std::string report_to_json(const metrics_report& r) {
    nlohmann::json j;
    j["activation"] = r.activation;
    j["head"] = r.head;
    j["seed"] = r.seed;
    j["eval_batch"] = r.eval_batch;
    j["map_k"] = r.map_k;
    j["rows"] = nlohmann::json::array();
    for (const auto& m : r.rows)
        j["rows"].push_back({{"dataset", m.dataset},
                             {"severity", m.severity},
                             {"accuracy", m.accuracy},
                             {"ece_marginal", m.ece_marginal},
                             {"ece_top_label", m.ece_top_label},
                             {"map_at_k", m.map_at_k}});
    j["batch_sweep"] = nlohmann::json::array();
    for (const auto& p : r.batch_sweep)
        j["batch_sweep"].push_back(
            {{"dataset", p.dataset}, {"severity", p.severity}, {"eval_batch", p.eval_batch}, {"accuracy", p.accuracy}});
    j["acc_drop"] = nlohmann::json::object();
    for (const auto& [name, table] : r.acc_drop()) j["acc_drop"][name] = table;
    j["gaps"] = r.gaps;
    return j.dump(2) + "\n";
}

metrics_report report_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw report_error(std::string("metrics report is not valid JSON: ") + e.what());
    }
    try {
        metrics_report r;
        r.activation = j.at("activation").get<std::string>();
        r.head = j.at("head").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.eval_batch = j.at("eval_batch").get<std::size_t>();
        r.map_k = j.at("map_k").get<std::size_t>();
        for (const auto& m : j.at("rows"))
            r.rows.push_back({m.at("dataset"), m.at("severity"), m.at("accuracy"), m.at("ece_marginal"),
                              m.at("ece_top_label"), m.at("map_at_k")});
        for (const auto& p : j.at("batch_sweep"))
            r.batch_sweep.push_back({p.at("dataset"), p.at("severity"), p.at("eval_batch"), p.at("accuracy")});
        r.gaps = j.at("gaps").get<std::vector<std::string>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw report_error(std::string("malformed metrics report: ") + e.what());
    }
}

std::string report_to_csv(const metrics_report& r) {
    std::ostringstream out;
    out.precision(std::numeric_limits<double>::max_digits10);
    out << "dataset,severity,accuracy,ece_marginal,ece_top_label,map_at_k\n";
    for (const auto& m : r.rows)
        out << m.dataset << ',' << m.severity << ',' << m.accuracy << ',' << m.ece_marginal << ',' << m.ece_top_label << ','
            << m.map_at_k << '\n';
    return out.str();
}

}  // namespace quantact
