#include "quantact/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "quantact/errors.hpp"

namespace quantact {

mean_sd summarize(std::span<const double> values) {
    mean_sd s;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() < 2) return s;
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return s;
}

std::vector<merged_row> merge_reports(const std::vector<metrics_report>& reports) {
    if (reports.empty()) throw report_error("merge_reports: no reports");
    using cell = std::pair<std::string, int>;
    auto grid_of = [](const metrics_report& r) {
        std::set<cell> g;
        for (const auto& row : r.rows) g.insert({row.dataset, row.severity});
        return g;
    };
    const auto grid = grid_of(reports.front());
    for (std::size_t i = 1; i < reports.size(); ++i)
        if (grid_of(reports[i]) != grid)
            throw report_error("merge_reports: report " + std::to_string(i) + " has a different (dataset, severity) grid");

    struct values {
        std::vector<double> acc, drop, em, et, map;
    };
    std::map<std::tuple<std::string, std::string, std::string, int>, values> cells;
    for (const auto& r : reports) {
        double clean = NAN;
        for (const auto& row : r.rows)
            if (row.dataset == "clean") clean = row.accuracy;
        for (const auto& row : r.rows) {
            auto& v = cells[{r.activation, r.head, row.dataset, row.severity}];
            v.acc.push_back(row.accuracy);
            v.drop.push_back(std::isnan(clean) ? 0.0 : clean - row.accuracy);
            v.em.push_back(row.ece_marginal);
            v.et.push_back(row.ece_top_label);
            v.map.push_back(row.map_at_k);
        }
    }
    std::vector<merged_row> out;
    for (const auto& [key, v] : cells) {
        merged_row m;
        std::tie(m.activation, m.head, m.dataset, m.severity) = key;
        m.runs = v.acc.size();
        m.accuracy = summarize(v.acc);
        m.drop = summarize(v.drop);
        m.ece_marginal = summarize(v.em);
        m.ece_top_label = summarize(v.et);
        m.map_at_k = summarize(v.map);
        out.push_back(m);
    }
    return out;
}

std::string merged_to_csv(const std::vector<merged_row>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "activation,head,dataset,severity,runs,accuracy_mean,accuracy_sd,drop_mean,drop_sd,ece_marginal_mean,"
          "ece_marginal_sd,ece_top_label_mean,ece_top_label_sd,map_mean,map_sd\n";
    for (const auto& r : rows) {
        os << r.activation << ',' << r.head << ',' << r.dataset << ',' << r.severity << ',' << r.runs;
        for (const auto* s : {&r.accuracy, &r.drop, &r.ece_marginal, &r.ece_top_label, &r.map_at_k})
            os << ',' << s->mean << ',' << s->sd;
        os << '\n';
    }
    return os.str();
}

namespace {

constexpr double width = 640, height = 400, left = 70, right = 160, top = 40, bottom = 50;
const char* const palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct frame {
    double x0, x1, y0, y1;
    double px(double x) const { return left + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (width - left - right); }
    double py(double y) const { return height - bottom - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (height - top - bottom); }
};

void open_svg(std::ostringstream& os, const std::string& title, const std::string& x_label, const std::string& y_label,
              const frame& f) {
    os.precision(6);
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
       << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n"
       << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right << "\" y2=\""
       << height - bottom << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << height - bottom
       << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << (left + width - right) / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
       << escape(x_label) << "</text>\n"
       << "<text x=\"16\" y=\"" << height / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << height / 2
       << ")\">" << escape(y_label) << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = f.x0 + (f.x1 - f.x0) * k / 4, yv = f.y0 + (f.y1 - f.y0) * k / 4;
        os << "<text x=\"" << f.px(xv) << "\" y=\"" << height - bottom + 16 << "\" text-anchor=\"middle\">" << xv
           << "</text>\n"
           << "<text x=\"" << left - 6 << "\" y=\"" << f.py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
    }
}

void legend(std::ostringstream& os, std::size_t k, const std::string& label) {
    const double y = top + 16 * static_cast<double>(k);
    os << "<rect x=\"" << width - right + 12 << "\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\"" << palette[k % 6]
       << "\"/>\n<text x=\"" << width - right + 30 << "\" y=\"" << y + 10 << "\">" << escape(label) << "</text>\n";
}

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<svg_series>& series) {
    frame f{INFINITY, -INFINITY, INFINITY, -INFINITY};
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double e = s.err.empty() ? 0.0 : s.err[i];
            f.x0 = std::min(f.x0, s.x[i]);
            f.x1 = std::max(f.x1, s.x[i]);
            f.y0 = std::min(f.y0, s.y[i] - e);
            f.y1 = std::max(f.y1, s.y[i] + e);
        }
    if (!std::isfinite(f.x0)) f = {0, 1, 0, 1};
    std::ostringstream os;
    open_svg(os, title, x_label, y_label, f);
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* colour = palette[k % 6];
        os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) os << f.px(s.x[i]) << ',' << f.py(s.y[i]) << ' ';
        os << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            os << "<circle cx=\"" << f.px(s.x[i]) << "\" cy=\"" << f.py(s.y[i]) << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
            if (!s.err.empty() && s.err[i] > 0)
                os << "<line x1=\"" << f.px(s.x[i]) << "\" y1=\"" << f.py(s.y[i] - s.err[i]) << "\" x2=\"" << f.px(s.x[i])
                   << "\" y2=\"" << f.py(s.y[i] + s.err[i]) << "\" stroke=\"" << colour << "\"/>\n";
        }
        legend(os, k, s.label);
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_histogram(const std::string& title, const std::string& x_label,
                          const std::vector<svg_histogram_series>& series, std::size_t bins, double lo, double hi) {
    if (bins == 0 || !(hi > lo)) throw std::invalid_argument("svg_histogram: need bins > 0 and hi > lo");
    std::vector<std::vector<double>> counts;
    double peak = 1;
    for (const auto& s : series) {
        std::vector<double> c(bins, 0.0);
        for (double v : s.values) {
            auto b = static_cast<std::ptrdiff_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
            c[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1))] += 1;
        }
        peak = std::max(peak, *std::max_element(c.begin(), c.end()));
        counts.push_back(std::move(c));
    }
    const frame f{lo, hi, 0, peak};
    std::ostringstream os;
    open_svg(os, title, x_label, "count", f);
    const double bin_w = (hi - lo) / static_cast<double>(bins);
    for (std::size_t k = 0; k < series.size(); ++k) {
        for (std::size_t b = 0; b < bins; ++b) {
            if (counts[k][b] == 0) continue;
            const double x0 = f.px(lo + bin_w * static_cast<double>(b)), x1 = f.px(lo + bin_w * static_cast<double>(b + 1));
            os << "<rect x=\"" << x0 << "\" y=\"" << f.py(counts[k][b]) << "\" width=\"" << x1 - x0 << "\" height=\""
               << f.py(0) - f.py(counts[k][b]) << "\" fill=\"" << palette[k % 6] << "\" fill-opacity=\"0.5\"/>\n";
        }
        legend(os, k, series[k].label);
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace quantact
