#include "uaflow/cli/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "uaflow/error.hpp"

namespace uaflow::cli {

std::string num(double v) { return fmt::format("{}", v); }

void CsvWriter::row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw InvalidArgument("CSV row width does not match the header");
    rows_.push_back(std::move(cells));
}

void CsvWriter::save(const std::string& path) const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    write_text(path, out);
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << content;
    if (!f) throw IoError("write failed for " + path);
}

Matrix read_points_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    std::string line;
    if (!std::getline(f, line)) throw IoError(path + ": empty file");
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::stringstream ss(s);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        return cells;
    };
    const auto header = split(line);
    std::vector<std::size_t> cols;
    for (int d = 0;; ++d) {
        const auto it = std::find(header.begin(), header.end(), fmt::format("x{}", d));
        if (it == header.end()) break;
        cols.push_back(static_cast<std::size_t>(it - header.begin()));
    }
    if (cols.empty()) throw IoError(path + ": no x0 column in header");
    std::vector<double> values;
    std::size_t n = 0;
    for (int lineno = 2; std::getline(f, line); ++lineno) {
        if (line.empty()) continue;
        const auto cells = split(line);
        for (std::size_t c : cols) {
            if (c >= cells.size()) throw IoError(fmt::format("{}:{}: missing column", path, lineno));
            try {
                std::size_t used = 0;
                values.push_back(std::stod(cells[c], &used));
                if (used != cells[c].size()) throw std::invalid_argument("trailing text");
            } catch (const std::exception&) {
                throw IoError(fmt::format("{}:{}: bad number '{}'", path, lineno, cells[c]));
            }
        }
        ++n;
    }
    if (n == 0) throw IoError(path + ": no data rows");
    Matrix out(static_cast<Eigen::Index>(cols.size()), static_cast<Eigen::Index>(n));
    std::copy(values.begin(), values.end(), out.data());
    return out;
}

namespace {

constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

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

} // namespace

std::string svg_plot(const std::vector<Panel>& panels) {
    const double pw = 360, ph = 280, ml = 60, mr = 15, mt = 30, mb = 45;
    const double width = pw * static_cast<double>(std::max<std::size_t>(1, panels.size()));
    std::string s = fmt::format(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n"
        "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        width, ph, width, ph);
    for (std::size_t p = 0; p < panels.size(); ++p) {
        const auto& panel = panels[p];
        double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
        for (const auto& se : panel.series) {
            for (double v : se.x) if (std::isfinite(v)) x0 = std::min(x0, v), x1 = std::max(x1, v);
            for (double v : se.y) if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
        }
        if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
        if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
        if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
        const double ox = pw * static_cast<double>(p);
        auto px = [&](double v) { return ox + ml + (v - x0) / (x1 - x0) * (pw - ml - mr); };
        auto py = [&](double v) { return ph - mb - (v - y0) / (y1 - y0) * (ph - mt - mb); };

        s += fmt::format("<g class=\"panel\">\n<text x=\"{:.1f}\" y=\"18\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
                         ox + pw / 2, escape(panel.title));
        s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"black\"/>\n",
                         ox + ml, mt, pw - ml - mr, ph - mt - mb);
        s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                         ox + ml + (pw - ml - mr) / 2, ph - 8, escape(panel.xlabel));
        s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"11\" text-anchor=\"middle\" "
                         "transform=\"rotate(-90 {:.1f} {:.1f})\">{}</text>\n",
                         ox + 14, mt + (ph - mt - mb) / 2, ox + 14, mt + (ph - mt - mb) / 2, escape(panel.ylabel));
        for (double v : {x0, x1}) {
            s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"9\" text-anchor=\"middle\">{:.3g}</text>\n", px(v),
                             ph - mb + 12, v);
        }
        for (double v : {y0, y1}) {
            s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"9\" text-anchor=\"end\">{:.3g}</text>\n",
                             ox + ml - 3, py(v) + 3, v);
        }
        for (std::size_t k = 0; k < panel.series.size(); ++k) {
            const auto& se = panel.series[k];
            const char* color = kColors[k % std::size(kColors)];
            const std::size_t n = std::min(se.x.size(), se.y.size());
            if (panel.scatter) {
                s += fmt::format("<g class=\"series\" data-name=\"{}\" fill=\"{}\">\n", escape(se.name), color);
                for (std::size_t i = 0; i < n; ++i) {
                    if (!std::isfinite(se.x[i]) || !std::isfinite(se.y[i])) continue;
                    s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"1.6\"/>\n", px(se.x[i]), py(se.y[i]));
                }
                s += "</g>\n";
            } else {
                std::string pts;
                for (std::size_t i = 0; i < n; ++i) {
                    if (!std::isfinite(se.x[i]) || !std::isfinite(se.y[i])) continue;
                    pts += fmt::format("{:.2f},{:.2f} ", px(se.x[i]), py(se.y[i]));
                }
                s += fmt::format("<polyline class=\"curve\" data-name=\"{}\" fill=\"none\" stroke=\"{}\" "
                                 "stroke-width=\"1.5\" points=\"{}\"/>\n",
                                 escape(se.name), color, pts);
            }
            s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\" fill=\"{}\">{}</text>\n", ox + ml + 6,
                             mt + 14 + 12 * static_cast<double>(k), color, escape(se.name));
        }
        s += "</g>\n";
    }
    s += "</svg>\n";
    return s;
}

} // namespace uaflow::cli
