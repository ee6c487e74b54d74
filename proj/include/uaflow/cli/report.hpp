#pragma once

#include <string>
#include <vector>

#include "uaflow/types.hpp"

namespace uaflow::cli {

// Shortest text that round-trips the double.
std::string num(double v);

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}
    void row(std::vector<std::string> cells);
    void save(const std::string& path) const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

// Reads the x0..x{n-1} columns of a CSV with a header row; other columns are
// ignored. Points come back as columns.
Matrix read_points_csv(const std::string& path);

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct Panel {
    std::string title;
    std::string xlabel;
    std::string ylabel;
    std::vector<Series> series;
    bool scatter = false;
};

// Panels side by side; line panels draw one polyline per series, scatter
// panels one group of circles per series.
std::string svg_plot(const std::vector<Panel>& panels);

void write_text(const std::string& path, const std::string& content);

} // namespace uaflow::cli
