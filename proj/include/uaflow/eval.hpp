#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uaflow/types.hpp"

namespace uaflow::eval {

struct SampleRecord {
    Vector sample;
    double score = 0.0;
    Condition cond;
    std::uint64_t seed = 0;
    std::string method = "uaflow";
};

struct PrecisionRecall {
    double precision;
    double recall;
};

// k-NN manifold precision/recall: a point is covered by a set when it lies in
// the ball around some member whose radius is that member's distance to its
// k-th nearest neighbour within the set. Points are columns.
PrecisionRecall knn_precision_recall(const Matrix& real, const Matrix& gen, int k = 5);

// Radius of each column's k-NN ball within its own set.
Vector knn_radii(const Matrix& points, int k);

// V-statistic energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'|.
double energy_distance(const Matrix& real, const Matrix& gen);

struct EvalReport {
    double ratio;
    double precision;
    double recall;
    double energy_distance;
    std::size_t retained;
    std::uint64_t subsample_seed;
};

struct FilterOptions {
    int k = 5;
    std::size_t eval_size = 0; // 0 = evaluate the whole retained set
    std::uint64_t subsample_seed = 0;
};

// Drops the highest-score fraction of records for each ratio (ties broken by
// ascending record index), optionally subsamples the rest to eval_size, and
// evaluates against `real`.
std::vector<EvalReport> filter_sweep(const std::vector<SampleRecord>& records, const Matrix& real,
                                     const std::vector<double>& ratios, const FilterOptions& options = {});

// Indices of records kept at a filtering ratio, in original order.
std::vector<std::size_t> retained_indices(const std::vector<SampleRecord>& records, double ratio);

} // namespace uaflow::eval
