#pragma once

#include <span>
#include <vector>

namespace uaflow::stats {

// NaN when either input is constant.
double pearson(std::span<const double> a, std::span<const double> b);

// Pearson correlation of average ranks (ties share their mean rank).
double spearman(std::span<const double> a, std::span<const double> b);

std::vector<double> average_ranks(std::span<const double> v);

double median(std::vector<double> v);

} // namespace uaflow::stats
