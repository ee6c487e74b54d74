#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "uaflow/error.hpp"
#include "uaflow/stats.hpp"

using namespace uaflow;

TEST_CASE("pearson") {
    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{2, 4, 6, 8};
    const std::vector<double> c{4, 3, 2, 1};
    CHECK(stats::pearson(a, b) == doctest::Approx(1.0));
    CHECK(stats::pearson(a, c) == doctest::Approx(-1.0));
    // hand computed: x = 1..3, y = (1, 3, 2): r = 1 / (sqrt(2) sqrt(2)) = 0.5
    CHECK(stats::pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}) == doctest::Approx(0.5));
    CHECK(std::isnan(stats::pearson(a, std::vector<double>{1, 1, 1, 1})));
    CHECK_THROWS_AS(stats::pearson(a, std::vector<double>{1, 2}), DimensionError);
    CHECK_THROWS_AS(stats::pearson(std::vector<double>{1}, std::vector<double>{1}), InvalidArgument);
}

TEST_CASE("average ranks share ties") {
    const auto r = stats::average_ranks(std::vector<double>{10, 20, 20, 5, 20});
    CHECK(r == std::vector<double>{2, 4, 4, 1, 4});
}

TEST_CASE("spearman is invariant to monotone transforms") {
    const std::vector<double> a{0.1, 0.5, 0.2, 0.9, 0.7};
    std::vector<double> b;
    for (double x : a) b.push_back(std::exp(5 * x));
    CHECK(stats::spearman(a, b) == doctest::Approx(1.0));
    const std::vector<double> c{1, 2, 3, 4, 5};
    const std::vector<double> d{5, 6, 7, 8, 7};
    // ranks of d: 1 2 3.5 5 3.5
    CHECK(stats::spearman(c, d) == doctest::Approx(stats::pearson(c, std::vector<double>{1, 2, 3.5, 5, 3.5})));
}

TEST_CASE("median") {
    CHECK(stats::median({3, 1, 2}) == 2.0);
    CHECK(stats::median({4, 1, 2, 3}) == 2.5);
    CHECK_THROWS_AS(stats::median({}), InvalidArgument);
}
