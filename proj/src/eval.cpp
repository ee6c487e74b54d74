#include "uaflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "uaflow/error.hpp"

namespace uaflow::eval {

namespace {

Matrix squared_distances(const Matrix& a, const Matrix& b) {
    Matrix d(a.cols(), b.cols());
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
        for (Eigen::Index i = 0; i < a.cols(); ++i) d(i, j) = (a.col(i) - b.col(j)).squaredNorm();
    }
    return d;
}

Vector knn_radii_squared(const Matrix& points, int k) {
    const Eigen::Index n = points.cols();
    if (k < 1) throw InvalidArgument("k must be >= 1");
    if (k >= n) throw InvalidArgument("k must be smaller than the set size");
    const Matrix d = squared_distances(points, points);
    Vector r(n);
    std::vector<double> row(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) row[j] = d(i, j);
        row[i] = row.back();
        row.pop_back();
        std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
        r[i] = row[k - 1];
        row.resize(n);
    }
    if ((r.array() == 0.0).all()) throw InvalidArgument("k-NN manifold is degenerate (duplicate-only set)");
    return r;
}

double coverage(const Matrix& support, const Vector& radii_sq, const Matrix& queries) {
    std::size_t inside = 0;
    for (Eigen::Index j = 0; j < queries.cols(); ++j) {
        for (Eigen::Index i = 0; i < support.cols(); ++i) {
            if ((queries.col(j) - support.col(i)).squaredNorm() <= radii_sq[i]) {
                ++inside;
                break;
            }
        }
    }
    return static_cast<double>(inside) / static_cast<double>(queries.cols());
}

// Columns in lexicographic order so pairwise sums do not depend on input order.
Matrix canonical(const Matrix& m) {
    std::vector<Eigen::Index> idx(m.cols());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            if (m(r, a) != m(r, b)) return m(r, a) < m(r, b);
        }
        return false;
    });
    Matrix out(m.rows(), m.cols());
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(idx[j]);
    return out;
}

double mean_distance(const Matrix& a, const Matrix& b) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < a.cols(); ++i) {
        double row = 0.0;
        for (Eigen::Index j = 0; j < b.cols(); ++j) row += (a.col(i) - b.col(j)).norm();
        sum += row;
    }
    return sum / (static_cast<double>(a.cols()) * static_cast<double>(b.cols()));
}

void check_sets(const Matrix& real, const Matrix& gen) {
    if (real.cols() == 0 || gen.cols() == 0) throw InvalidArgument("point sets must be nonempty");
    if (real.rows() != gen.rows()) throw DimensionError("point sets differ in dimension");
}

} // namespace

Vector knn_radii(const Matrix& points, int k) { return knn_radii_squared(points, k).cwiseSqrt(); }

PrecisionRecall knn_precision_recall(const Matrix& real, const Matrix& gen, int k) {
    check_sets(real, gen);
    const Vector real_r = knn_radii_squared(real, k);
    const Vector gen_r = knn_radii_squared(gen, k);
    return {coverage(real, real_r, gen), coverage(gen, gen_r, real)};
}

double energy_distance(const Matrix& real, const Matrix& gen) {
    check_sets(real, gen);
    const Matrix x = canonical(real);
    const Matrix y = canonical(gen);
    return 2.0 * mean_distance(x, y) - mean_distance(x, x) - mean_distance(y, y);
}

std::vector<std::size_t> retained_indices(const std::vector<SampleRecord>& records, double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw InvalidArgument("filtering ratio must lie in [0, 1)");
    for (const auto& r : records) {
        if (!std::isfinite(r.score)) throw NumericError("sample record carries a non-finite score");
    }
    const std::size_t n = records.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return records[a].score > records[b].score; });
    const auto drop = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
    std::vector<std::size_t> kept(order.begin() + static_cast<std::ptrdiff_t>(drop), order.end());
    std::sort(kept.begin(), kept.end());
    return kept;
}

std::vector<EvalReport> filter_sweep(const std::vector<SampleRecord>& records, const Matrix& real,
                                     const std::vector<double>& ratios, const FilterOptions& options) {
    if (records.empty()) throw InvalidArgument("no sample records to filter");
    if (real.cols() == 0) throw InvalidArgument("reference set is empty");
    std::vector<EvalReport> out;
    for (double ratio : ratios) {
        auto kept = retained_indices(records, ratio);
        if (options.eval_size > 0) {
            if (kept.size() < options.eval_size) {
                throw InvalidArgument("insufficient samples: ratio " + std::to_string(ratio) + " retains " +
                                      std::to_string(kept.size()) + " < evaluation size " +
                                      std::to_string(options.eval_size));
            }
            Rng rng(mix_seed(options.subsample_seed));
            std::shuffle(kept.begin(), kept.end(), rng);
            kept.resize(options.eval_size);
            std::sort(kept.begin(), kept.end());
        }
        if (kept.size() <= static_cast<std::size_t>(options.k)) {
            throw InvalidArgument("insufficient samples: retained set must exceed k");
        }
        Matrix gen(real.rows(), static_cast<Eigen::Index>(kept.size()));
        for (std::size_t j = 0; j < kept.size(); ++j) {
            const auto& s = records[kept[j]].sample;
            if (s.size() != real.rows()) throw DimensionError("sample dimension does not match the reference set");
            gen.col(static_cast<Eigen::Index>(j)) = s;
        }
        const auto pr = knn_precision_recall(real, gen, options.k);
        out.push_back({ratio, pr.precision, pr.recall, energy_distance(real, gen),
                       retained_indices(records, ratio).size(), options.subsample_seed});
    }
    return out;
}

} // namespace uaflow::eval
