#include "uaflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "uaflow/error.hpp"

namespace uaflow::data {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

} // namespace

int ToyDataset::dim() const {
    return std::visit(Overloaded{
                          [](const GaussianMixture& g) { return g.modes.empty() ? 0 : static_cast<int>(g.modes[0].mean.size()); },
                          [](const TwoMoons&) { return 2; },
                          [](const Checkerboard&) { return 2; },
                      },
                      kind);
}

int ToyDataset::num_classes() const {
    if (!labeled) return 0;
    return std::visit(Overloaded{
                          [](const GaussianMixture& g) {
                              int m = -1;
                              for (const auto& mode : g.modes) m = std::max(m, mode.label);
                              return m + 1;
                          },
                          [](const TwoMoons&) { return 2; },
                          [](const Checkerboard&) { return 0; },
                      },
                      kind);
}

GaussianMixture ring_mixture(int modes, double radius, double sigma) {
    if (modes < 1) throw InvalidArgument("ring mixture needs at least one mode");
    GaussianMixture g;
    for (int k = 0; k < modes; ++k) {
        const double a = 2.0 * std::numbers::pi * k / modes;
        Vector mu(2);
        mu << radius * std::cos(a), radius * std::sin(a);
        g.modes.push_back({mu, sigma, 1.0, k});
    }
    return g;
}

ToyDataset make_dataset(DatasetKind kind, bool labeled) {
    ToyDataset d{std::move(kind), labeled};
    validate(d);
    return d;
}

void validate(const ToyDataset& dataset) {
    std::visit(Overloaded{
                   [&](const GaussianMixture& g) {
                       if (g.modes.empty()) throw InvalidArgument("gaussian mixture has no modes");
                       const auto n = g.modes[0].mean.size();
                       if (n < 1) throw InvalidArgument("mixture modes must have dimension >= 1");
                       for (const auto& m : g.modes) {
                           if (m.mean.size() != n) throw DimensionError("mixture modes differ in dimension");
                           if (!(m.sigma > 0.0)) throw InvalidArgument("mixture mode sigma must be > 0");
                           if (!(m.weight > 0.0)) throw InvalidArgument("mixture mode weight must be > 0");
                       }
                       if (dataset.labeled) {
                           const int classes = dataset.num_classes();
                           std::vector<bool> seen(classes, false);
                           for (const auto& m : g.modes) {
                               if (m.label < 0) throw InvalidArgument("mixture labels must be >= 0");
                               seen[m.label] = true;
                           }
                           if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
                               throw InvalidArgument("mixture labels must cover 0..K-1 without gaps");
                           }
                       }
                   },
                   [](const TwoMoons& m) {
                       if (!(m.noise > 0.0)) throw InvalidArgument("two-moons noise must be > 0");
                   },
                   [&](const Checkerboard& c) {
                       if (c.cells < 2) throw InvalidArgument("checkerboard needs at least 2 cells per side");
                       if (dataset.labeled) throw InvalidArgument("checkerboard data carries no labels");
                   },
               },
               dataset.kind);
}

Samples draw(const ToyDataset& dataset, int count, Rng& rng) {
    if (count < 1) throw InvalidArgument("draw count must be >= 1");
    validate(dataset);
    Samples out;
    out.points.resize(dataset.dim(), count);
    out.labels.assign(count, -1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    std::visit(Overloaded{
                   [&](const GaussianMixture& g) {
                       std::vector<double> w;
                       for (const auto& m : g.modes) w.push_back(m.weight);
                       std::discrete_distribution<int> pick(w.begin(), w.end());
                       for (int j = 0; j < count; ++j) {
                           const auto& m = g.modes[pick(rng)];
                           for (Eigen::Index i = 0; i < m.mean.size(); ++i) {
                               out.points(i, j) = m.mean[i] + m.sigma * normal(rng);
                           }
                           if (dataset.labeled) out.labels[j] = m.label;
                       }
                   },
                   [&](const TwoMoons& m) {
                       for (int j = 0; j < count; ++j) {
                           const int moon = static_cast<int>(rng() >> 63);
                           const double a = std::numbers::pi * uniform(rng);
                           double x = std::cos(a);
                           double y = std::sin(a);
                           if (moon == 1) {
                               x = 1.0 - x;
                               y = 0.5 - y;
                           }
                           out.points(0, j) = x + m.noise * normal(rng);
                           out.points(1, j) = y + m.noise * normal(rng);
                           if (dataset.labeled) out.labels[j] = moon;
                       }
                   },
                   [&](const Checkerboard& c) {
                       const double width = 4.0 / c.cells;
                       std::uniform_int_distribution<int> cell(0, c.cells - 1);
                       for (int j = 0; j < count; ++j) {
                           int ci = 0;
                           int cj = 0;
                           do {
                               ci = cell(rng);
                               cj = cell(rng);
                           } while ((ci + cj) % 2 != 0);
                           out.points(0, j) = -2.0 + width * (ci + uniform(rng));
                           out.points(1, j) = -2.0 + width * (cj + uniform(rng));
                       }
                   },
               },
               dataset.kind);
    return out;
}

VelocityMoments marginal_velocity_oracle(const GaussianMixture& mixture, const paths::AffinePath& path,
                                         const Vector& x_t, double t, Condition label) {
    if (mixture.modes.empty()) throw InvalidArgument("gaussian mixture has no modes");
    const auto n = x_t.size();
    const auto c = path.at(t);
    if (c.beta == 0.0) throw SingularTimeError("marginal_velocity_oracle: beta_t vanishes", t);

    // u(x_t | x1) = a * x1 + b * x_t is affine in x1.
    const double a = c.alpha_dot - c.beta_dot * c.alpha / c.beta;
    const double b = c.beta_dot / c.beta;

    std::vector<double> logw;
    std::vector<Vector> post_mean;
    std::vector<double> post_var;
    for (const auto& m : mixture.modes) {
        if (m.mean.size() != n) throw DimensionError("oracle state dimension does not match mixture");
        if (label && m.label != *label) continue;
        const double s2 = m.sigma * m.sigma;
        const double marg = c.alpha * c.alpha * s2 + c.beta * c.beta;
        const Vector r = x_t - c.alpha * m.mean;
        logw.push_back(std::log(m.weight) - 0.5 * r.squaredNorm() / marg - 0.5 * n * std::log(marg));
        post_mean.push_back(m.mean + (c.alpha * s2 / marg) * r);
        post_var.push_back(s2 * c.beta * c.beta / marg);
    }
    if (logw.empty()) throw InvalidArgument("no mixture mode carries the requested label");

    const double top = *std::max_element(logw.begin(), logw.end());
    double total = 0.0;
    for (auto& lw : logw) {
        lw = std::exp(lw - top);
        total += lw;
    }
    Vector mean_x1 = Vector::Zero(n);
    Vector second = Vector::Zero(n);
    for (std::size_t k = 0; k < logw.size(); ++k) {
        const double w = logw[k] / total;
        mean_x1 += w * post_mean[k];
        second += w * (post_mean[k].array().square() + post_var[k]).matrix();
    }
    const Vector var_x1 = (second.array() - mean_x1.array().square()).max(0.0).matrix();
    return {a * mean_x1 + b * x_t, a * a * var_x1};
}

int nearest_mode(const GaussianMixture& mixture, const Vector& x) {
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < mixture.modes.size(); ++k) {
        const auto& m = mixture.modes[k];
        const double score = std::log(m.weight) - 0.5 * (x - m.mean).squaredNorm() / (m.sigma * m.sigma) -
                             static_cast<double>(x.size()) * std::log(m.sigma);
        if (score > best_score) {
            best_score = score;
            best = static_cast<int>(k);
        }
    }
    return best;
}

double mode_distance(const GaussianMixture& mixture, const Vector& x) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : mixture.modes) best = std::min(best, (x - m.mean).norm() / m.sigma);
    return best;
}

} // namespace uaflow::data
