#pragma once

#include <cmath>
#include <functional>

#include "uaflow/model.hpp"
#include "uaflow/sample.hpp"
#include "uaflow/types.hpp"

namespace testsupport {

using uaflow::Matrix;
using uaflow::Vector;

// u(x) = A x + c with a fixed per-element variance.
class AffineField final : public uaflow::sample::VelocityField {
public:
    AffineField(Matrix a, Vector c, Vector var) : a_(std::move(a)), c_(std::move(c)), var_(std::move(var)) {}
    int dim() const override { return static_cast<int>(c_.size()); }
    uaflow::sample::FieldEval evaluate(const Vector& x, const uaflow::sample::FieldQuery& q) override {
        queried_t.push_back(q.t);
        return {a_ * x + c_, var_};
    }
    Vector jvp(const Vector&, const uaflow::sample::FieldQuery& q, const Vector& v) override {
        queried_t.push_back(q.t);
        return a_ * v;
    }
    std::vector<double> queried_t;

private:
    Matrix a_;
    Vector c_;
    Vector var_;
};

inline bool rel_close(double a, double b, double rel, double abs_floor = 1e-8) {
    return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), abs_floor});
}

inline double max_rel_err(const Vector& a, const Vector& b, double floor = 1e-8) {
    double e = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double s = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        e = std::max(e, std::abs(a[i] - b[i]) / s);
    }
    return e;
}

// Central difference of a scalar function over every coordinate of p.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, Vector p, double h) {
    Vector g(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = f(p);
        p[i] = keep - h;
        const double down = f(p);
        p[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Small model with every parameter (including heads) randomised so that no
// gradient path is trivially zero.
inline uaflow::model::VelocityModel random_model(int dim, std::vector<int> hidden, int classes,
                                                 uaflow::model::Activation act, std::uint64_t seed,
                                                 double scale = 0.5) {
    uaflow::model::ModelConfig cfg;
    cfg.input_dim = dim;
    cfg.hidden = std::move(hidden);
    cfg.num_classes = classes;
    cfg.time_features = 4;
    cfg.cond_embedding_dim = 3;
    cfg.activation = act;
    cfg.seed = seed;
    uaflow::model::VelocityModel m(cfg);
    uaflow::Rng rng(seed + 17);
    m.parameters() = scale * uaflow::standard_normal(m.parameter_count(), rng);
    return m;
}

} // namespace testsupport
