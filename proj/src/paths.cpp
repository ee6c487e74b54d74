#include "uaflow/paths.hpp"

#include <cmath>
#include <string>

#include "uaflow/error.hpp"

namespace uaflow::paths {

namespace {

void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw InvalidArgument("path time must lie in [0, 1], got " + std::to_string(t));
    }
}

void check_same_dim(const Vector& a, const Vector& b, const char* what) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()) + ")");
    }
}

} // namespace

PathCoefficients AffinePath::at(double t) const {
    check_time(t);
    switch (kind_) {
    case PathKind::Linear:
        return {t, 1.0 - t, 1.0, -1.0};
    }
    throw InvalidArgument("unknown path kind");
}

Vector interpolate(const AffinePath& path, const Vector& x1, const Vector& x0, double t) {
    check_same_dim(x1, x0, "interpolate");
    const auto c = path.at(t);
    return c.alpha * x1 + c.beta * x0;
}

Vector cond_velocity(const AffinePath& path, const Vector& x_t, const Vector& x1, double t) {
    check_same_dim(x_t, x1, "cond_velocity");
    const auto c = path.at(t);
    if (c.beta == 0.0) throw SingularTimeError("cond_velocity: beta_t vanishes", t);
    if (path.kind() == PathKind::Linear) {
        return (x1 - x_t) / c.beta;
    }
    // x0 = (x_t - alpha x1) / beta, u = alpha_dot x1 + beta_dot x0
    const Vector x0 = (x_t - c.alpha * x1) / c.beta;
    return c.alpha_dot * x1 + c.beta_dot * x0;
}

double cg_coefficient(const AffinePath& path, double t) {
    const auto c = path.at(t);
    if (c.alpha == 0.0) throw SingularTimeError("cg_coefficient: alpha_t vanishes", t);
    return -(c.beta_dot * c.beta * c.alpha - c.alpha_dot * c.beta * c.beta) / c.alpha;
}

Vector recover_x1(const AffinePath& path, const Vector& x_t, const Vector& u, double t) {
    check_same_dim(x_t, u, "recover_x1");
    const auto c = path.at(t);
    const double denom = c.alpha_dot * c.beta - c.beta_dot * c.alpha;
    if (denom == 0.0) throw SingularTimeError("recover_x1: degenerate path derivative", t);
    return (-c.beta_dot * x_t + c.beta * u) / denom;
}

} // namespace uaflow::paths
