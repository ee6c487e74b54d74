#pragma once

#include "uaflow/types.hpp"

namespace uaflow::paths {

enum class PathKind { Linear };

// Schedule values at one time: x_t = alpha * x1 + beta * x0.
struct PathCoefficients {
    double alpha;
    double beta;
    double alpha_dot;
    double beta_dot;
};

// Affine probability path between a standard-normal base (t = 0) and the data
// distribution (t = 1).
class AffinePath {
public:
    explicit AffinePath(PathKind kind = PathKind::Linear) : kind_(kind) {}

    PathKind kind() const noexcept { return kind_; }

    // Throws InvalidArgument when t is outside [0, 1].
    PathCoefficients at(double t) const;

private:
    PathKind kind_;
};

Vector interpolate(const AffinePath& path, const Vector& x1, const Vector& x0, double t);

// Velocity of the interpolant through x_t that ends at x1. Singular where
// beta_t = 0.
Vector cond_velocity(const AffinePath& path, const Vector& x_t, const Vector& x1, double t);

// Classifier-guidance coefficient b_t. Singular where alpha_t = 0.
double cg_coefficient(const AffinePath& path, double t);

// Data-endpoint estimate from a state and a velocity; inverse of
// cond_velocity in its x1 argument.
Vector recover_x1(const AffinePath& path, const Vector& x_t, const Vector& u, double t);

} // namespace uaflow::paths
