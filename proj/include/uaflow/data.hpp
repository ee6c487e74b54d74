#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "uaflow/paths.hpp"
#include "uaflow/types.hpp"

namespace uaflow::data {

struct MixtureMode {
    Vector mean;
    double sigma; // isotropic standard deviation, > 0
    double weight = 1.0;
    int label = 0;
};

struct GaussianMixture {
    std::vector<MixtureMode> modes;
};

struct TwoMoons {
    double noise = 0.1;
};

struct Checkerboard {
    int cells = 4; // grid cells per side over [-2, 2]^2; points fill cells with even i + j
};

using DatasetKind = std::variant<GaussianMixture, TwoMoons, Checkerboard>;

struct ToyDataset {
    DatasetKind kind;
    bool labeled = false;

    int dim() const;
    int num_classes() const; // 0 when unlabeled
};

// Points as columns, with one label per column (-1 when unlabeled).
struct Samples {
    Matrix points;
    std::vector<int> labels;
};

// Equal-weight ring of isotropic Gaussians, mode k labelled k.
GaussianMixture ring_mixture(int modes, double radius, double sigma);

ToyDataset make_dataset(DatasetKind kind, bool labeled);

void validate(const ToyDataset& dataset);

Samples draw(const ToyDataset& dataset, int count, Rng& rng);

struct VelocityMoments {
    Vector u;     // posterior mean of the conditional velocity
    Vector var_u; // element-wise posterior variance of the conditional velocity
};

// Exact marginal velocity and its posterior variance for Gaussian-mixture data
// under a standard-normal base. Components may be restricted to one label.
VelocityMoments marginal_velocity_oracle(const GaussianMixture& mixture, const paths::AffinePath& path,
                                         const Vector& x_t, double t, Condition label = kNullCondition);

// Index of the mode with the highest posterior responsibility for a data point.
int nearest_mode(const GaussianMixture& mixture, const Vector& x);

// Distance to the nearest mode mean, in units of that mode's sigma.
double mode_distance(const GaussianMixture& mixture, const Vector& x);

} // namespace uaflow::data
