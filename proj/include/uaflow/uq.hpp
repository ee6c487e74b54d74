#pragma once

#include "uaflow/model.hpp"
#include "uaflow/paths.hpp"
#include "uaflow/sample.hpp"
#include "uaflow/types.hpp"

namespace uaflow::uq {

enum class CovKind { Zero, HutchinsonJVP, MonteCarlo };

// Approximation of Cov(x_t, u_t) used in the variance update. `samples` is
// the probe count for HutchinsonJVP and the draw count (>= 2) for MonteCarlo,
// which takes the sample covariance of the draws and their velocities.
struct CovOption {
    CovKind kind = CovKind::HutchinsonJVP;
    int samples = 1;
};

struct UqConfig {
    CovOption cov;
    int cadence = 1; // update the variance every `cadence` sampling steps
    bool include_mean_spread_var = false;
    int spread_samples = 10;

    void validate() const;
};

// (1/S) sum_i (s ⊙ r_i) ⊙ J (s ⊙ r_i), s = sqrt(var_x), r_i Rademacher; an
// unbiased estimate of diag(J) ⊙ var_x.
Vector hutchinson_diag(sample::VelocityField& field, const Vector& x_bar, const sample::FieldQuery& q,
                       const Vector& var_x, int probes, Rng& rng);

Vector hutchinson_diag(const model::VelocityModel& model, const Vector& x_bar, double t, Condition cond,
                       const Vector& var_x, int probes, Rng& rng);

struct PropagationStats {
    long floored = 0; // elements clipped back to zero
};

// One Euler variance update over dt:
//   var += (sigma dt)^2 [+ Var(u_bar) dt^2] + 2 dt Cov(x, u)
// floored at zero element-wise. `at_mean` is the field evaluated at
// state.mean for this step, if the caller already has it.
sample::FlowState propagate_variance(const sample::FlowState& state, sample::VelocityField& field, double dt,
                                     const UqConfig& config, Rng& rng, int step = 0,
                                     const sample::FieldEval* at_mean = nullptr, PropagationStats* stats = nullptr);

sample::FlowState propagate_variance(const sample::FlowState& state, const model::VelocityModel& model, Condition cond,
                                     double dt, const UqConfig& config, Rng& rng);

// Mean of the ceil(top_fraction * n) largest entries.
double aggregate_score(const Vector& var_final, double top_fraction);

struct GenerateResult {
    sample::Trajectory trajectory; // mean and variance at every grid time
    Vector var_final;
    PropagationStats stats;
};

// Integrates the mean with the configured solver and the variance with Euler
// updates evaluated at the solver's means.
GenerateResult generate(sample::VelocityField& field, const sample::SamplerConfig& sampler, const UqConfig& uq,
                        const Vector& x0, Rng& rng);

struct AuScore {
    Vector var_map;   // element-wise velocity variance averaged over the window
    int steps_used = 0;
    int steps_skipped = 0;
};

// Re-noising baseline: at each step in the last `late_window` fraction of the
// trajectory, recover an x1 estimate, re-noise it `renoise` times along the
// path and take the element-wise variance of the mean velocity.
AuScore au_baseline_score(sample::VelocityField& field, const sample::Trajectory& trajectory,
                          const paths::AffinePath& path, int renoise, double late_window, Rng& rng);

} // namespace uaflow::uq
