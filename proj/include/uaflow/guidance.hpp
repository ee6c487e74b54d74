#pragma once

#include <optional>
#include <vector>

#include "uaflow/model.hpp"
#include "uaflow/paths.hpp"
#include "uaflow/sample.hpp"

namespace uaflow::guidance {

struct GuidanceConfig {
    bool cg_enabled = false;
    double w = 0.0;     // U-CG scale
    int cg_cadence = 2; // apply U-CG on steps where step % cg_cadence == 0
    bool cfg_enabled = false;
    double lambda_max = 0.0;
    std::optional<double> fixed_lambda; // plain CFG with a constant scale
    // Evaluate the null condition on every primary query purely to log the
    // conditional/unconditional sigma pairs, even with CFG off.
    bool record_sigma_pairs = false;

    void validate() const;
    bool cfg_active() const { return cfg_enabled || fixed_lambda.has_value(); }
};

struct GuidedOutput {
    Vector mean;
    Vector var;
    std::optional<double> lambda_used;
};

inline constexpr double kGuidedVarFloor = 1e-12;

// f(var) = -(mean(var))^2
double pseudo_likelihood_f(const Vector& var);
// df/dvar
Vector pseudo_likelihood_grad(const Vector& var);

// grad_x f(sigma^2(x)) through the variance head.
Vector uncertainty_gradient(const model::VelocityModel& model, const Vector& x, double t, Condition cond);

// mean + b_t w grad_x f(sigma^2(x)).
Vector ucg_correct(const Vector& mean, const Vector& x_bar, double t, const model::VelocityModel& model,
                   Condition cond, const paths::AffinePath& path, double w);

// Non-negative minimiser of sum(((1 + l) sigma_y - l sigma_null)^2).
double lambda_opt(const Vector& sigma_y, const Vector& sigma_null);

// Extrapolated mean and variance at a given scale; lambda == 0 returns the
// conditional prediction unchanged.
GuidedOutput cfg_extrapolate(const model::ModelOutput& cond_out, const model::ModelOutput& null_out, double lambda);

GuidedOutput ucfg_combine(const model::VelocityModel& model, const Vector& x_bar, double t, int cls,
                          double lambda_max);

struct LambdaLogEntry {
    int step;
    double t;
    double lambda_opt;  // NaN when CFG is inactive
    double lambda_used; // NaN when CFG is inactive
    Vector sigma_cond;
    Vector sigma_null;
};

// Velocity field applying U-CFG (or fixed-scale CFG) and then U-CG, in that
// order, to a frozen model. One instance per trajectory.
class GuidedField final : public sample::VelocityField {
public:
    GuidedField(const model::VelocityModel& model, Condition cond, GuidanceConfig config,
                paths::AffinePath path = paths::AffinePath{});

    int dim() const override { return model_.dim(); }
    sample::FieldEval evaluate(const Vector& x, const sample::FieldQuery& q) override;
    // Jacobian of the extrapolated mean with the scale held fixed; the U-CG
    // term is not differentiated.
    Vector jvp(const Vector& x, const sample::FieldQuery& q, const Vector& v) override;

    GuidedOutput guided(const Vector& x, const sample::FieldQuery& q, bool log);

    const std::vector<LambdaLogEntry>& log() const noexcept { return log_; }

private:
    double scale_at(const model::ModelOutput& c, const model::ModelOutput& u, double* opt) const;

    const model::VelocityModel& model_;
    Condition cond_;
    GuidanceConfig config_;
    paths::AffinePath path_;
    std::vector<LambdaLogEntry> log_;
};

struct StepCorrelation {
    int step;
    double t;
    double pearson; // NaN if undefined (constant input)
    std::size_t pairs;
};

// Per-step Pearson correlation between conditional and unconditional sigma,
// pooled over all elements of all logged trajectories.
std::vector<StepCorrelation> sigma_correlation_by_step(const std::vector<std::vector<LambdaLogEntry>>& logs);

} // namespace uaflow::guidance
