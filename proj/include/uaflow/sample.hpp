#pragma once

#include <vector>

#include "uaflow/model.hpp"
#include "uaflow/types.hpp"

namespace uaflow::sample {

// Where and why a velocity field is being queried. `primary` marks the one
// evaluation per step made at the grid state itself (as opposed to a Heun
// corrector or Monte Carlo probe); decorators log only on primary queries.
struct FieldQuery {
    double t;
    int step;
    bool primary = true;
};

struct FieldEval {
    Vector mean;
    Vector var;
};

// Mean/variance velocity provider: a plain model or a guidance decorator.
// Instances may carry per-trajectory state (logs), so use one per trajectory.
class VelocityField {
public:
    virtual ~VelocityField() = default;
    virtual int dim() const = 0;
    virtual FieldEval evaluate(const Vector& x, const FieldQuery& q) = 0;
    // Jacobian of the mean velocity at x applied to v.
    virtual Vector jvp(const Vector& x, const FieldQuery& q, const Vector& v) = 0;
};

class ModelField final : public VelocityField {
public:
    ModelField(const model::VelocityModel& model, Condition cond) : model_(model), cond_(cond) {}

    int dim() const override { return model_.dim(); }
    FieldEval evaluate(const Vector& x, const FieldQuery& q) override;
    Vector jvp(const Vector& x, const FieldQuery& q, const Vector& v) override;

private:
    const model::VelocityModel& model_;
    Condition cond_;
};

enum class Method { Euler, Heun };

struct SamplerConfig {
    int steps = 50;
    Method method = Method::Heun;
    double eps = 1e-3; // integrate over [eps, 1 - eps]

    void validate() const;
    double dt() const { return (1.0 - 2.0 * eps) / steps; }
    double time_at(int k) const { return eps + k * dt(); }
};

struct FlowState {
    double t = 0.0;
    Vector mean;
    Vector var;
};

using Trajectory = std::vector<FlowState>;

// Mean-only steps; var is carried through untouched. `step` is the grid index
// reported in errors and passed to the field.
FlowState step_euler(const FlowState& state, VelocityField& field, double dt, int step = 0);
FlowState step_heun(const FlowState& state, VelocityField& field, double dt, int step = 0);

// Same, reusing an evaluation already made at state.mean.
FlowState advance_mean(const FlowState& state, VelocityField& field, double dt, Method method, int step,
                       const FieldEval& at_state);

Trajectory sample(VelocityField& field, const SamplerConfig& config, const Vector& x0);
Trajectory sample(const model::VelocityModel& model, const SamplerConfig& config, const Vector& x0, Condition cond);

} // namespace uaflow::sample
