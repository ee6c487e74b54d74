#include "uaflow/sample.hpp"

#include <string>

#include "uaflow/error.hpp"

namespace uaflow::sample {

namespace {

void check_velocity(const Vector& u, int step) {
    if (!u.allFinite()) throw NumericError("non-finite velocity at sampling step " + std::to_string(step));
}

void check_dt(const FlowState& state, double dt) {
    if (!(dt > 0.0)) throw InvalidArgument("step size must be positive");
    // Grid arithmetic may overshoot 1 by a rounding error.
    if (state.t + dt > 1.0 + 1e-12) throw InvalidArgument("step would move past t = 1");
}

} // namespace

FieldEval ModelField::evaluate(const Vector& x, const FieldQuery& q) {
    auto out = model_.forward(x, q.t, cond_);
    return {std::move(out.mean), std::move(out.var)};
}

Vector ModelField::jvp(const Vector& x, const FieldQuery& q, const Vector& v) {
    return model_.jvp_mean(x, q.t, cond_, v);
}

void SamplerConfig::validate() const {
    if (steps < 1) throw InvalidArgument("sampler steps must be >= 1");
    if (!(eps >= 0.0 && eps < 0.5)) throw InvalidArgument("sampler eps must lie in [0, 0.5)");
}

FlowState advance_mean(const FlowState& state, VelocityField& field, double dt, Method method, int step,
                       const FieldEval& at_state) {
    check_dt(state, dt);
    check_velocity(at_state.mean, step);
    FlowState next{state.t + dt, state.mean + dt * at_state.mean, state.var};
    if (method == Method::Heun) {
        const FieldEval k2 = field.evaluate(next.mean, {next.t, step, false});
        check_velocity(k2.mean, step);
        next.mean = state.mean + (0.5 * dt) * (at_state.mean + k2.mean);
    }
    return next;
}

FlowState step_euler(const FlowState& state, VelocityField& field, double dt, int step) {
    return advance_mean(state, field, dt, Method::Euler, step, field.evaluate(state.mean, {state.t, step, true}));
}

FlowState step_heun(const FlowState& state, VelocityField& field, double dt, int step) {
    return advance_mean(state, field, dt, Method::Heun, step, field.evaluate(state.mean, {state.t, step, true}));
}

Trajectory sample(VelocityField& field, const SamplerConfig& config, const Vector& x0) {
    config.validate();
    if (x0.size() != field.dim()) throw DimensionError("initial state dimension does not match the field");
    Trajectory traj;
    traj.reserve(config.steps + 1);
    traj.push_back({config.time_at(0), x0, Vector::Zero(x0.size())});
    for (int k = 0; k < config.steps; ++k) {
        const FlowState& cur = traj.back();
        const double dt = config.time_at(k + 1) - cur.t;
        FlowState next = config.method == Method::Heun ? step_heun(cur, field, dt, k) : step_euler(cur, field, dt, k);
        next.t = config.time_at(k + 1);
        traj.push_back(std::move(next));
    }
    return traj;
}

Trajectory sample(const model::VelocityModel& model, const SamplerConfig& config, const Vector& x0, Condition cond) {
    ModelField field(model, cond);
    return sample(field, config, x0);
}

} // namespace uaflow::sample
