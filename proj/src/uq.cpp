#include "uaflow/uq.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "uaflow/error.hpp"

namespace uaflow::uq {

void UqConfig::validate() const {
    if (cov.kind == CovKind::HutchinsonJVP && cov.samples < 1) throw InvalidArgument("probe count must be >= 1");
    if (cov.kind == CovKind::MonteCarlo && cov.samples < 2) throw InvalidArgument("Monte Carlo draw count must be >= 2");
    if (cadence < 1) throw InvalidArgument("uncertainty cadence must be >= 1");
    if (include_mean_spread_var && spread_samples < 2) throw InvalidArgument("spread_samples must be >= 2");
}

Vector hutchinson_diag(sample::VelocityField& field, const Vector& x_bar, const sample::FieldQuery& q,
                       const Vector& var_x, int probes, Rng& rng) {
    if (probes < 1) throw InvalidArgument("hutchinson_diag needs at least one probe");
    if (var_x.size() != x_bar.size()) throw DimensionError("hutchinson_diag: variance dimension mismatch");
    if ((var_x.array() < 0.0).any()) throw InvalidArgument("hutchinson_diag: variance must be non-negative");
    const Vector sd = var_x.cwiseSqrt();
    Vector acc = Vector::Zero(x_bar.size());
    for (int k = 0; k < probes; ++k) {
        const Vector v = sd.cwiseProduct(rademacher(x_bar.size(), rng));
        acc += v.cwiseProduct(field.jvp(x_bar, q, v));
    }
    return acc / probes;
}

Vector hutchinson_diag(const model::VelocityModel& model, const Vector& x_bar, double t, Condition cond,
                       const Vector& var_x, int probes, Rng& rng) {
    sample::ModelField field(model, cond);
    return hutchinson_diag(field, x_bar, {t, 0, true}, var_x, probes, rng);
}

namespace {

std::vector<Vector> gaussian_draws(const sample::FlowState& state, int count, Rng& rng) {
    const Vector sd = state.var.cwiseSqrt();
    std::vector<Vector> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        out.push_back(state.mean + sd.cwiseProduct(standard_normal(state.mean.size(), rng)));
    }
    return out;
}

} // namespace

sample::FlowState propagate_variance(const sample::FlowState& state, sample::VelocityField& field, double dt,
                                     const UqConfig& config, Rng& rng, int step, const sample::FieldEval* at_mean,
                                     PropagationStats* stats) {
    config.validate();
    if (state.var.size() != state.mean.size()) throw DimensionError("flow state mean/variance dimension mismatch");
    if ((state.var.array() < 0.0).any()) throw InvalidArgument("propagate_variance: variance must be non-negative");
    const sample::FieldQuery q{state.t, step, false};

    sample::FieldEval local;
    if (!at_mean) {
        local = field.evaluate(state.mean, q);
        at_mean = &local;
    }
    Vector velocity_var = at_mean->var;

    if (config.include_mean_spread_var) {
        const auto draws = gaussian_draws(state, config.spread_samples, rng);
        Vector sum = Vector::Zero(state.mean.size());
        Vector sumsq = Vector::Zero(state.mean.size());
        for (const auto& x : draws) {
            const Vector u = field.evaluate(x, q).mean;
            sum += u;
            sumsq += u.cwiseProduct(u);
        }
        const double k = config.spread_samples;
        velocity_var += ((sumsq - sum.cwiseProduct(sum) / k) / (k - 1.0)).cwiseMax(0.0);
    }

    Vector cov = Vector::Zero(state.mean.size());
    switch (config.cov.kind) {
    case CovKind::Zero:
        break;
    case CovKind::HutchinsonJVP:
        cov = hutchinson_diag(field, state.mean, q, state.var, config.cov.samples, rng);
        break;
    case CovKind::MonteCarlo: {
        // sample covariance of the draws and their velocities
        const auto draws = gaussian_draws(state, config.cov.samples, rng);
        std::vector<Vector> us;
        us.reserve(draws.size());
        Vector mean_x = Vector::Zero(state.mean.size());
        Vector mean_u = Vector::Zero(state.mean.size());
        for (const auto& x : draws) {
            us.push_back(field.evaluate(x, q).mean);
            mean_x += x;
            mean_u += us.back();
        }
        const double s = config.cov.samples;
        mean_x /= s;
        mean_u /= s;
        cov = Vector::Zero(state.mean.size());
        for (std::size_t i = 0; i < draws.size(); ++i) cov += (draws[i] - mean_x).cwiseProduct(us[i] - mean_u);
        cov /= s - 1.0;
        break;
    }
    }

    Vector var = state.var + velocity_var * (dt * dt) + 2.0 * dt * cov;
    if (!var.allFinite()) {
        throw NumericError("non-finite propagated variance at sampling step " + std::to_string(step));
    }
    const long negative = (var.array() < 0.0).count();
    if (stats) stats->floored += negative;
    return {state.t, state.mean, var.cwiseMax(0.0)};
}

sample::FlowState propagate_variance(const sample::FlowState& state, const model::VelocityModel& model, Condition cond,
                                     double dt, const UqConfig& config, Rng& rng) {
    sample::ModelField field(model, cond);
    return propagate_variance(state, field, dt, config, rng);
}

double aggregate_score(const Vector& var_final, double top_fraction) {
    if (var_final.size() == 0) throw InvalidArgument("aggregate_score: empty uncertainty map");
    if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw InvalidArgument("aggregate_score: top_fraction must lie in (0, 1]");
    std::vector<double> v(var_final.data(), var_final.data() + var_final.size());
    // Guard against ceil(0.1 * 10) landing on 2 from representation error.
    const auto take = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(v.size()) - 1e-9)), 1, v.size());
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(take), v.end(), std::greater<>());
    double sum = 0.0;
    for (std::size_t i = 0; i < take; ++i) sum += v[i];
    return sum / static_cast<double>(take);
}

GenerateResult generate(sample::VelocityField& field, const sample::SamplerConfig& sampler, const UqConfig& uq,
                        const Vector& x0, Rng& rng) {
    sampler.validate();
    uq.validate();
    if (x0.size() != field.dim()) throw DimensionError("initial state dimension does not match the field");
    GenerateResult result;
    auto& traj = result.trajectory;
    traj.reserve(sampler.steps + 1);
    traj.push_back({sampler.time_at(0), x0, Vector::Zero(x0.size())});
    const double dt = sampler.dt();

    for (int k = 0; k < sampler.steps; ++k) {
        const sample::FlowState& cur = traj.back();
        const sample::FieldEval at_state = field.evaluate(cur.mean, {cur.t, k, true});
        Vector var = cur.var;
        if (k % uq.cadence == 0) {
            const int span = std::min(uq.cadence, sampler.steps - k);
            var = propagate_variance(cur, field, span * dt, uq, rng, k, &at_state, &result.stats).var;
        }
        sample::FlowState next = sample::advance_mean(cur, field, sampler.time_at(k + 1) - cur.t, sampler.method, k,
                                                      at_state);
        next.t = sampler.time_at(k + 1);
        next.var = std::move(var);
        traj.push_back(std::move(next));
    }
    result.var_final = traj.back().var;
    return result;
}

AuScore au_baseline_score(sample::VelocityField& field, const sample::Trajectory& trajectory,
                          const paths::AffinePath& path, int renoise, double late_window, Rng& rng) {
    if (renoise < 2) throw InvalidArgument("au_baseline_score: re-noise count must be >= 2");
    if (!(late_window > 0.0 && late_window <= 1.0)) throw InvalidArgument("au_baseline_score: late_window must lie in (0, 1]");
    if (trajectory.size() < 2) throw InvalidArgument("au_baseline_score: trajectory has no steps");
    const int steps = static_cast<int>(trajectory.size()) - 1;
    const int first = steps - std::max(1, static_cast<int>(std::ceil(late_window * steps - 1e-9)));
    const auto n = trajectory.front().mean.size();

    AuScore out;
    out.var_map = Vector::Zero(n);
    for (int k = first; k < steps; ++k) {
        const auto& s = trajectory[k];
        const sample::FieldQuery q{s.t, k, false};
        Vector x1_hat;
        try {
            x1_hat = paths::recover_x1(path, s.mean, field.evaluate(s.mean, q).mean, s.t);
        } catch (const SingularTimeError& e) {
            std::cerr << "warning: au baseline skipped step " << k << ": " << e.what() << "\n";
            ++out.steps_skipped;
            continue;
        }
        Vector sum = Vector::Zero(n);
        Vector sumsq = Vector::Zero(n);
        for (int i = 0; i < renoise; ++i) {
            const Vector x_i = paths::interpolate(path, x1_hat, standard_normal(n, rng), s.t);
            const Vector u = field.evaluate(x_i, q).mean;
            sum += u;
            sumsq += u.cwiseProduct(u);
        }
        out.var_map += ((sumsq - sum.cwiseProduct(sum) / renoise) / (renoise - 1.0)).cwiseMax(0.0);
        ++out.steps_used;
    }
    if (out.steps_used > 0) out.var_map /= out.steps_used;
    return out;
}

} // namespace uaflow::uq
