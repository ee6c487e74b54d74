#include "uaflow/guidance.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "uaflow/error.hpp"
#include "uaflow/stats.hpp"

namespace uaflow::guidance {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

model::ModelOutput column(const model::Tape& tape, Eigen::Index j) {
    return {tape.mean.col(j), tape.var.col(j)};
}

} // namespace

void GuidanceConfig::validate() const {
    if (!(w >= 0.0)) throw InvalidArgument("U-CG scale w must be >= 0");
    if (cg_cadence < 1) throw InvalidArgument("U-CG cadence must be >= 1");
    if (!(lambda_max >= 0.0)) throw InvalidArgument("lambda_max must be >= 0");
    if (fixed_lambda && !(*fixed_lambda >= 0.0)) throw InvalidArgument("fixed lambda must be >= 0");
    if (fixed_lambda && cfg_enabled) throw InvalidArgument("fixed lambda and U-CFG are mutually exclusive");
}

double pseudo_likelihood_f(const Vector& var) {
    if (var.size() == 0) throw InvalidArgument("pseudo_likelihood_f: empty variance");
    const double m = var.mean();
    return -m * m;
}

Vector pseudo_likelihood_grad(const Vector& var) {
    if (var.size() == 0) throw InvalidArgument("pseudo_likelihood_grad: empty variance");
    const double n = static_cast<double>(var.size());
    return Vector::Constant(var.size(), -2.0 * var.mean() / n);
}

Vector uncertainty_gradient(const model::VelocityModel& model, const Vector& x, double t, Condition cond) {
    const Condition c[1] = {cond};
    const model::Tape tape = model.forward_tape(x, Vector::Constant(1, t), c);
    const Vector g = pseudo_likelihood_grad(tape.var.col(0));
    return model.input_gradient(tape, Matrix::Zero(model.dim(), 1), g).col(0);
}

Vector ucg_correct(const Vector& mean, const Vector& x_bar, double t, const model::VelocityModel& model,
                   Condition cond, const paths::AffinePath& path, double w) {
    if (!(w >= 0.0)) throw InvalidArgument("U-CG scale w must be >= 0");
    if (mean.size() != x_bar.size()) throw DimensionError("ucg_correct: dimension mismatch");
    if (w == 0.0) return mean;
    const double b = paths::cg_coefficient(path, t);
    return mean + (b * w) * uncertainty_gradient(model, x_bar, t, cond);
}

double lambda_opt(const Vector& sigma_y, const Vector& sigma_null) {
    if (sigma_y.size() != sigma_null.size()) throw DimensionError("lambda_opt: dimension mismatch");
    if ((sigma_y.array() < 0.0).any() || (sigma_null.array() < 0.0).any()) {
        throw InvalidArgument("lambda_opt: standard deviations must be non-negative");
    }
    const Vector d = sigma_y - sigma_null;
    const double dd = d.squaredNorm();
    if (dd == 0.0) return 0.0;
    return std::max(0.0, -d.dot(sigma_y) / dd);
}

GuidedOutput cfg_extrapolate(const model::ModelOutput& cond_out, const model::ModelOutput& null_out, double lambda) {
    if (lambda == 0.0) return {cond_out.mean, cond_out.var, 0.0};
    const Vector s = (1.0 + lambda) * cond_out.var.cwiseSqrt() - lambda * null_out.var.cwiseSqrt();
    return {(1.0 + lambda) * cond_out.mean - lambda * null_out.mean, s.cwiseProduct(s).cwiseMax(kGuidedVarFloor),
            lambda};
}

GuidedOutput ucfg_combine(const model::VelocityModel& model, const Vector& x_bar, double t, int cls,
                          double lambda_max) {
    if (!model.conditional()) throw InvalidArgument("U-CFG requires a conditional model");
    if (!(lambda_max >= 0.0)) throw InvalidArgument("lambda_max must be >= 0");
    const auto c = model.forward(x_bar, t, cls);
    const auto u = model.forward(x_bar, t, kNullCondition);
    const double lam = std::min(lambda_opt(c.var.cwiseSqrt(), u.var.cwiseSqrt()), lambda_max);
    return cfg_extrapolate(c, u, lam);
}

GuidedField::GuidedField(const model::VelocityModel& model, Condition cond, GuidanceConfig config,
                         paths::AffinePath path)
    : model_(model), cond_(cond), config_(std::move(config)), path_(path) {
    config_.validate();
    if ((config_.cfg_active() || config_.record_sigma_pairs) && !model_.conditional()) {
        throw InvalidArgument("classifier-free guidance requires a conditional model");
    }
    if ((config_.cfg_active() || config_.record_sigma_pairs) && !cond_.has_value()) {
        throw InvalidArgument("classifier-free guidance requires a class condition");
    }
}

double GuidedField::scale_at(const model::ModelOutput& c, const model::ModelOutput& u, double* opt) const {
    if (config_.fixed_lambda) {
        if (opt) *opt = kNaN;
        return *config_.fixed_lambda;
    }
    const double lo = lambda_opt(c.var.cwiseSqrt(), u.var.cwiseSqrt());
    if (opt) *opt = lo;
    return std::min(lo, config_.lambda_max);
}

GuidedOutput GuidedField::guided(const Vector& x, const sample::FieldQuery& q, bool log) {
    const bool pair = config_.cfg_active() || config_.record_sigma_pairs;
    const Vector t = Vector::Constant(1, q.t);
    const Condition cond[1] = {cond_};
    const Condition null[1] = {kNullCondition};
    // Separate single-column passes keep the conditional branch bit-identical
    // to an unguided evaluation.
    const model::Tape tape_c = model_.forward_tape(x, t, cond);
    std::optional<model::Tape> tape_u;
    GuidedOutput out{tape_c.mean.col(0), tape_c.var.col(0), std::nullopt};
    double lam = 0.0;
    double opt = kNaN;
    if (pair) {
        tape_u = model_.forward_tape(x, t, null);
        const auto c = column(tape_c, 0);
        const auto u = column(*tape_u, 0);
        if (config_.cfg_active()) {
            lam = scale_at(c, u, &opt);
            out = cfg_extrapolate(c, u, lam);
        }
        if (log) {
            log_.push_back({q.step, q.t, opt, config_.cfg_active() ? lam : kNaN, c.var.cwiseSqrt(),
                            u.var.cwiseSqrt()});
        }
    }

    const bool cg_now = config_.cg_enabled && config_.w > 0.0 && q.step % config_.cg_cadence == 0;
    if (!cg_now) return out;
    if (path_.at(q.t).alpha == 0.0) return out; // b_t undefined; skip this step
    const double b = paths::cg_coefficient(path_, q.t);

    // df/dvar of the guided variance, pushed back onto each head's variance.
    const Vector g = pseudo_likelihood_grad(out.var);
    const Matrix zero = Matrix::Zero(x.size(), 1);
    Vector grad_x;
    if (lam == 0.0) {
        grad_x = model_.input_gradient(tape_c, zero, g).col(0);
    } else {
        const Eigen::ArrayXd sy = tape_c.var.col(0).array().sqrt();
        const Eigen::ArrayXd sn = tape_u->var.col(0).array().sqrt();
        const Eigen::ArrayXd s = (1.0 + lam) * sy - lam * sn;
        const Eigen::ArrayXd live = (s * s >= kGuidedVarFloor).cast<double>();
        const Vector d_c = (g.array() * live * s * (1.0 + lam) / sy).matrix();
        const Vector d_u = (-g.array() * live * s * lam / sn).matrix();
        grad_x = model_.input_gradient(tape_c, zero, d_c).col(0) + model_.input_gradient(*tape_u, zero, d_u).col(0);
    }
    out.mean += (b * config_.w) * grad_x;
    return out;
}

sample::FieldEval GuidedField::evaluate(const Vector& x, const sample::FieldQuery& q) {
    auto g = guided(x, q, q.primary);
    return {std::move(g.mean), std::move(g.var)};
}

Vector GuidedField::jvp(const Vector& x, const sample::FieldQuery& q, const Vector& v) {
    if (!config_.cfg_active()) return model_.jvp_mean(x, q.t, cond_, v);
    const double lam = scale_at(model_.forward(x, q.t, cond_), model_.forward(x, q.t, kNullCondition), nullptr);
    if (lam == 0.0) return model_.jvp_mean(x, q.t, cond_, v);
    return (1.0 + lam) * model_.jvp_mean(x, q.t, cond_, v) - lam * model_.jvp_mean(x, q.t, kNullCondition, v);
}

std::vector<StepCorrelation> sigma_correlation_by_step(const std::vector<std::vector<LambdaLogEntry>>& logs) {
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> pooled;
    std::map<int, double> times;
    for (const auto& log : logs) {
        for (const auto& e : log) {
            auto& [a, b] = pooled[e.step];
            for (Eigen::Index i = 0; i < e.sigma_cond.size(); ++i) {
                a.push_back(e.sigma_cond[i]);
                b.push_back(e.sigma_null[i]);
            }
            times[e.step] = e.t;
        }
    }
    std::vector<StepCorrelation> out;
    for (const auto& [step, ab] : pooled) {
        const double r = ab.first.size() >= 2 ? stats::pearson(ab.first, ab.second) : kNaN;
        out.push_back({step, times[step], r, ab.first.size()});
    }
    return out;
}

} // namespace uaflow::guidance
