#include "uaflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "uaflow/error.hpp"

namespace uaflow::train {

void TrainConfig::validate() const {
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("beta must lie in [0, 1]");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
    if (steps < 0) throw InvalidArgument("steps must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw InvalidArgument("ema_decay must lie in [0, 1)");
    if (!(label_dropout >= 0.0 && label_dropout <= 1.0)) throw InvalidArgument("label_dropout must lie in [0, 1]");
    if (!(plain_fraction >= 0.0 && plain_fraction <= 1.0)) throw InvalidArgument("plain_fraction must lie in [0, 1]");
    if (!(time_eps > 0.0 && time_eps < 0.5)) throw InvalidArgument("time_eps must lie in (0, 0.5)");
}

Vector uhat_minibatch(const paths::AffinePath& path, const Matrix& batch_x1, const Vector& x_t, double t,
                      Eigen::Index anchor) {
    const Eigen::Index batch = batch_x1.cols();
    if (batch < 1) throw InvalidArgument("uhat_minibatch needs at least one candidate");
    if (batch_x1.rows() != x_t.size()) throw DimensionError("uhat_minibatch: candidate dimension mismatch");
    if (anchor < 0 || anchor >= batch) throw InvalidArgument("uhat_minibatch: anchor out of range");
    const auto c = path.at(t);
    if (c.beta == 0.0) throw SingularTimeError("uhat_minibatch: beta_t vanishes", t);

    // log N(x_t; alpha x1, beta^2 I)
    const double n = static_cast<double>(x_t.size());
    const double log_norm = -n * std::log(c.beta) - 0.5 * n * std::log(2.0 * std::numbers::pi);
    Vector logw(batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        logw[b] = log_norm - 0.5 * (x_t - c.alpha * batch_x1.col(b)).squaredNorm() / (c.beta * c.beta);
    }
    const double top = logw.maxCoeff();
    if (top < kLogWeightFloor) return paths::cond_velocity(path, x_t, batch_x1.col(anchor), t);

    Vector num = Vector::Zero(x_t.size());
    double den = 0.0;
    for (Eigen::Index b = 0; b < batch; ++b) {
        const double w = std::exp(logw[b] - top);
        num += w * paths::cond_velocity(path, x_t, batch_x1.col(b), t);
        den += w;
    }
    return num / den;
}

Vector correction_term(const Vector& uhat, const Vector& u_cond) {
    if (uhat.size() != u_cond.size()) throw DimensionError("correction_term: dimension mismatch");
    return (uhat.array().square() - u_cond.array().square()).matrix();
}

LossWithAdjoint cufm_loss_with_adjoint(const model::ModelOutput& output, const Vector& u_cond, const Vector& uhat,
                                       double beta, bool use_correction) {
    const Eigen::Index n = output.mean.size();
    if (output.var.size() != n || u_cond.size() != n || uhat.size() != n) {
        throw DimensionError("cufm_loss: dimension mismatch");
    }
    if (!((output.var.array() > 0.0).all())) throw InvalidArgument("cufm_loss: variance must be positive");

    const Eigen::ArrayXd v = output.var.array();
    const Eigen::ArrayXd w = v.pow(beta); // stop-gradient weight
    const Eigen::ArrayXd r = output.mean.array() - u_cond.array();
    const Eigen::ArrayXd corr =
        use_correction ? correction_term(uhat, u_cond).array() : Eigen::ArrayXd::Zero(n).eval();

    const Eigen::ArrayXd nll = w * (r.square() / (2.0 * v) + 0.5 * v.log());
    const Eigen::ArrayXd cterm = w * corr / (2.0 * v);
    const double inv_n = 1.0 / static_cast<double>(n);

    LossWithAdjoint out;
    out.loss.nll_term = nll.sum() * inv_n;
    out.loss.correction_term = cterm.sum() * inv_n;
    out.loss.total = (nll + cterm).sum() * inv_n;
    if (!std::isfinite(out.loss.nll_term)) {
        throw NumericError("cufm_loss: non-finite NLL term (" + std::to_string(out.loss.nll_term) + ")");
    }
    if (!std::isfinite(out.loss.correction_term)) {
        throw NumericError("cufm_loss: non-finite correction term (" + std::to_string(out.loss.correction_term) +
                           ")");
    }
    out.d_mean = (w * r / v * inv_n).matrix();
    out.d_var = (w * (-(r.square() + corr) / (2.0 * v.square()) + 0.5 / v) * inv_n).matrix();
    return out;
}

LossBreakdown cufm_loss(const model::ModelOutput& output, const Vector& u_cond, const Vector& uhat, double beta,
                        bool use_correction) {
    return cufm_loss_with_adjoint(output, u_cond, uhat, beta, use_correction).loss;
}

Adam::Adam(Eigen::Index size, double lr, double beta1, double beta2, double eps)
    : m_(Vector::Zero(size)), v_(Vector::Zero(size)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(Vector& params, const Vector& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

TrainResult train(const model::VelocityModel& init, const data::Samples& data, const TrainConfig& config,
                  const paths::AffinePath& path, const ProgressFn& progress) {
    config.validate();
    const Eigen::Index count = data.points.cols();
    const int n = init.dim();
    if (count < 1) throw InvalidArgument("training dataset is empty");
    if (data.points.rows() != n) throw DimensionError("training data dimension does not match the model");
    if (init.conditional()) {
        if (static_cast<Eigen::Index>(data.labels.size()) != count) {
            throw InvalidArgument("conditional model needs one label per training sample");
        }
        for (int l : data.labels) {
            if (l < 0 || l >= init.num_classes()) throw InvalidArgument("training label outside the model's classes");
        }
    }

    TrainResult result{init, init, {}};
    auto& model = result.model;
    auto& ema = result.ema;
    Adam adam(model.parameter_count(), config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
    Rng rng(mix_seed(config.seed));
    std::uniform_int_distribution<Eigen::Index> pick(0, count - 1);
    std::uniform_real_distribution<double> time(config.time_eps, 1.0 - config.time_eps);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    const int B = config.batch_size;
    const int plain_steps = static_cast<int>(std::floor(config.plain_fraction * config.steps));
    Matrix x1(n, B), xt(n, B), u_cond(n, B), uhat(n, B);
    Vector t(B);
    std::vector<Condition> conds(B);
    std::vector<int> labels(B);
    result.curve.reserve(config.steps);

    for (int step = 0; step < config.steps; ++step) {
        const bool plain = step < plain_steps;
        for (int b = 0; b < B; ++b) {
            const Eigen::Index idx = pick(rng);
            x1.col(b) = data.points.col(idx);
            labels[b] = init.conditional() ? data.labels[idx] : -1;
            conds[b] = kNullCondition;
            if (init.conditional() && !(unit(rng) < config.label_dropout)) conds[b] = labels[b];
            t[b] = time(rng);
            Vector x0(n);
            for (int i = 0; i < n; ++i) x0[i] = normal(rng);
            xt.col(b) = paths::interpolate(path, x1.col(b), x0, t[b]);
            u_cond.col(b) = paths::cond_velocity(path, xt.col(b), x1.col(b), t[b]);
        }
        // The estimate targets the marginal of whatever the model is asked to
        // predict: same-label candidates for labelled samples, all otherwise.
        const bool corrected = !plain && config.use_correction;
        for (int b = 0; corrected && b < B; ++b) {
            if (!conds[b].has_value()) {
                uhat.col(b) = uhat_minibatch(path, x1, xt.col(b), t[b], b);
                continue;
            }
            std::vector<Eigen::Index> same;
            Eigen::Index anchor = 0;
            for (int k = 0; k < B; ++k) {
                if (labels[k] != *conds[b]) continue;
                if (k == b) anchor = static_cast<Eigen::Index>(same.size());
                same.push_back(k);
            }
            Matrix cand(n, static_cast<Eigen::Index>(same.size()));
            for (std::size_t k = 0; k < same.size(); ++k) cand.col(static_cast<Eigen::Index>(k)) = x1.col(same[k]);
            uhat.col(b) = uhat_minibatch(path, cand, xt.col(b), t[b], anchor);
        }

        const model::Tape tape = model.forward_tape(xt, t, conds);
        Matrix d_mean(n, B), d_var(n, B);
        LossBreakdown mean_loss;
        for (int b = 0; b < B; ++b) {
            model::ModelOutput out{tape.mean.col(b), tape.var.col(b)};
            if (plain) out.var = Vector::Ones(n);
            const Vector uh = corrected ? Vector(uhat.col(b)) : Vector(u_cond.col(b));
            LossWithAdjoint l;
            try {
                l = cufm_loss_with_adjoint(out, u_cond.col(b), uh, plain ? 0.0 : config.beta, corrected);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
            }
            d_mean.col(b) = l.d_mean / B;
            d_var.col(b) = plain ? Vector::Zero(n) : Vector(l.d_var / B);
            mean_loss.total += l.loss.total / B;
            mean_loss.nll_term += l.loss.nll_term / B;
            mean_loss.correction_term += l.loss.correction_term / B;
        }
        if (!std::isfinite(mean_loss.total)) {
            throw NumericError("training diverged at step " + std::to_string(step) + ": non-finite loss");
        }

        const Vector grad = model.backward(tape, d_mean, d_var);
        adam.step(model.parameters(), grad);
        if (!model.parameters().allFinite()) {
            throw NumericError("training diverged at step " + std::to_string(step) + ": non-finite parameters");
        }
        ema.parameters() = config.ema_decay * ema.parameters() + (1.0 - config.ema_decay) * model.parameters();

        result.curve.push_back({step, mean_loss});
        if (progress) progress(result.curve.back());
    }
    return result;
}

} // namespace uaflow::train
