#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "uaflow/data.hpp"
#include "uaflow/model.hpp"
#include "uaflow/paths.hpp"

namespace uaflow::train {

struct TrainConfig {
    int batch_size = 256;
    double beta = 1.0; // beta-NLL exponent
    double learning_rate = 1e-3;
    int steps = 2000;
    double ema_decay = 0.999;
    bool use_correction = true;
    double label_dropout = 0.1;
    // Leading fraction of steps trained as plain flow matching (sigma held at
    // 1, variance head untouched) before switching to the uncertainty-aware
    // loss.
    double plain_fraction = 0.7;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double time_eps = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double nll_term = 0.0;
    double correction_term = 0.0;
};

// Loss value plus adjoints with respect to the model's mean and variance
// outputs. The sg[var^beta] weight is a constant for the adjoints.
struct LossWithAdjoint {
    LossBreakdown loss;
    Vector d_mean;
    Vector d_var;
};

inline constexpr double kLogWeightFloor = -700.0;

// Self-normalised mini-batch estimate of the marginal velocity at x_t.
// batch_x1 holds candidates as columns. If every Gaussian log-density falls
// below kLogWeightFloor the estimate falls back to the conditional velocity of
// column `anchor`.
Vector uhat_minibatch(const paths::AffinePath& path, const Matrix& batch_x1, const Vector& x_t, double t,
                      Eigen::Index anchor = 0);

Vector correction_term(const Vector& uhat, const Vector& u_cond);

LossBreakdown cufm_loss(const model::ModelOutput& output, const Vector& u_cond, const Vector& uhat, double beta,
                        bool use_correction);

LossWithAdjoint cufm_loss_with_adjoint(const model::ModelOutput& output, const Vector& u_cond, const Vector& uhat,
                                       double beta, bool use_correction);

struct LossRecord {
    int step;
    LossBreakdown loss;
};

struct TrainResult {
    model::VelocityModel model;
    model::VelocityModel ema;
    std::vector<LossRecord> curve;
};

// Adam with bias correction over a flat parameter vector.
class Adam {
public:
    Adam(Eigen::Index size, double lr, double beta1, double beta2, double eps);
    void step(Vector& params, const Vector& grad);

private:
    Vector m_;
    Vector v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

using ProgressFn = std::function<void(const LossRecord&)>;

// Fully deterministic for a fixed config.seed. `data` columns are x1 samples;
// labels are used for conditional models (label dropout applied per sample).
TrainResult train(const model::VelocityModel& init, const data::Samples& data, const TrainConfig& config,
                  const paths::AffinePath& path = paths::AffinePath{}, const ProgressFn& progress = {});

} // namespace uaflow::train
