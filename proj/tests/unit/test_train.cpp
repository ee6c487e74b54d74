#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "support.hpp"
#include "uaflow/data.hpp"
#include "uaflow/error.hpp"
#include "uaflow/train.hpp"

using namespace uaflow;
using paths::AffinePath;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

// Reweighted estimate summed directly with normalised Gaussian densities, no log-space.
Vector naive_uhat(const Matrix& x1, const Vector& x_t, double t) {
    const double n = static_cast<double>(x_t.size());
    const double s = 1.0 - t;
    Vector num = Vector::Zero(x_t.size());
    double den = 0.0;
    for (Eigen::Index b = 0; b < x1.cols(); ++b) {
        const double p = std::pow(2.0 * std::numbers::pi * s * s, -n / 2.0) *
                         std::exp(-(x_t - t * x1.col(b)).squaredNorm() / (2.0 * s * s));
        num += p * (x1.col(b) - x_t) / s;
        den += p;
    }
    return num / den;
}

// Per-element loss written out independently of the library.
double reference_loss(const model::ModelOutput& o, const Vector& u_cond, const Vector& uhat, double beta, bool corr,
                      const Vector* frozen_var = nullptr) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < o.mean.size(); ++i) {
        const double v = o.var[i];
        const double w = std::pow(frozen_var ? (*frozen_var)[i] : v, beta);
        const double r = o.mean[i] - u_cond[i];
        const double u = corr ? uhat[i] * uhat[i] - u_cond[i] * u_cond[i] : 0.0;
        sum += w * (u / (2 * v) + r * r / (2 * v) + 0.5 * std::log(v));
    }
    return sum / static_cast<double>(o.mean.size());
}

train::TrainConfig small_config(int steps, int batch, std::uint64_t seed) {
    train::TrainConfig c;
    c.steps = steps;
    c.batch_size = batch;
    c.seed = seed;
    return c;
}

} // namespace

TEST_CASE("uhat with one candidate is the conditional velocity") {
    AffinePath p;
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        const Vector x1 = standard_normal(3, rng);
        const Vector xt = standard_normal(3, rng);
        const double t = 0.05 * (i + 1) - 0.01;
        CHECK(train::uhat_minibatch(p, x1, xt, t) == paths::cond_velocity(p, xt, x1, t));
    }
}

TEST_CASE("uhat with equidistant candidates is the arithmetic mean") {
    AffinePath p;
    const double t = 0.4;
    Matrix x1(2, 2);
    x1.col(0) << 1.0, 0.0;
    x1.col(1) << -1.0, 0.0;
    const Vector xt = vec({0.0, 0.7});
    const Vector expect = 0.5 * (paths::cond_velocity(p, xt, x1.col(0), t) + paths::cond_velocity(p, xt, x1.col(1), t));
    CHECK((train::uhat_minibatch(p, x1, xt, t) - expect).norm() < 1e-15);
}

TEST_CASE("uhat matches a naive density-weighted sum on a 64-point batch") {
    AffinePath p;
    const auto ds = data::make_dataset(data::ring_mixture(8, 2.0, 0.3), false);
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix batch = data::draw(ds, 64, rng).points;
        const double t = 0.1 + 0.04 * trial;
        const Vector xt = paths::interpolate(p, batch.col(trial), standard_normal(2, rng), t);
        const Vector a = train::uhat_minibatch(p, batch, xt, t);
        const Vector b = naive_uhat(batch, xt, t);
        CHECK(testsupport::max_rel_err(a, b, 1e-3) < 1e-12);
    }
}

TEST_CASE("property: uhat is invariant under batch permutation") {
    AffinePath p;
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix batch = standard_normal(2 * 32, rng).reshaped(2, 32);
        const Vector xt = standard_normal(2, rng);
        const double t = 0.2 + 0.01 * trial;
        std::vector<Eigen::Index> perm(32);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix shuffled(2, 32);
        for (int j = 0; j < 32; ++j) shuffled.col(j) = batch.col(perm[j]);
        CHECK(testsupport::max_rel_err(train::uhat_minibatch(p, batch, xt, t),
                                       train::uhat_minibatch(p, shuffled, xt, t), 1e-6) < 1e-12);
    }
}

TEST_CASE("uhat falls back to the anchor when every density underflows") {
    AffinePath p;
    Matrix x1(1, 3);
    x1 << 0.0, 1.0, 2.0;
    const Vector xt = vec({60.0});
    const double t = 0.99;
    // log-density of each candidate is far below the floor
    CHECK(-0.5 * std::pow(60.0 - t * 2.0, 2) / ((1 - t) * (1 - t)) < train::kLogWeightFloor);
    CHECK(train::uhat_minibatch(p, x1, xt, t, 2) == paths::cond_velocity(p, xt, x1.col(2), t));
    CHECK_THROWS_AS(train::uhat_minibatch(p, x1, xt, t, 3), InvalidArgument);
    CHECK_THROWS_AS(train::uhat_minibatch(p, Matrix(1, 0), xt, t), InvalidArgument);
    CHECK_THROWS_AS(train::uhat_minibatch(p, x1, xt, 1.0), SingularTimeError);
}

TEST_CASE("property: uhat approaches the marginal velocity oracle at B = 4096") {
    // Per-point error at this batch size is Monte Carlo noise of order
    // sd(u | x_t) / sqrt(ESS); the check is the relative L2 error pooled over
    // typical points at mid-path times.
    AffinePath p;
    const auto mix = data::ring_mixture(8, 4.0, 0.35);
    const auto ds = data::make_dataset(mix, false);
    Rng rng(99);
    double err = 0.0, norm = 0.0;
    for (int probe = 0; probe < 20; ++probe) {
        const Matrix batch = data::draw(ds, 4096, rng).points;
        const double t = 0.4 + 0.3 * probe / 19.0;
        const Vector xt = paths::interpolate(p, data::draw(ds, 1, rng).points.col(0), standard_normal(2, rng), t);
        const Vector oracle = data::marginal_velocity_oracle(mix, p, xt, t).u;
        err += (train::uhat_minibatch(p, batch, xt, t) - oracle).squaredNorm();
        norm += oracle.squaredNorm();
    }
    MESSAGE("pooled relative error " << std::sqrt(err / norm));
    CHECK(std::sqrt(err / norm) < 0.02);
}

TEST_CASE("correction term") {
    CHECK(train::correction_term(vec({1.5, -2}), vec({1.5, -2})).isZero(0.0));
    CHECK(train::correction_term(vec({2}), vec({1}))[0] == 3.0);
    CHECK_THROWS_AS(train::correction_term(vec({2}), vec({1, 1})), DimensionError);
    AffinePath p;
    const Vector x1 = vec({0.3, 0.1});
    const Vector xt = vec({-1.0, 0.5});
    const Vector u = paths::cond_velocity(p, xt, x1, 0.3);
    CHECK(train::correction_term(train::uhat_minibatch(p, x1, xt, 0.3), u).isZero(0.0));
}

TEST_CASE("cufm_loss values") {
    const model::ModelOutput unit{vec({0.5, -1.0}), Vector::Ones(2)};
    const auto zero = train::cufm_loss(unit, unit.mean, vec({9, 9}), 1.0, false);
    CHECK(zero.total == 0.0);
    CHECK(zero.correction_term == 0.0);

    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + trial % 5;
        const model::ModelOutput o{standard_normal(n, rng), (0.5 * standard_normal(n, rng)).array().exp().matrix()};
        const Vector uc = standard_normal(n, rng);
        const Vector uh = standard_normal(n, rng);
        for (double beta : {0.0, 0.5, 1.0}) {
            for (bool corr : {false, true}) {
                const auto l = train::cufm_loss(o, uc, uh, beta, corr);
                CHECK(l.total == doctest::Approx(reference_loss(o, uc, uh, beta, corr)).epsilon(1e-13));
                CHECK(l.total == doctest::Approx(l.nll_term + l.correction_term).epsilon(1e-14));
            }
            // switching the correction on adds exactly mean(U sg(var^beta) / (2 var))
            const auto off = train::cufm_loss(o, uc, uh, beta, false);
            const auto on = train::cufm_loss(o, uc, uh, beta, true);
            const Eigen::ArrayXd u = train::correction_term(uh, uc).array();
            const double delta = (u * o.var.array().pow(beta) / (2.0 * o.var.array())).mean();
            CHECK(on.total - off.total == doctest::Approx(delta).epsilon(1e-10));
        }
        // beta = 1 is beta = 0 scaled by var, element by element
        for (int i = 0; i < n; ++i) {
            const model::ModelOutput e{o.mean.segment(i, 1), o.var.segment(i, 1)};
            const double l0 = train::cufm_loss(e, uc.segment(i, 1), uh.segment(i, 1), 0.0, true).total;
            const double l1 = train::cufm_loss(e, uc.segment(i, 1), uh.segment(i, 1), 1.0, true).total;
            CHECK(l1 == doctest::Approx(l0 * o.var[i]).epsilon(1e-13));
        }
    }
}

TEST_CASE("cufm_loss errors") {
    const model::ModelOutput bad{vec({0.0}), vec({0.0})};
    CHECK_THROWS_AS(train::cufm_loss(bad, vec({0}), vec({0}), 1.0, true), InvalidArgument);
    const model::ModelOutput inf{vec({0.0}), vec({std::numeric_limits<double>::infinity()})};
    try {
        train::cufm_loss(inf, vec({0}), vec({0}), 0.0, false);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("NLL") != std::string::npos);
    }
    const model::ModelOutput big{vec({0.0}), vec({1.0})};
    try {
        train::cufm_loss(big, vec({0}), vec({1e300}), 0.0, true);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("correction") != std::string::npos);
    }
    CHECK_THROWS_AS(train::cufm_loss(big, vec({0, 1}), vec({0}), 0.0, true), DimensionError);
}

TEST_CASE("loss adjoints match finite differences with the weight held constant") {
    Rng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + trial % 4;
        const Vector mean = standard_normal(n, rng);
        const Vector var = (0.5 * standard_normal(n, rng)).array().exp().matrix();
        const Vector uc = standard_normal(n, rng);
        const Vector uh = standard_normal(n, rng);
        const double beta = (trial % 3) * 0.5;
        const bool corr = trial % 2 == 0;
        const auto l = train::cufm_loss_with_adjoint({mean, var}, uc, uh, beta, corr);
        auto f_mean = [&](const Vector& m) { return reference_loss({m, var}, uc, uh, beta, corr, &var); };
        auto f_var = [&](const Vector& v) { return reference_loss({mean, v}, uc, uh, beta, corr, &var); };
        CHECK(testsupport::max_rel_err(l.d_mean, testsupport::fd_gradient(f_mean, mean, 1e-5), 1e-6) < 1e-6);
        CHECK(testsupport::max_rel_err(l.d_var, testsupport::fd_gradient(f_var, var, 1e-6), 1e-6) < 1e-5);
        if (beta == 1.0) {
            // the mean adjoint is the plain squared-error gradient
            CHECK(testsupport::max_rel_err(l.d_mean, (mean - uc) / n) < 1e-14);
        }
    }
}

TEST_CASE("Adam takes a learning-rate sized first step") {
    train::Adam adam(3, 0.01, 0.9, 0.999, 1e-8);
    Vector p = vec({1.0, -2.0, 0.0});
    adam.step(p, vec({4.0, -0.5, 0.0}));
    CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-8));
    CHECK(p[1] == doctest::Approx(-1.99).epsilon(1e-8));
    CHECK(p[2] == 0.0);
}

TEST_CASE("training config validation") {
    train::TrainConfig c;
    CHECK_NOTHROW(c.validate());
    auto bad = [](auto mutate) {
        train::TrainConfig c;
        mutate(c);
        return c;
    };
    CHECK_THROWS_AS(bad([](auto& c) { c.batch_size = 0; }).validate(), InvalidArgument);
    CHECK_THROWS_AS(bad([](auto& c) { c.beta = 1.5; }).validate(), InvalidArgument);
    CHECK_THROWS_AS(bad([](auto& c) { c.ema_decay = 1.0; }).validate(), InvalidArgument);
    CHECK_THROWS_AS(bad([](auto& c) { c.learning_rate = 0.0; }).validate(), InvalidArgument);
    CHECK_THROWS_AS(bad([](auto& c) { c.plain_fraction = -0.1; }).validate(), InvalidArgument);
}

TEST_CASE("train rejects bad inputs and reports divergence") {
    model::ModelConfig mc;
    mc.hidden = {8};
    mc.num_classes = 2;
    const model::VelocityModel m(mc);
    data::Samples s{Matrix::Zero(2, 4), {0, 1, 0, 5}};
    CHECK_THROWS_AS(train::train(m, s, small_config(5, 2, 0)), InvalidArgument);
    s.labels = {0, 1};
    CHECK_THROWS_AS(train::train(m, s, small_config(5, 2, 0)), InvalidArgument);
    CHECK_THROWS_AS(train::train(m, data::Samples{Matrix(2, 0), {}}, small_config(5, 2, 0)), InvalidArgument);
    CHECK_THROWS_AS(train::train(m, data::Samples{Matrix::Zero(3, 2), {0, 1}}, small_config(5, 2, 0)),
                    DimensionError);

    mc.num_classes = 0;
    const model::VelocityModel u(mc);
    try {
        train::train(u, data::Samples{Matrix::Constant(2, 2, 1e300), {-1, -1}}, small_config(5, 2, 0));
        FAIL("expected divergence");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("single point with B = 1: correction vanishes and CUFM equals UFM") {
    model::ModelConfig mc;
    mc.hidden = {16, 16};
    mc.seed = 3;
    const model::VelocityModel m(mc);
    const data::Samples point{vec({1.0, -0.5}), {-1}};
    auto cfg = small_config(100, 1, 8);
    cfg.plain_fraction = 0.0;
    cfg.learning_rate = 1e-3;
    const auto with = train::train(m, point, cfg);
    cfg.use_correction = false;
    const auto without = train::train(m, point, cfg);
    for (const auto& r : with.curve) CHECK(r.loss.correction_term == 0.0);
    CHECK(with.model.parameters() == without.model.parameters());
}

TEST_CASE("single point loss decreases on a smoothed curve") {
    // Smoothing: each step's loss averaged over a fixed set of (t, x0) draws,
    // so the curve measures the model rather than the sampling noise.
    model::ModelConfig mc;
    mc.hidden = {16, 16};
    mc.seed = 5;
    const model::VelocityModel m(mc);
    const Vector x1 = vec({1.0, -0.5});
    AffinePath p;
    Rng rng(77);
    std::uniform_real_distribution<double> time(1e-3, 1 - 1e-3);
    std::vector<double> ts;
    std::vector<Vector> x0s;
    for (int i = 0; i < 256; ++i) {
        ts.push_back(time(rng));
        x0s.push_back(standard_normal(2, rng));
    }
    auto eval = [&](const model::VelocityModel& mm) {
        double s = 0.0;
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const Vector xt = paths::interpolate(p, x1, x0s[i], ts[i]);
            const Vector uc = paths::cond_velocity(p, xt, x1, ts[i]);
            s += train::cufm_loss(mm.forward(xt, ts[i], kNullCondition), uc, uc, 1.0, true).total;
        }
        return s / static_cast<double>(ts.size());
    };
    std::vector<double> curve{eval(m)};
    model::VelocityModel cur = m;
    auto cfg = small_config(1, 1, 0);
    cfg.plain_fraction = 0.0;
    cfg.learning_rate = 1e-3;
    for (int step = 0; step < 100; ++step) {
        // one step at a time; a fresh optimiser each step keeps this a plain
        // small-step descent
        cfg.seed = static_cast<std::uint64_t>(step);
        cur = train::train(cur, data::Samples{x1, {-1}}, cfg).model;
        curve.push_back(eval(cur));
    }
    int rises = 0;
    for (std::size_t i = 10; i < curve.size(); i += 10) rises += curve[i] > curve[i - 10];
    CHECK(rises == 0);
    CHECK(curve.back() < curve.front());
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
    model::ModelConfig mc;
    mc.hidden = {16, 16};
    mc.num_classes = 4;
    const model::VelocityModel m(mc);
    Rng rng(1);
    const auto s = data::draw(data::make_dataset(data::ring_mixture(4, 2.0, 0.3), true), 200, rng);
    const auto a = train::train(m, s, small_config(30, 16, 42));
    const auto b = train::train(m, s, small_config(30, 16, 42));
    CHECK(a.model.parameters() == b.model.parameters());
    CHECK(a.ema.parameters() == b.ema.parameters());
    const auto c = train::train(m, s, small_config(30, 16, 43));
    CHECK(a.model.parameters() != c.model.parameters());
    REQUIRE(a.curve.size() == 30);
    // stage one: correction is off and sigma is pinned at 1
    CHECK(a.curve[0].loss.correction_term == 0.0);
}

TEST_CASE("8-mode mixture: trained mean beats the untrained baseline by 10x") {
    const auto mix = data::ring_mixture(8, 3.0, 0.3);
    const auto ds = data::make_dataset(mix, false);
    Rng rng(6);
    const auto s = data::draw(ds, 4000, rng);
    model::ModelConfig mc;
    mc.hidden = {32, 32, 32};
    mc.seed = 1;
    const model::VelocityModel init(mc);
    auto cfg = small_config(20000, 64, 2);
    cfg.learning_rate = 2e-3;
    cfg.ema_decay = 0.995;
    const auto r = train::train(init, s, cfg);

    AffinePath p;
    std::uniform_real_distribution<double> time(0.05, 0.95);
    double err_trained = 0.0, err_init = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const double t = time(rng);
        const Vector xt = paths::interpolate(p, data::draw(ds, 1, rng).points.col(0), standard_normal(2, rng), t);
        const Vector u = data::marginal_velocity_oracle(mix, p, xt, t).u;
        err_trained += (r.ema.forward(xt, t, kNullCondition).mean - u).squaredNorm();
        err_init += (init.forward(xt, t, kNullCondition).mean - u).squaredNorm();
    }
    MESSAGE("mse trained " << err_trained / 2000 << " untrained " << err_init / 2000);
    CHECK(err_trained * 10.0 <= err_init);
}
