#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <numbers>

#include "support.hpp"
#include "uaflow/data.hpp"
#include "uaflow/error.hpp"
#include "uaflow/sample.hpp"
#include "uaflow/train.hpp"

using namespace uaflow;
using sample::FlowState;
using testsupport::AffineField;

namespace {

AffineField scalar_field(double a, double c) {
    return AffineField(Matrix::Constant(1, 1, a), Vector::Constant(1, c), Vector::Ones(1));
}

// Integrate u(x) = x over [0, 1] from x = 1 with a fixed number of steps.
double exp_solve(int steps, sample::Method method) {
    auto f = scalar_field(1.0, 0.0);
    FlowState s{0.0, Vector::Ones(1), Vector::Zero(1)};
    const double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        s = method == sample::Method::Heun ? sample::step_heun(s, f, dt, k) : sample::step_euler(s, f, dt, k);
    }
    return s.mean[0];
}

class NanAfter final : public sample::VelocityField {
public:
    explicit NanAfter(int bad) : bad_(bad) {}
    int dim() const override { return 1; }
    sample::FieldEval evaluate(const Vector&, const sample::FieldQuery& q) override {
        const double v = q.step >= bad_ ? std::numeric_limits<double>::quiet_NaN() : 1.0;
        return {Vector::Constant(1, v), Vector::Ones(1)};
    }
    Vector jvp(const Vector&, const sample::FieldQuery&, const Vector& v) override { return 0 * v; }

private:
    int bad_;
};

} // namespace

TEST_CASE("Euler on constant and zero fields") {
    auto c = scalar_field(0.0, 2.5);
    const FlowState s{0.2, Vector::Constant(1, 1.0), Vector::Constant(1, 0.3)};
    const auto e = sample::step_euler(s, c, 0.1);
    CHECK(e.mean[0] == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(e.var == s.var);
    CHECK(e.t == doctest::Approx(0.3));
    auto z = scalar_field(0.0, 0.0);
    CHECK(sample::step_euler(s, z, 0.1).mean == s.mean);
    CHECK(sample::step_heun(s, c, 0.1).mean == e.mean);
}

TEST_CASE("exponential oracle: Euler within 5%, Heun within 0.05%") {
    const double e = std::numbers::e;
    CHECK(std::abs(exp_solve(50, sample::Method::Euler) - e) / e < 0.05);
    CHECK(std::abs(exp_solve(50, sample::Method::Heun) - e) / e < 5e-4);
}

TEST_CASE("Heun global error shrinks about fourfold when the step halves") {
    const double e = std::numbers::e;
    for (int n : {25, 50, 100}) {
        const double ratio = std::abs(exp_solve(n, sample::Method::Heun) - e) / std::abs(exp_solve(2 * n, sample::Method::Heun) - e);
        CHECK(ratio > 3.6);
        CHECK(ratio < 4.4);
    }
}

TEST_CASE("property: Heun and Euler trajectories differ by O(dt)") {
    std::vector<double> gaps;
    for (int n : {20, 40, 80, 160}) {
        auto f = scalar_field(1.0, 0.0);
        sample::SamplerConfig h{n, sample::Method::Heun, 0.0};
        sample::SamplerConfig eu{n, sample::Method::Euler, 0.0};
        const auto a = sample::sample(f, h, Vector::Ones(1));
        const auto b = sample::sample(f, eu, Vector::Ones(1));
        double gap = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) gap = std::max(gap, std::abs(a[k].mean[0] - b[k].mean[0]));
        gaps.push_back(gap);
    }
    for (std::size_t i = 1; i < gaps.size(); ++i) {
        const double ratio = gaps[i - 1] / gaps[i];
        CHECK(ratio > 1.8);
        CHECK(ratio < 2.2);
    }
}

TEST_CASE("sample never queries outside [eps, 1 - eps]") {
    for (auto method : {sample::Method::Euler, sample::Method::Heun}) {
        for (int steps : {1, 7, 50}) {
            AffineField f(Matrix::Identity(2, 2), Vector::Zero(2), Vector::Ones(2));
            const sample::SamplerConfig cfg{steps, method, 1e-3};
            const auto traj = sample::sample(f, cfg, Vector::Ones(2));
            CHECK(traj.size() == static_cast<std::size_t>(steps + 1));
            CHECK(traj.front().t == 1e-3);
            CHECK(traj.back().t == doctest::Approx(1 - 1e-3).epsilon(1e-15));
            for (double t : f.queried_t) {
                CHECK(t >= 1e-3);
                CHECK(t <= 1 - 1e-3 + 1e-15);
            }
        }
    }
}

TEST_CASE("sampler errors") {
    auto c = scalar_field(0.0, 1.0);
    const FlowState s{0.95, Vector::Zero(1), Vector::Zero(1)};
    CHECK_THROWS_AS(sample::step_euler(s, c, 0.0), InvalidArgument);
    CHECK_THROWS_AS(sample::step_euler(s, c, 0.1), InvalidArgument);
    CHECK_THROWS_AS(sample::sample(c, sample::SamplerConfig{0}, Vector::Zero(1)), InvalidArgument);
    CHECK_THROWS_AS(sample::sample(c, sample::SamplerConfig{}, Vector::Zero(2)), DimensionError);
    NanAfter bad(3);
    try {
        sample::sample(bad, sample::SamplerConfig{10, sample::Method::Heun}, Vector::Zero(1));
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 3") != std::string::npos);
    }
}

TEST_CASE("zero-initialised model leaves x0 in place and sampling is deterministic") {
    model::ModelConfig mc;
    mc.num_classes = 2;
    const model::VelocityModel m(mc);
    Vector x0(2);
    x0 << 0.3, -1.2;
    const auto traj = sample::sample(m, sample::SamplerConfig{}, x0, 1);
    CHECK(traj.back().mean == x0);

    const auto r = testsupport::random_model(2, {8, 8}, 2, model::Activation::SiLU, 3);
    const auto a = sample::sample(r, sample::SamplerConfig{}, x0, 0);
    const auto b = sample::sample(r, sample::SamplerConfig{}, x0, 0);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].mean == b[k].mean);
}

TEST_CASE("trained mixture model puts 95% of samples within 3 sigma of a mode") {
    const auto mix = data::ring_mixture(8, 4.0, 0.35);
    const auto ds = data::make_dataset(mix, false);
    Rng rng(21);
    const auto s = data::draw(ds, 4000, rng);
    model::ModelConfig mc;
    mc.hidden = {48, 48, 48};
    mc.seed = 2;
    train::TrainConfig tc;
    tc.steps = 20000;
    tc.batch_size = 128;
    tc.learning_rate = 2e-3;
    tc.ema_decay = 0.999;
    tc.seed = 3;
    const auto r = train::train(model::VelocityModel(mc), s, tc);
    int close = 0;
    for (int i = 0; i < 1000; ++i) {
        Rng srng = sample_rng(7, static_cast<std::uint64_t>(i));
        const auto traj = sample::sample(r.ema, sample::SamplerConfig{}, standard_normal(2, srng), kNullCondition);
        close += data::mode_distance(mix, traj.back().mean) <= 3.0;
    }
    MESSAGE("within 3 sigma: " << close << " / 1000");
    CHECK(close >= 950);
}
