#include "uaflow/cli/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>

#include "uaflow/error.hpp"

namespace uaflow::cli {

void SampleOptions::validate(const model::VelocityModel& model) const {
    sampler.validate();
    uq.validate();
    guidance.validate();
    if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw ConfigError("top fraction must lie in (0, 1]");
    if (score == ScoreKind::Au && renoise < 2) throw ConfigError("AU scoring needs at least 2 re-noised states");
    if (!(au_window > 0.0 && au_window <= 1.0)) throw ConfigError("AU window must lie in (0, 1]");
    const bool pairs = guidance.cfg_active() || guidance.record_sigma_pairs;
    if (!model.conditional()) {
        if (cls || cycle_classes) throw ConfigError("class selection needs a conditional model");
        if (guidance.cfg_active()) throw ConfigError("classifier-free guidance needs a conditional model");
        if (pairs) throw ConfigError("sigma-pair logging needs a conditional model");
    } else {
        if (cls && (*cls < 0 || *cls >= model.num_classes())) {
            throw ConfigError("class " + std::to_string(*cls) + " out of range [0, " +
                              std::to_string(model.num_classes()) + ")");
        }
        if (pairs && !cls && !cycle_classes) {
            throw ConfigError("classifier-free guidance and sigma-pair logging need a class (--class K or --class cycle)");
        }
    }
}

Condition SampleOptions::condition_for(const model::VelocityModel& model, std::size_t index) const {
    if (cycle_classes) return static_cast<int>(index % static_cast<std::size_t>(model.num_classes()));
    return cls;
}

SampleResult generate_one(const model::VelocityModel& model, const SampleOptions& options, std::size_t index) {
    SampleResult out;
    out.cond = options.condition_for(model, index);
    out.seed = options.seed ^ static_cast<std::uint64_t>(index);
    Rng rng = sample_rng(options.seed, index);
    const Vector x0 = standard_normal(model.dim(), rng);

    const auto& g = options.guidance;
    const bool guided = g.cg_enabled || g.cfg_active() || g.record_sigma_pairs;
    std::optional<guidance::GuidedField> gfield;
    std::optional<sample::ModelField> mfield;
    sample::VelocityField* field;
    if (guided) field = &gfield.emplace(model, out.cond, g);
    else field = &mfield.emplace(model, out.cond);

    if (options.score == ScoreKind::Uaflow) {
        auto r = uq::generate(*field, options.sampler, options.uq, x0, rng);
        out.x = r.trajectory.back().mean;
        out.var_map = std::move(r.var_final);
        out.floored = r.stats.floored;
    } else {
        const auto traj = sample::sample(*field, options.sampler, x0);
        out.x = traj.back().mean;
        sample::ModelField plain(model, out.cond);
        out.var_map = uq::au_baseline_score(plain, traj, paths::AffinePath{}, options.renoise, options.au_window, rng).var_map;
    }
    out.score = uq::aggregate_score(out.var_map, options.top_fraction);
    if (gfield) out.lambda_log = gfield->log();
    return out;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(std::clamp<long>(threads, 1, static_cast<long>(std::max<std::size_t>(n, 1))));
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::vector<SampleResult> generate_many(const model::VelocityModel& model, const SampleOptions& options,
                                        std::size_t n, int threads) {
    options.validate(model);
    std::vector<SampleResult> out(n);
    parallel_for(n, threads, [&](std::size_t i) { out[i] = generate_one(model, options, i); });
    return out;
}

int default_threads() {
    if (const char* env = std::getenv("UAFLOW_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1 || v > 1024) {
            throw ConfigError(std::string("UAFLOW_THREADS must be an integer in [1, 1024], got '") + env + "'");
        }
        return static_cast<int>(v);
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

} // namespace uaflow::cli
