#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "uaflow/guidance.hpp"
#include "uaflow/model.hpp"
#include "uaflow/sample.hpp"
#include "uaflow/uq.hpp"

namespace uaflow::cli {

enum class ScoreKind { Uaflow, Au };

struct SampleOptions {
    sample::SamplerConfig sampler;
    uq::UqConfig uq;
    guidance::GuidanceConfig guidance;
    ScoreKind score = ScoreKind::Uaflow;
    double top_fraction = 0.1;
    int renoise = 8;
    double au_window = 0.25;
    // Fixed class, or index % num_classes when cycle_classes is set.
    Condition cls = kNullCondition;
    bool cycle_classes = false;
    std::uint64_t seed = 0;

    void validate(const model::VelocityModel& model) const;
    Condition condition_for(const model::VelocityModel& model, std::size_t index) const;
};

struct SampleResult {
    Vector x;
    Vector var_map; // final variance, or the AU variance map
    double score = 0.0;
    Condition cond;
    std::uint64_t seed = 0; // seed ^ index
    std::vector<guidance::LambdaLogEntry> lambda_log;
    long floored = 0;
};

// One trajectory with the per-sample generator sample_rng(seed, index).
SampleResult generate_one(const model::VelocityModel& model, const SampleOptions& options, std::size_t index);

// Samples [0, n) spread across `threads` workers; output order and values do
// not depend on the worker count.
std::vector<SampleResult> generate_many(const model::VelocityModel& model, const SampleOptions& options,
                                        std::size_t n, int threads);

// Runs fn(i) for i in [0, n) on up to `threads` threads. The exception of the
// lowest failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// UAFLOW_THREADS if set, else the hardware concurrency.
int default_threads();

} // namespace uaflow::cli
