#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include <Eigen/Dense>

namespace uaflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Class condition for classifier-free models. An empty optional is the null
// condition.
using Condition = std::optional<int>;

inline constexpr Condition kNullCondition = std::nullopt;

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to turn (seed, index) pairs into decorrelated
// stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Per-sample stream: seed XOR index, then mixed.
inline Rng sample_rng(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix_seed(seed ^ index));
}

inline Vector standard_normal(Eigen::Index n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
}

inline Vector rademacher(Eigen::Index n, Rng& rng) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = (rng() >> 63) ? 1.0 : -1.0;
    return v;
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

} // namespace uaflow
