#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mdlm {

/// Shannon entropy in nats; zero-probability entries contribute nothing.
double entropy(std::span<const double> probs);

/// Normalizes non-negative weights in place; returns the pre-normalization total.
double normalize(std::span<double> weights);

/// Softmax of logits (shifted by the max for stability).
std::vector<double> softmax(std::span<const double> logits);

double safe_log(double p);

std::uint64_t splitmix64(std::uint64_t x);

/// Per-session seed derived from a run seed; independent of thread scheduling.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t index);

/// Seeded generator with platform-stable uniform and categorical draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform double in [0, 1) built from the top 53 bits.
    double uniform();

    /// Index drawn proportionally to non-negative weights (need not sum to 1).
    std::size_t categorical(std::span<const double> weights);

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace mdlm
