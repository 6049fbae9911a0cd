#pragma once

// Brute-force reference computations over explicit joint tables. Deliberately naive: every
// quantity is a direct sum over all V^L outcomes, sharing no code with the library.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace oracle {

struct Joint {
    int length = 0;
    int vocab = 0;
    std::vector<double> p;  // row-major, first position most significant

    std::vector<int> outcome(std::size_t idx) const {
        std::vector<int> x(static_cast<std::size_t>(length));
        for (int i = length - 1; i >= 0; --i) {
            x[static_cast<std::size_t>(i)] = static_cast<int>(idx % static_cast<std::size_t>(vocab));
            idx /= static_cast<std::size_t>(vocab);
        }
        return x;
    }

    std::size_t index(const std::vector<int>& x) const {
        std::size_t idx = 0;
        for (int v : x) idx = idx * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(v);
        return idx;
    }
};

// -1 marks a masked cell.
using Partial = std::vector<int>;

inline bool consistent(const std::vector<int>& x, const Partial& given) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (given[i] >= 0 && given[i] != x[i]) return false;
    }
    return true;
}

inline double evidence(const Joint& j, const Partial& given) {
    double total = 0.0;
    for (std::size_t idx = 0; idx < j.p.size(); ++idx) {
        if (consistent(j.outcome(idx), given)) total += j.p[idx];
    }
    return total;
}

// p(x_pos = v | given), for every v.
inline std::vector<double> marginal(const Joint& j, const Partial& given, int pos) {
    std::vector<double> m(static_cast<std::size_t>(j.vocab), 0.0);
    double total = 0.0;
    for (std::size_t idx = 0; idx < j.p.size(); ++idx) {
        const auto x = j.outcome(idx);
        if (!consistent(x, given)) continue;
        m[static_cast<std::size_t>(x[static_cast<std::size_t>(pos)])] += j.p[idx];
        total += j.p[idx];
    }
    for (double& v : m) v /= total;
    return m;
}

// Joint over the listed positions given the partial assignment, keyed row-major over `positions`.
inline std::vector<double> joint_over(const Joint& j, const Partial& given, const std::vector<int>& positions) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < positions.size(); ++i) n *= static_cast<std::size_t>(j.vocab);
    std::vector<double> out(n, 0.0);
    double total = 0.0;
    for (std::size_t idx = 0; idx < j.p.size(); ++idx) {
        const auto x = j.outcome(idx);
        if (!consistent(x, given)) continue;
        std::size_t k = 0;
        for (int pos : positions) k = k * static_cast<std::size_t>(j.vocab) + static_cast<std::size_t>(x[static_cast<std::size_t>(pos)]);
        out[k] += j.p[idx];
        total += j.p[idx];
    }
    for (double& v : out) v /= total;
    return out;
}

inline double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

// KL(joint over A || product of its marginals).
inline double kl_to_product(const Joint& j, const Partial& given, const std::vector<int>& positions) {
    const auto full = joint_over(j, given, positions);
    std::vector<std::vector<double>> marg;
    for (int pos : positions) marg.push_back(marginal(j, given, pos));
    double kl = 0.0;
    for (std::size_t k = 0; k < full.size(); ++k) {
        if (full[k] <= 0.0) continue;
        std::size_t rest = k;
        double q = 1.0;
        for (std::size_t i = positions.size(); i-- > 0;) {
            q *= marg[i][rest % static_cast<std::size_t>(j.vocab)];
            rest /= static_cast<std::size_t>(j.vocab);
        }
        kl += full[k] * std::log(full[k] / q);
    }
    return kl;
}

inline int argmax(const std::vector<double>& p) {
    int best = 0;
    for (int v = 1; v < static_cast<int>(p.size()); ++v) {
        if (p[static_cast<std::size_t>(v)] > p[static_cast<std::size_t>(best)]) best = v;
    }
    return best;
}

// Greedy chain-rule completion, left to right.
inline std::vector<int> greedy_left_to_right(const Joint& j) {
    Partial given(static_cast<std::size_t>(j.length), -1);
    for (int pos = 0; pos < j.length; ++pos) given[static_cast<std::size_t>(pos)] = argmax(marginal(j, given, pos));
    return given;
}

// Bayes posterior over the first `prefix` cells given the rest fixed to `suffix`.
inline std::vector<double> posterior_prefix(const Joint& j, int prefix, const std::vector<int>& suffix) {
    std::size_t n = 1;
    for (int i = 0; i < prefix; ++i) n *= static_cast<std::size_t>(j.vocab);
    std::vector<double> out(n, 0.0);
    double total = 0.0;
    for (std::size_t idx = 0; idx < j.p.size(); ++idx) {
        const auto x = j.outcome(idx);
        bool match = true;
        for (std::size_t s = 0; s < suffix.size(); ++s) match = match && x[static_cast<std::size_t>(prefix) + s] == suffix[s];
        if (!match) continue;
        out[idx / (j.p.size() / n)] += j.p[idx];
        total += j.p[idx];
    }
    for (double& v : out) v /= total;
    return out;
}

inline Joint random_joint(std::mt19937_64& gen, int length, int vocab, double zero_rate = 0.0) {
    Joint j{length, vocab, {}};
    std::size_t n = 1;
    for (int i = 0; i < length; ++i) n *= static_cast<std::size_t>(vocab);
    std::exponential_distribution<double> expo(1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double v = unif(gen) < zero_rate ? 0.0 : expo(gen);
        j.p.push_back(v);
        total += v;
    }
    if (total == 0.0) {
        j.p[0] = 1.0;
        total = 1.0;
    }
    for (double& v : j.p) v /= total;
    return j;
}

}  // namespace oracle
