#include "mdlm/schedulers.hpp"

#include <algorithm>
#include <numeric>

namespace mdlm {

namespace {

void require_candidates(std::span<const PositionReport> candidates) {
    if (candidates.empty()) throw EmptyCandidates("no candidate positions to select from");
}

// Candidate indices ordered by (entropy, position).
std::vector<std::size_t> by_entropy(std::span<const PositionReport> candidates) {
    std::vector<std::size_t> idx(candidates.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (candidates[a].entropy != candidates[b].entropy) return candidates[a].entropy < candidates[b].entropy;
        return candidates[a].position < candidates[b].position;
    });
    return idx;
}

std::vector<std::size_t> by_position(std::span<const PositionReport> candidates) {
    std::vector<std::size_t> idx(candidates.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return candidates[a].position < candidates[b].position; });
    return idx;
}

Selection sorted(Selection s) {
    std::sort(s.positions.begin(), s.positions.end());
    return s;
}

}  // namespace

Selection select_left_to_right(std::span<const PositionReport> candidates) {
    require_candidates(candidates);
    const auto it = std::min_element(candidates.begin(), candidates.end(),
                                     [](const auto& a, const auto& b) { return a.position < b.position; });
    return {{it->position}, Rationale::Leftmost};
}

Selection select_min_entropy(std::span<const PositionReport> candidates, int k) {
    require_candidates(candidates);
    const auto order = by_entropy(candidates);
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 1)), order.size());
    Selection s{{}, k == 1 ? Rationale::MinEntropy : Rationale::FixedK};
    for (std::size_t i = 0; i < n; ++i) s.positions.push_back(candidates[order[i]].position);
    return sorted(std::move(s));
}

Selection select_med(std::span<const PositionReport> candidates, double lambda, int k_max) {
    require_candidates(candidates);
    const auto order = by_entropy(candidates);
    Selection s{{}, Rationale::UnderThreshold};
    for (std::size_t i : order) {
        if (static_cast<int>(s.positions.size()) >= k_max) break;
        if (!(candidates[i].entropy < lambda)) break;
        s.positions.push_back(candidates[i].position);
    }
    if (s.positions.empty()) {
        return {{candidates[order.front()].position}, Rationale::FallbackMinEntropy};
    }
    return sorted(std::move(s));
}

Selection select_ar_med(std::span<const PositionReport> candidates, double lambda, int k_max) {
    require_candidates(candidates);
    const auto order = by_position(candidates);
    const auto& first = candidates[order.front()];
    if (!(first.entropy < lambda)) {
        return {{first.position}, Rationale::FallbackLeftmost};
    }
    Selection s{{first.position}, Rationale::UnderThreshold};
    for (std::size_t i = 1; i < order.size(); ++i) {
        const auto& c = candidates[order[i]];
        if (static_cast<int>(s.positions.size()) >= k_max) break;
        if (c.position != s.positions.back() + 1) break;
        if (!(c.entropy < lambda)) break;
        s.positions.push_back(c.position);
    }
    return s;
}

Selection select(const OrderPolicy& order, std::span<const PositionReport> candidates) {
    switch (order.kind) {
        case OrderKind::LeftToRight: return select_left_to_right(candidates);
        case OrderKind::AnyOrderMinEntropy: return select_min_entropy(candidates, 1);
        case OrderKind::FixedK: return select_min_entropy(candidates, order.k);
        case OrderKind::Med: return select_med(candidates, order.lambda, order.k_max);
        case OrderKind::ArMed: return select_ar_med(candidates, order.lambda, order.k_max);
    }
    throw ConfigError("unknown order policy");
}

Interval block_window(const MaskedSequence& seq, int block_size) {
    return block_window(seq, block_size, {0, static_cast<Position>(seq.length())});
}

Interval block_window(const MaskedSequence& seq, int block_size, Interval region) {
    if (block_size < 1) throw ConfigError("block_size must be >= 1");
    const auto L = static_cast<Position>(seq.length());
    for (Position p = std::max<Position>(0, region.begin); p < std::min(L, region.end); ++p) {
        if (seq.is_masked(p)) {
            const Position begin = (p / block_size) * block_size;
            return {begin, std::min(L, begin + block_size)};
        }
    }
    return {0, 0};
}

}  // namespace mdlm
