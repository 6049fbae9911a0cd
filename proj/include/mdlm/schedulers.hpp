#pragma once

#include <span>
#include <vector>

#include "mdlm/core.hpp"
#include "mdlm/models.hpp"

namespace mdlm {

/// Positions to decode in one step, ascending.
struct Selection {
    std::vector<Position> positions;
    Rationale rationale = Rationale::MinEntropy;
};

// Every selector throws EmptyCandidates on an empty candidate list. Entropy ties go to the
// smaller position.

Selection select_left_to_right(std::span<const PositionReport> candidates);

/// The min(k, n) lowest-entropy candidates.
Selection select_min_entropy(std::span<const PositionReport> candidates, int k);

/// Candidates with entropy < lambda in ascending entropy, at most k_max; otherwise the single
/// min-entropy candidate.
Selection select_med(std::span<const PositionReport> candidates, double lambda, int k_max);

/// Contiguous run from the leftmost candidate while entropy < lambda and count < k_max. A gap in
/// positions ends the run. If the leftmost fails the threshold it is returned alone.
Selection select_ar_med(std::span<const PositionReport> candidates, double lambda, int k_max);

/// Dispatches on the order policy.
Selection select(const OrderPolicy& order, std::span<const PositionReport> candidates);

/// Earliest block (aligned at position 0) that still holds a masked cell; empty when none.
Interval block_window(const MaskedSequence& seq, int block_size);

/// Same, counting only masked cells inside `region`.
Interval block_window(const MaskedSequence& seq, int block_size, Interval region);

}  // namespace mdlm
