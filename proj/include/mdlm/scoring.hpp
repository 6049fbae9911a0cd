#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mdlm/core.hpp"
#include "mdlm/engine.hpp"
#include "mdlm/models.hpp"

namespace mdlm {

struct TraceScore {
    double phi = 0.0;  // nats, <= 0
    double hub = 0.0;  // nats, >= 0
    int step_index = 0;
    double fraction_unmasked = 0.0;  // of the reasoning span
};

/// Gold-answer log-likelihood of a partially decoded canvas. One model call.
TraceScore phi_score(const ConditionalModel& model, const MaskedSequence& canvas, const Template& tmpl,
                     std::span<const TokenId> gold_answer, int step_index = 0);

struct ChainScore {
    std::vector<int> reveal;  // reasoning tokens revealed at each point of the curve
    std::vector<double> phi_curve;
    std::vector<double> hub_curve;
    double mean_score = 0.0;
};

/// Reveals the reasoning left to right (every `stride` tokens, starting at 0) and averages phi.
ChainScore chain_filter_score(const ConditionalModel& model, const std::vector<TokenId>& context, const Template& tmpl,
                              std::size_t length, std::span<const TokenId> reasoning,
                              std::span<const TokenId> gold_answer, int stride = 1);

/// KL(p || q) over output distributions; SupportMismatch if p has mass where q has none.
double kl_divergence(const OutputDistribution& p, const OutputDistribution& q);

/// KL between the output distributions two policies induce from the same canvas.
double schedule_kl_exact(const DenseConditionalModel& model, const DecodePolicy& a, const DecodePolicy& b,
                         const MaskedSequence& canvas, const std::optional<Template>& tmpl = std::nullopt,
                         std::size_t cap = 1'000'000);

/// Same, starting from a fully masked canvas of the model's length.
double schedule_kl_exact(const ExactJointModel& model, const DecodePolicy& a, const DecodePolicy& b,
                         const std::vector<TokenId>& context);

/// Entropy budget of a parallel step: sum of the decoded cells' entropies.
double per_step_kl_bound(const StepRecord& step);

/// Sum of per-step budgets over a trace.
double trace_kl_bound(const DecodeTrace& trace);

/// KL(joint over `positions` || product of their marginals), given the canvas. Exact.
double exact_parallel_kl(const ExactJointModel& model, const MaskedSequence& canvas, std::vector<Position> positions);

}  // namespace mdlm
