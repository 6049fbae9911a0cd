#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mdlm/core.hpp"
#include "mdlm/models.hpp"
#include "mdlm/schedulers.hpp"

namespace mdlm {

struct ExitDecision {
    double hub = 0.0;
    bool exit = false;
};

/// H_UB over the given answer reports; exits when H_UB < gamma (strict).
ExitDecision maybe_early_exit(std::span<const PositionReport> answer_reports, double gamma);

/// What one decode step does, given the canvas and the reports of a single model call.
struct StepPlan {
    std::optional<double> answer_hub;
    bool trigger_exit = false;
    Interval window;
    Selection selection;
    int block_index = 0;
};

/// Shared by the decode loop and the induced-distribution enumerator. `exited` means an early
/// exit already happened, so remaining reasoning cells are no longer candidates.
StepPlan plan_step(const MaskedSequence& canvas, const std::optional<Template>& tmpl, const DecodePolicy& policy,
                   bool exited, std::span<const PositionReport> reports);

/// True when the canvas still has cells the decode loop would fill.
bool has_pending(const MaskedSequence& canvas, const std::optional<Template>& tmpl, bool exited);

struct DecodeResult {
    MaskedSequence sequence;
    DecodeTrace trace;
};

/// One decode run. The model must outlive the session.
class Session {
public:
    Session(const ConditionalModel& model, MaskedSequence canvas, std::optional<Template> tmpl, DecodePolicy policy,
            std::uint64_t seed);

    [[nodiscard]] bool done() const { return done_; }
    [[nodiscard]] const MaskedSequence& canvas() const { return canvas_; }
    [[nodiscard]] const DecodeTrace& trace() const { return trace_; }
    [[nodiscard]] const std::optional<Template>& tmpl() const { return tmpl_; }
    [[nodiscard]] const DecodePolicy& policy() const { return policy_; }

    /// Runs one loop iteration (exactly one model call unless already done).
    void step();

    /// Pads skipped cells and hands back the result.
    DecodeResult finish() &&;

private:
    TokenId choose(const PositionReport& report);
    void finalize_if_done();

    const ConditionalModel* model_;
    MaskedSequence canvas_;
    std::optional<Template> tmpl_;
    DecodePolicy policy_;
    std::uint64_t seed_;
    Vocab vocab_;
    DecodeTrace trace_;
    int max_steps_ = 0;
    bool exited_ = false;
    bool done_ = false;
};

DecodeResult decode(Session session);

/// Convenience: fresh canvas from the template, then decode.
DecodeResult decode(const ConditionalModel& model, std::vector<TokenId> context, const Template& tmpl,
                    std::size_t length, const DecodePolicy& policy, std::uint64_t seed);

struct PosteriorResult {
    std::vector<TokenId> reasoning;
    MaskedSequence sequence;
    DecodeTrace trace;
};

/// Samples reasoning given a prefilled answer. Requires Sampled token choice.
PosteriorResult decode_posterior(const ConditionalModel& model, std::vector<TokenId> context, const Template& tmpl,
                                 std::size_t length, const DecodePolicy& policy, std::uint64_t seed);

/// Re-applies a trace to its initial canvas. With `verify`, each step re-queries the model and
/// checks the recorded log-probs and entropies.
MaskedSequence replay(const DecodeTrace& trace, MaskedSequence initial, TokenId pad_id,
                      const ConditionalModel* verify = nullptr, double tolerance = 1e-9);

using OutputDistribution = std::map<std::vector<TokenId>, double>;

/// Exact distribution over final sequences a policy induces on a dense model: greedy steps follow
/// the argmax, sampled steps branch over every token with its tempered weight, multi-cell steps
/// factorize. Cells left masked by max_steps appear as vocab.mask_id(). Throws CapExceeded past
/// `cap` expanded states.
OutputDistribution induced_distribution(const DenseConditionalModel& model, const MaskedSequence& canvas,
                                        const std::optional<Template>& tmpl, const DecodePolicy& policy,
                                        std::size_t cap = 1'000'000);

}  // namespace mdlm
