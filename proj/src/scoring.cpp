#include "mdlm/scoring.hpp"

#include <cmath>

#include "mdlm/prob.hpp"

namespace mdlm {

TraceScore phi_score(const ConditionalModel& model, const MaskedSequence& canvas, const Template& tmpl,
                     std::span<const TokenId> gold_answer, int step_index) {
    if (gold_answer.size() != static_cast<std::size_t>(tmpl.answer.size())) {
        throw LengthMismatch("gold answer has " + std::to_string(gold_answer.size()) + " tokens, answer span has " +
                             std::to_string(tmpl.answer.size()));
    }
    QuerySpec spec;
    spec.top_k = 1;
    for (Position p = tmpl.answer.begin; p < tmpl.answer.end; ++p) {
        if (!canvas.is_masked(p)) throw InconsistentTrace("answer cell " + std::to_string(p) + " is not masked");
        spec.query_tokens[p] = {gold_answer[static_cast<std::size_t>(p - tmpl.answer.begin)]};
    }
    const auto reports = model.query(canvas, spec);

    TraceScore s;
    s.step_index = step_index;
    for (Position p = tmpl.answer.begin; p < tmpl.answer.end; ++p) {
        const TokenId gold = gold_answer[static_cast<std::size_t>(p - tmpl.answer.begin)];
        bool found = false;
        for (const auto& r : reports) {
            if (r.position != p) continue;
            const auto it = r.queried.find(gold);
            if (it == r.queried.end()) throw ModelError("model did not return the queried gold token");
            s.phi += it->second;
            s.hub += r.entropy;
            found = true;
            break;
        }
        if (!found) throw ModelError("model returned no report for answer cell " + std::to_string(p));
    }
    int filled = 0;
    for (Position p = tmpl.reasoning.begin; p < tmpl.reasoning.end; ++p) filled += canvas.is_masked(p) ? 0 : 1;
    s.fraction_unmasked = tmpl.reasoning.empty() ? 1.0 : static_cast<double>(filled) / tmpl.reasoning.size();
    return s;
}

ChainScore chain_filter_score(const ConditionalModel& model, const std::vector<TokenId>& context, const Template& tmpl,
                              std::size_t length, std::span<const TokenId> reasoning,
                              std::span<const TokenId> gold_answer, int stride) {
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (reasoning.size() != static_cast<std::size_t>(tmpl.reasoning.size())) {
        throw LengthMismatch("reasoning has " + std::to_string(reasoning.size()) + " tokens, reasoning span has " +
                             std::to_string(tmpl.reasoning.size()));
    }
    Template open = tmpl;
    open.prefilled_answer.reset();
    const auto base = new_canvas(context, open, length);

    ChainScore out;
    const int n = static_cast<int>(reasoning.size());
    for (int t = 0; t <= n; t += stride) {
        auto canvas = base;
        for (int i = 0; i < t; ++i) canvas.fill(tmpl.reasoning.begin + i, reasoning[static_cast<std::size_t>(i)]);
        const auto s = phi_score(model, canvas, tmpl, gold_answer, t);
        out.reveal.push_back(t);
        out.phi_curve.push_back(s.phi);
        out.hub_curve.push_back(s.hub);
    }
    double total = 0.0;
    for (double v : out.phi_curve) total += v;
    out.mean_score = total / static_cast<double>(out.phi_curve.size());
    return out;
}

double kl_divergence(const OutputDistribution& p, const OutputDistribution& q) {
    double kl = 0.0;
    for (const auto& [x, px] : p) {
        if (px <= 0.0) continue;
        const auto it = q.find(x);
        if (it == q.end() || it->second <= 0.0) {
            throw SupportMismatch("first distribution has mass on an outcome the second cannot produce");
        }
        kl += px * (std::log(px) - std::log(it->second));
    }
    return std::max(kl, 0.0);
}

double schedule_kl_exact(const DenseConditionalModel& model, const DecodePolicy& a, const DecodePolicy& b,
                         const MaskedSequence& canvas, const std::optional<Template>& tmpl, std::size_t cap) {
    const auto pa = induced_distribution(model, canvas, tmpl, a, cap);
    const auto pb = induced_distribution(model, canvas, tmpl, b, cap);
    return kl_divergence(pa, pb);
}

double schedule_kl_exact(const ExactJointModel& model, const DecodePolicy& a, const DecodePolicy& b,
                         const std::vector<TokenId>& context) {
    return schedule_kl_exact(model, a, b, MaskedSequence(static_cast<std::size_t>(model.sequence_length()), context));
}

double per_step_kl_bound(const StepRecord& step) {
    double total = 0.0;
    for (const auto& d : step.decoded) total += d.entropy;
    return total;
}

double trace_kl_bound(const DecodeTrace& trace) {
    double total = 0.0;
    for (const auto& s : trace.steps) total += per_step_kl_bound(s);
    return total;
}

double exact_parallel_kl(const ExactJointModel& model, const MaskedSequence& canvas, std::vector<Position> positions) {
    const auto joint = exact_joint_conditional(model, canvas, std::move(positions));
    std::vector<std::vector<double>> marginals;
    for (std::size_t i = 0; i < joint.positions.size(); ++i) marginals.push_back(joint.marginal(i));
    double kl = 0.0;
    for (std::size_t idx = 0; idx < joint.probs.size(); ++idx) {
        const double p = joint.probs[idx];
        if (p <= 0.0) continue;
        double q = 1.0;
        const auto a = joint.assignment(idx);
        for (std::size_t i = 0; i < a.size(); ++i) q *= marginals[i][static_cast<std::size_t>(a[i])];
        kl += p * (std::log(p) - std::log(q));
    }
    return std::max(kl, 0.0);
}

}  // namespace mdlm
