#include "mdlm/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdlm/prob.hpp"

namespace mdlm {

namespace {

bool in_answer(const std::optional<Template>& tmpl, Position p) { return tmpl && tmpl->answer.contains(p); }

const PositionReport& report_at(std::span<const PositionReport> reports, Position p) {
    for (const auto& r : reports) {
        if (r.position == p) return r;
    }
    throw ModelError("model returned no report for masked position " + std::to_string(p));
}

bool is_sampling(const TokenChoice& choice) {
    return choice.kind == TokenChoice::Kind::Sampled && choice.temperature > 0.0;
}

bool same_real(double a, double b, double tol) {
    if (std::isinf(a) || std::isinf(b)) return a == b;
    return std::abs(a - b) <= tol;
}

}  // namespace

ExitDecision maybe_early_exit(std::span<const PositionReport> answer_reports, double gamma) {
    double hub = 0.0;
    for (const auto& r : answer_reports) hub += r.entropy;
    return {hub, hub < gamma};
}

bool has_pending(const MaskedSequence& canvas, const std::optional<Template>& tmpl, bool exited) {
    for (Position p = 0; p < static_cast<Position>(canvas.length()); ++p) {
        if (canvas.is_masked(p) && (!exited || in_answer(tmpl, p))) return true;
    }
    return false;
}

StepPlan plan_step(const MaskedSequence& canvas, const std::optional<Template>& tmpl, const DecodePolicy& policy,
                   bool exited, std::span<const PositionReport> reports) {
    const auto L = static_cast<Position>(canvas.length());
    StepPlan plan;

    std::vector<PositionReport> answer_reports;
    bool reasoning_pending = false;
    for (Position p = 0; p < L; ++p) {
        if (!canvas.is_masked(p)) continue;
        if (in_answer(tmpl, p)) {
            answer_reports.push_back(report_at(reports, p));
        } else if (!exited) {
            reasoning_pending = true;
        }
    }
    if (!answer_reports.empty()) {
        const auto d = maybe_early_exit(answer_reports, policy.early_exit_gamma.value_or(0.0));
        plan.answer_hub = d.hub;
        plan.trigger_exit = !exited && reasoning_pending && policy.early_exit_gamma && d.exit;
    }

    const bool answer_phase = !reasoning_pending || plan.trigger_exit;
    auto eligible = [&](Position p) { return canvas.is_masked(p) && in_answer(tmpl, p) == answer_phase; };

    Position first = -1;
    for (Position p = 0; p < L && first < 0; ++p) {
        if (eligible(p)) first = p;
    }
    if (first < 0) throw NoProgress("no masked cell left to decode");
    const Position B = policy.block_size;
    plan.block_index = first / B;
    plan.window = {plan.block_index * B, std::min(L, plan.block_index * B + B)};

    std::vector<PositionReport> candidates;
    for (Position p = plan.window.begin; p < plan.window.end; ++p) {
        if (eligible(p)) candidates.push_back(report_at(reports, p));
    }
    plan.selection = select(policy.order, candidates);
    if (plan.selection.positions.empty()) throw NoProgress("scheduler selected no positions");
    return plan;
}

Session::Session(const ConditionalModel& model, MaskedSequence canvas, std::optional<Template> tmpl,
                 DecodePolicy policy, std::uint64_t seed)
    : model_(&model),
      canvas_(std::move(canvas)),
      tmpl_(std::move(tmpl)),
      policy_(policy),
      seed_(seed),
      vocab_(model.vocab()) {
    policy_.validate();
    if (tmpl_) tmpl_->validate(canvas_.length());
    if (auto L = model.length(); L && *L != canvas_.length()) {
        throw LengthMismatch("canvas length " + std::to_string(canvas_.length()) + " but model expects " +
                             std::to_string(*L));
    }
    for (const auto& c : canvas_.cells()) {
        if (c && !vocab_.contains(*c)) throw ConfigError("canvas holds a token outside the vocabulary");
    }
    max_steps_ = policy_.max_steps.value_or(static_cast<int>(canvas_.masked_count()));
    finalize_if_done();
}

TokenId Session::choose(const PositionReport& report) {
    if (is_sampling(policy_.token_choice)) {
        if (!report.sampled) throw ModelError("model did not return a sampled token");
        return *report.sampled;
    }
    if (report.top.empty()) throw ModelError("empty top list at position " + std::to_string(report.position));
    return report.top.front().token;
}

void Session::step() {
    if (done_) return;
    QuerySpec spec;
    spec.top_k = policy_.top_k;
    if (is_sampling(policy_.token_choice)) {
        spec.sample = SampleSpec{policy_.token_choice.temperature, split_seed(seed_, trace_.steps.size())};
    }
    const auto reports = model_->query(canvas_, spec);
    ++trace_.nfe;

    const auto plan = plan_step(canvas_, tmpl_, policy_, exited_, reports);
    if (plan.trigger_exit) {
        exited_ = true;
        trace_.exit = ExitKind::EarlyExit;
        trace_.exit_step = static_cast<int>(trace_.steps.size());
        for (Position p = 0; p < static_cast<Position>(canvas_.length()); ++p) {
            if (canvas_.is_masked(p) && !in_answer(tmpl_, p)) trace_.skipped.push_back(p);
        }
    }

    StepRecord rec;
    rec.answer_hub = plan.answer_hub;
    rec.block_index = plan.block_index;
    for (Position p : plan.selection.positions) {
        const auto& r = report_at(reports, p);
        const TokenId tok = choose(r);
        if (!vocab_.contains(tok)) throw ModelError("model chose token " + std::to_string(tok) + " outside vocab");
        const auto lp = r.logprob_of(tok);
        if (!lp) throw ModelError("no log-prob for the chosen token at position " + std::to_string(p));
        canvas_.fill(p, tok);
        rec.decoded.push_back({p, tok, *lp, r.entropy});
        trace_.schedule_logprob += *lp;
    }
    trace_.steps.push_back(std::move(rec));
    finalize_if_done();
}

void Session::finalize_if_done() {
    if (!has_pending(canvas_, tmpl_, exited_)) {
        done_ = true;
        return;
    }
    if (static_cast<int>(trace_.steps.size()) >= max_steps_) {
        trace_.exit = ExitKind::MaxSteps;
        for (Position p = 0; p < static_cast<Position>(canvas_.length()); ++p) {
            if (canvas_.is_masked(p) && (!exited_ || in_answer(tmpl_, p))) trace_.unfilled.push_back(p);
        }
        done_ = true;
    }
}

DecodeResult Session::finish() && {
    for (Position p : trace_.skipped) canvas_.fill(p, vocab_.pad_id);
    return {std::move(canvas_), std::move(trace_)};
}

DecodeResult decode(Session session) {
    while (!session.done()) session.step();
    return std::move(session).finish();
}

DecodeResult decode(const ConditionalModel& model, std::vector<TokenId> context, const Template& tmpl,
                    std::size_t length, const DecodePolicy& policy, std::uint64_t seed) {
    return decode(Session(model, new_canvas(std::move(context), tmpl, length), tmpl, policy, seed));
}

PosteriorResult decode_posterior(const ConditionalModel& model, std::vector<TokenId> context, const Template& tmpl,
                                 std::size_t length, const DecodePolicy& policy, std::uint64_t seed) {
    if (!tmpl.prefilled_answer) throw ConfigError("posterior decoding needs template.prefilled_answer");
    if (policy.token_choice.kind != TokenChoice::Kind::Sampled) {
        throw ConfigError("posterior decoding needs token_choice = sampled");
    }
    auto result = decode(model, std::move(context), tmpl, length, policy, seed);
    PosteriorResult out;
    const TokenId mask = model.vocab().mask_id();
    for (Position p = tmpl.reasoning.begin; p < tmpl.reasoning.end; ++p) {
        out.reasoning.push_back(result.sequence.cell(p).value_or(mask));
    }
    out.sequence = std::move(result.sequence);
    out.trace = std::move(result.trace);
    return out;
}

MaskedSequence replay(const DecodeTrace& trace, MaskedSequence initial, TokenId pad_id,
                      const ConditionalModel* verify, double tolerance) {
    if (trace.nfe != static_cast<int>(trace.steps.size())) {
        throw InconsistentTrace("nfe " + std::to_string(trace.nfe) + " differs from step count " +
                                std::to_string(trace.steps.size()));
    }
    const auto L = static_cast<Position>(initial.length());
    auto fill = [&](Position p, TokenId t, std::size_t step) {
        if (p < 0 || p >= L || !initial.is_masked(p)) {
            throw InconsistentTrace("step " + std::to_string(step) + " fills position " + std::to_string(p) +
                                    " which is not masked");
        }
        initial.fill(p, t);
    };

    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
        const auto& step = trace.steps[s];
        if (step.decoded.empty()) throw InconsistentTrace("step " + std::to_string(s) + " decodes nothing");
        for (std::size_t i = 1; i < step.decoded.size(); ++i) {
            if (step.decoded[i - 1].position >= step.decoded[i].position) {
                throw InconsistentTrace("step " + std::to_string(s) + " positions are not strictly ascending");
            }
        }
        if (verify) {
            QuerySpec spec;
            spec.top_k = 1;
            for (const auto& d : step.decoded) spec.query_tokens[d.position] = {d.token};
            const auto reports = verify->query(initial, spec);
            for (const auto& d : step.decoded) {
                const auto it = std::find_if(reports.begin(), reports.end(),
                                             [&](const auto& r) { return r.position == d.position; });
                if (it == reports.end()) {
                    throw InconsistentTrace("step " + std::to_string(s) + " decodes a cell the model sees as filled");
                }
                const auto q = it->queried.find(d.token);
                if (q == it->queried.end() || !same_real(q->second, d.logprob, tolerance) ||
                    !same_real(it->entropy, d.entropy, tolerance)) {
                    throw InconsistentTrace("step " + std::to_string(s) + " position " + std::to_string(d.position) +
                                            " disagrees with the model");
                }
            }
        }
        for (const auto& d : step.decoded) fill(d.position, d.token, s);
    }
    for (Position p : trace.skipped) fill(p, pad_id, trace.steps.size());
    return initial;
}

namespace {

class Enumerator {
public:
    Enumerator(const DenseConditionalModel& model, const std::optional<Template>& tmpl, const DecodePolicy& policy,
               std::size_t cap, int max_steps)
        : model_(model), tmpl_(tmpl), policy_(policy), cap_(cap), max_steps_(max_steps), vocab_(model.vocab()) {}

    void expand(const MaskedSequence& canvas, bool exited, int steps, double prob) {
        if (prob == 0.0) return;
        if (!has_pending(canvas, tmpl_, exited) || steps >= max_steps_) {
            leaf(canvas, exited, prob);
            return;
        }
        if (++expanded_ > cap_) throw CapExceeded("induced distribution exceeds " + std::to_string(cap_) + " states");

        QuerySpec spec;
        spec.top_k = vocab_.size;
        const auto reports = model_.query(canvas, spec);
        const auto plan = plan_step(canvas, tmpl_, policy_, exited, reports);

        std::vector<std::vector<std::pair<TokenId, double>>> options;
        for (Position p : plan.selection.positions) options.push_back(choices(report_at(reports, p)));

        std::vector<std::size_t> idx(options.size(), 0);
        while (true) {
            MaskedSequence next = canvas;
            double w = prob;
            for (std::size_t i = 0; i < options.size(); ++i) {
                next.fill(plan.selection.positions[i], options[i][idx[i]].first);
                w *= options[i][idx[i]].second;
            }
            expand(next, exited || plan.trigger_exit, steps + 1, w);
            std::size_t k = 0;
            while (k < idx.size() && ++idx[k] == options[k].size()) idx[k++] = 0;
            if (k == idx.size()) break;
        }
    }

    OutputDistribution take() { return std::move(out_); }

private:
    std::vector<std::pair<TokenId, double>> choices(const PositionReport& r) const {
        if (r.top.empty()) throw ModelError("empty distribution");
        if (!is_sampling(policy_.token_choice)) return {{r.top.front().token, 1.0}};
        std::vector<double> w;
        const double shift = r.top.front().logprob;
        for (const auto& t : r.top) w.push_back(std::exp((t.logprob - shift) / policy_.token_choice.temperature));
        normalize(w);
        std::vector<std::pair<TokenId, double>> out;
        for (std::size_t i = 0; i < w.size(); ++i) out.emplace_back(r.top[i].token, w[i]);
        return out;
    }

    void leaf(const MaskedSequence& canvas, bool exited, double prob) {
        std::vector<TokenId> key(canvas.length());
        for (Position p = 0; p < static_cast<Position>(canvas.length()); ++p) {
            const auto c = canvas.cell(p);
            if (c) {
                key[static_cast<std::size_t>(p)] = *c;
            } else {
                key[static_cast<std::size_t>(p)] = exited && !in_answer(tmpl_, p) ? vocab_.pad_id : vocab_.mask_id();
            }
        }
        out_[key] += prob;
    }

    const DenseConditionalModel& model_;
    const std::optional<Template>& tmpl_;
    const DecodePolicy& policy_;
    std::size_t cap_;
    int max_steps_;
    Vocab vocab_;
    std::size_t expanded_ = 0;
    OutputDistribution out_;
};

}  // namespace

OutputDistribution induced_distribution(const DenseConditionalModel& model, const MaskedSequence& canvas,
                                        const std::optional<Template>& tmpl, const DecodePolicy& policy,
                                        std::size_t cap) {
    policy.validate();
    if (tmpl) tmpl->validate(canvas.length());
    Enumerator e(model, tmpl, policy, cap, policy.max_steps.value_or(static_cast<int>(canvas.masked_count())));
    e.expand(canvas, false, 0, 1.0);
    return e.take();
}

}  // namespace mdlm
