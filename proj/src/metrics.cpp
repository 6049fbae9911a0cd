#include "mdlm/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <sstream>

#include "mdlm/engine.hpp"
#include "mdlm/parallel.hpp"
#include "mdlm/prob.hpp"
#include "mdlm/scoring.hpp"

namespace mdlm {

BehaviorStats behavior_stats(const DecodeTrace& trace, const Vocab& vocab, const std::optional<Template>& tmpl) {
    std::vector<std::pair<Position, int>> filled_at;  // (position, step)
    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
        for (const auto& d : trace.steps[s].decoded) filled_at.emplace_back(d.position, static_cast<int>(s));
    }
    Position never = std::numeric_limits<Position>::max();
    Position unfilled_min = never;
    for (Position p : trace.unfilled) unfilled_min = std::min(unfilled_min, p);
    Position skipped_min = never;
    for (Position p : trace.skipped) skipped_min = std::min(skipped_min, p);

    BehaviorStats out;
    out.nfe = trace.nfe;
    long leftmost_hits = 0;
    double dist_total = 0.0;
    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
        const int step = static_cast<int>(s);
        Position leftmost = unfilled_min;
        if (!trace.exit_step || step < *trace.exit_step) leftmost = std::min(leftmost, skipped_min);
        for (const auto& [p, when] : filled_at) {
            if (when >= step) leftmost = std::min(leftmost, p);
        }
        for (const auto& d : trace.steps[s].decoded) {
            if (tmpl && !out.answer_step && tmpl->answer.contains(d.position)) out.answer_step = step;
            if (d.token == vocab.eos_id) continue;
            ++out.non_eos_tokens;
            leftmost_hits += d.position == leftmost ? 1 : 0;
            dist_total += static_cast<double>(d.position - leftmost);
        }
    }
    if (out.non_eos_tokens > 0) {
        out.pct_leftmost = static_cast<double>(leftmost_hits) / out.non_eos_tokens;
        out.mean_dist_left = dist_total / out.non_eos_tokens;
    }
    return out;
}

BehaviorSummary summarize(std::span<const BehaviorStats> stats) {
    BehaviorSummary s;
    s.traces = static_cast<int>(stats.size());
    if (stats.empty()) return s;
    double events = 0.0, hits = 0.0, dist = 0.0, nfe = 0.0, tokens = 0.0, answer = 0.0;
    int with_answer = 0;
    for (const auto& b : stats) {
        events += b.non_eos_tokens;
        hits += b.pct_leftmost * b.non_eos_tokens;
        dist += b.mean_dist_left * b.non_eos_tokens;
        nfe += b.nfe;
        tokens += b.non_eos_tokens;
        if (b.answer_step) {
            answer += *b.answer_step;
            ++with_answer;
        }
    }
    if (events > 0) {
        s.pct_leftmost = hits / events;
        s.mean_dist_left = dist / events;
    }
    s.mean_nfe = nfe / static_cast<double>(stats.size());
    s.mean_non_eos_tokens = tokens / static_cast<double>(stats.size());
    if (with_answer > 0) s.mean_answer_step = answer / with_answer;
    return s;
}

bool answer_matches(const MaskedSequence& output, const Template& tmpl, std::span<const TokenId> gold, TokenId pad_id) {
    std::vector<TokenId> got;
    for (Position p = tmpl.answer.begin; p < tmpl.answer.end; ++p) {
        const auto c = output.cell(p);
        if (!c) return false;
        if (*c != pad_id) got.push_back(*c);
    }
    std::vector<TokenId> want;
    for (TokenId t : gold) {
        if (t != pad_id) want.push_back(t);
    }
    return got == want;
}

namespace {

struct Outcome {
    bool correct = false;
    int nfe = 0;
    double kl_bound = 0.0;
    bool early_exit = false;
    DecodeTrace trace;
    std::vector<TokenId> answer;
};

}  // namespace

BenchReport benchmark(const SyntheticTask& task, const std::vector<DecodePolicy>& policies, const BenchOptions& options) {
    if (options.n < 1) throw ConfigError("benchmark needs n >= 1");
    if (policies.empty()) throw ConfigError("benchmark needs at least one policy");
    for (const auto& p : policies) p.validate();

    const auto n = static_cast<std::size_t>(options.n);
    std::vector<std::vector<Outcome>> results(n, std::vector<Outcome>(policies.size()));
    parallel_for(n, options.jobs, [&](std::size_t i) {
        const std::uint64_t seed = split_seed(options.seed, i);
        const auto inst = task.make(seed);
        const auto pad = inst.model->vocab().pad_id;
        for (std::size_t k = 0; k < policies.size(); ++k) {
            auto r = decode(*inst.model, inst.context, inst.tmpl, inst.length, policies[k], split_seed(seed, 1));
            auto& o = results[i][k];
            o.correct = answer_matches(r.sequence, inst.tmpl, inst.gold, pad);
            o.nfe = r.trace.nfe;
            o.kl_bound = trace_kl_bound(r.trace);
            o.early_exit = r.trace.exit_step.has_value();
            if (options.keep_traces) {
                for (Position p = inst.tmpl.answer.begin; p < inst.tmpl.answer.end; ++p) {
                    o.answer.push_back(r.sequence.cell(p).value_or(inst.model->vocab().mask_id()));
                }
                o.trace = std::move(r.trace);
            }
        }
    });

    BenchReport report;
    report.task = task.name();
    report.n = options.n;
    report.seed = options.seed;
    for (std::size_t k = 0; k < policies.size(); ++k) {
        BenchRow row;
        row.policy = describe(policies[k]);
        row.n = options.n;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& o = results[i][k];
            row.acc += o.correct ? 1.0 : 0.0;
            row.nfe += o.nfe;
            row.kl_bound += o.kl_bound;
            row.early_exit_rate += o.early_exit ? 1.0 : 0.0;
        }
        row.acc = 100.0 * row.acc / static_cast<double>(n);
        row.nfe /= static_cast<double>(n);
        row.kl_bound /= static_cast<double>(n);
        row.early_exit_rate /= static_cast<double>(n);
        report.rows.push_back(row);
        if (options.keep_traces) {
            for (std::size_t i = 0; i < n; ++i) {
                auto& o = results[i][k];
                report.traces.push_back({k, static_cast<int>(i), std::move(o.trace), std::move(o.answer), o.correct});
            }
        }
    }
    return report;
}

json to_json(const BenchReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"policy", r.policy},
                        {"acc", r.acc},
                        {"nfe", r.nfe},
                        {"kl_bound", r.kl_bound},
                        {"early_exit_rate", r.early_exit_rate},
                        {"n", r.n}});
    }
    return {{"task", report.task}, {"n", report.n}, {"seed", report.seed}, {"rows", std::move(rows)}};
}

std::string format_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string to_csv(const BenchReport& report) {
    std::ostringstream out;
    out << "policy,acc,nfe,kl_bound,early_exit_rate,n\n";
    for (const auto& r : report.rows) {
        out << '"' << r.policy << '"' << ',' << format_real(r.acc) << ',' << format_real(r.nfe) << ','
            << format_real(r.kl_bound) << ',' << format_real(r.early_exit_rate) << ',' << r.n << '\n';
    }
    return out.str();
}

double roc_auc(std::span<const double> positive, std::span<const double> negative) {
    if (positive.empty() || negative.empty()) throw EmptyData("roc_auc needs both classes");
    double wins = 0.0;
    for (double p : positive) {
        for (double q : negative) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
    }
    return wins / (static_cast<double>(positive.size()) * static_cast<double>(negative.size()));
}

}  // namespace mdlm
