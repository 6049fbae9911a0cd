#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdlm/core.hpp"
#include "mdlm/serialization.hpp"
#include "mdlm/tasks.hpp"

namespace mdlm {

struct BehaviorStats {
    double pct_leftmost = 0.0;    // fraction in [0, 1]
    double mean_dist_left = 0.0;  // tokens
    int non_eos_tokens = 0;
    std::optional<int> answer_step;
    int nfe = 0;
};

/// Decoding-behavior statistics over the non-EOS decode events of one trace. The masked set at
/// each step is rebuilt from the trace itself; cells skipped by an early exit count as filled
/// from the exit step on.
BehaviorStats behavior_stats(const DecodeTrace& trace, const Vocab& vocab,
                             const std::optional<Template>& tmpl = std::nullopt);

/// Event-weighted pooling of per-trace stats; answer_step and nfe are averaged (answer_step over
/// traces that have one, rounded down).
struct BehaviorSummary {
    double pct_leftmost = 0.0;
    double mean_dist_left = 0.0;
    double mean_non_eos_tokens = 0.0;
    std::optional<double> mean_answer_step;
    double mean_nfe = 0.0;
    int traces = 0;
};

BehaviorSummary summarize(std::span<const BehaviorStats> stats);

/// Exact match on the answer span after removing pad tokens from both sides.
bool answer_matches(const MaskedSequence& output, const Template& tmpl, std::span<const TokenId> gold, TokenId pad_id);

struct BenchRow {
    std::string policy;
    double acc = 0.0;  // percent
    double nfe = 0.0;
    double kl_bound = 0.0;
    double early_exit_rate = 0.0;
    int n = 0;
};

struct BenchOptions {
    int n = 500;
    std::uint64_t seed = 0;
    int jobs = 1;
    bool keep_traces = false;
};

struct BenchTrace {
    std::size_t policy_index = 0;
    int instance = 0;
    DecodeTrace trace;
    std::vector<TokenId> answer;
    bool correct = false;
};

struct BenchReport {
    std::string task;
    int n = 0;
    std::uint64_t seed = 0;
    std::vector<BenchRow> rows;
    std::vector<BenchTrace> traces;  // policy-major, instance order; only with keep_traces
};

/// Runs every policy on instances 0..n-1 of the task. Instance i uses seed split_seed(seed, i);
/// results do not depend on `jobs`.
BenchReport benchmark(const SyntheticTask& task, const std::vector<DecodePolicy>& policies, const BenchOptions& options);

json to_json(const BenchReport& report);
std::string to_csv(const BenchReport& report);

/// Area under the ROC curve for scores where `positive` should rank higher; ties count half.
double roc_auc(std::span<const double> positive, std::span<const double> negative);

/// Shortest round-trip decimal form of a double.
std::string format_real(double v);

}  // namespace mdlm
