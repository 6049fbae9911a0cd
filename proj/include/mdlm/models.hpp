#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mdlm/core.hpp"

namespace mdlm {

struct TokenLogProb {
    TokenId token = 0;
    double logprob = 0.0;

    bool operator==(const TokenLogProb&) const = default;
};

/// Model output for one masked cell.
struct PositionReport {
    Position position = 0;
    double entropy = 0.0;            // nats, over the full vocabulary
    std::vector<TokenLogProb> top;   // descending log-prob, ties by token id
    std::map<TokenId, double> queried;
    std::optional<TokenId> sampled;  // server-side sampling only

    /// Log-prob of `token` if the report carries it (top or queried).
    [[nodiscard]] std::optional<double> logprob_of(TokenId token) const;
};

struct SampleSpec {
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

struct QuerySpec {
    int top_k = 16;
    std::map<Position, std::vector<TokenId>> query_tokens;
    std::optional<SampleSpec> sample;
};

/// The conditional-model contract: one call returns a report for every masked cell.
class ConditionalModel {
public:
    virtual ~ConditionalModel() = default;

    virtual std::vector<PositionReport> query(const MaskedSequence& seq, const QuerySpec& spec) const = 0;

    [[nodiscard]] virtual Vocab vocab() const = 0;

    /// Canvas length the model expects, or nullopt if any length works.
    [[nodiscard]] virtual std::optional<std::size_t> length() const { return std::nullopt; }
};

/// Per-position distribution over the full vocabulary.
struct CellDistribution {
    Position position = 0;
    std::vector<double> probs;
};

/// Models that can produce full per-cell distributions; reports are derived from them.
class DenseConditionalModel : public ConditionalModel {
public:
    std::vector<PositionReport> query(const MaskedSequence& seq, const QuerySpec& spec) const override;

    /// Full distribution for each masked cell, ascending position.
    virtual std::vector<CellDistribution> conditionals(const MaskedSequence& seq) const = 0;
};

/// Draws `sampled` for every report from its (tempered) top list, in report order, with one
/// generator seeded by `sample.seed`. Temperature <= 0 picks the top token. The sampled token's
/// log-prob is also added to `queried`.
void sample_reports(std::vector<PositionReport>& reports, const SampleSpec& sample);

/// Builds a report from a full distribution.
PositionReport make_report(Position position, std::span<const double> probs, const QuerySpec& spec);

/// Joint distribution over an ascending position set, row-major (first position most significant).
struct JointTable {
    std::vector<Position> positions;
    int vocab = 0;
    std::vector<double> probs;

    [[nodiscard]] std::vector<TokenId> assignment(std::size_t index) const;
    /// Marginal distribution of the i-th listed position.
    [[nodiscard]] std::vector<double> marginal(std::size_t i) const;
};

/// Exact tabular joint p(x | c) over a tiny canvas; the brute-force oracle model.
class ExactJointModel final : public DenseConditionalModel {
public:
    static constexpr int kMaxLength = 8;
    static constexpr int kMaxVocab = 8;

    /// `probs` has vocab^length entries and must sum to 1 within 1e-12.
    static ExactJointModel from_probs(int length, Vocab vocab, std::vector<double> probs);
    static ExactJointModel from_logits(int length, Vocab vocab, std::span<const double> logits);
    static ExactJointModel load(const std::filesystem::path& path);

    /// Adds (or replaces) the joint used for one specific context.
    void set_context_joint(std::vector<TokenId> context, std::vector<double> probs);

    [[nodiscard]] const std::vector<double>& joint(const std::vector<TokenId>& context) const;
    [[nodiscard]] int sequence_length() const { return length_; }
    [[nodiscard]] std::size_t outcome_count() const { return outcomes_; }
    [[nodiscard]] std::vector<TokenId> decode_index(std::size_t index) const;
    [[nodiscard]] std::size_t encode(std::span<const TokenId> tokens) const;

    [[nodiscard]] Vocab vocab() const override { return vocab_; }
    [[nodiscard]] std::optional<std::size_t> length() const override { return static_cast<std::size_t>(length_); }
    std::vector<CellDistribution> conditionals(const MaskedSequence& seq) const override;

    /// Probability mass of outcomes consistent with the filled cells.
    [[nodiscard]] double evidence(const MaskedSequence& seq) const;

private:
    ExactJointModel(int length, Vocab vocab);
    std::vector<double> checked(std::vector<double> probs) const;
    void check_sequence(const MaskedSequence& seq) const;

    int length_ = 0;
    Vocab vocab_;
    std::size_t outcomes_ = 0;
    std::optional<std::vector<double>> default_joint_;
    std::map<std::vector<TokenId>, std::vector<double>> by_context_;
};

/// Largest absolute difference between `model`'s conditionals and the oracle's, over every
/// partially filled canvas with positive evidence under the oracle (default context).
double max_conditional_error(const DenseConditionalModel& model, const ExactJointModel& oracle);

/// Full conditional report for every masked cell (top list covers the vocabulary).
std::vector<PositionReport> exact_conditionals(const ExactJointModel& m, const MaskedSequence& seq);

/// p(x^A | filled cells, c) by enumeration; `positions` must be masked.
JointTable exact_joint_conditional(const ExactJointModel& m, const MaskedSequence& seq, std::vector<Position> positions,
                                   std::size_t cap = 1'000'000);

}  // namespace mdlm
