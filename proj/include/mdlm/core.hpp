#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdlm/errors.hpp"

namespace mdlm {

using TokenId = std::int32_t;
using Position = std::int32_t;

/// Half-open position interval [begin, end).
struct Interval {
    Position begin = 0;
    Position end = 0;

    [[nodiscard]] Position size() const { return end > begin ? end - begin : 0; }
    [[nodiscard]] bool empty() const { return end <= begin; }
    [[nodiscard]] bool contains(Position p) const { return p >= begin && p < end; }
    [[nodiscard]] bool overlaps(const Interval& other) const {
        return !empty() && !other.empty() && begin < other.end && other.begin < end;
    }
    bool operator==(const Interval&) const = default;
};

struct Vocab {
    int size = 2;
    TokenId eos_id = 1;
    TokenId pad_id = 1;

    /// Sentinel used on the wire and in dumps for a masked cell; never a real token.
    [[nodiscard]] TokenId mask_id() const { return size; }
    [[nodiscard]] bool contains(TokenId t) const { return t >= 0 && t < size; }

    /// Throws ConfigError when the invariants do not hold.
    void validate() const;

    bool operator==(const Vocab&) const = default;
};

using Cell = std::optional<TokenId>;

/// Fixed-length token canvas. Cells only move from masked to filled.
class MaskedSequence {
public:
    MaskedSequence() = default;
    explicit MaskedSequence(std::size_t length, std::vector<TokenId> context = {});
    MaskedSequence(std::vector<Cell> cells, std::vector<TokenId> context);

    [[nodiscard]] std::size_t length() const { return cells_.size(); }
    [[nodiscard]] const std::vector<Cell>& cells() const { return cells_; }
    [[nodiscard]] const std::vector<TokenId>& context() const { return context_; }

    [[nodiscard]] bool is_masked(Position p) const { return !cells_.at(static_cast<std::size_t>(p)).has_value(); }
    [[nodiscard]] Cell cell(Position p) const { return cells_.at(static_cast<std::size_t>(p)); }

    /// Fills a masked cell. Throws InconsistentTrace if the cell is already filled.
    void fill(Position p, TokenId token);

    [[nodiscard]] std::size_t masked_count() const;
    [[nodiscard]] bool complete() const { return masked_count() == 0; }

    /// Tokens of a fully filled sequence; throws if any cell is masked.
    [[nodiscard]] std::vector<TokenId> tokens() const;

    bool operator==(const MaskedSequence&) const = default;

private:
    std::vector<Cell> cells_;
    std::vector<TokenId> context_;
};

/// Reasoning / delimiter / answer layout of a canvas.
struct Template {
    Interval reasoning;
    std::vector<TokenId> delimiter;
    Interval answer;
    std::optional<std::vector<TokenId>> prefilled_answer;

    [[nodiscard]] Interval delimiter_span() const { return {reasoning.end, answer.begin}; }

    /// Checks span geometry against a canvas length.
    void validate(std::size_t length) const;
};

enum class OrderKind { LeftToRight, AnyOrderMinEntropy, FixedK, Med, ArMed };

struct OrderPolicy {
    OrderKind kind = OrderKind::AnyOrderMinEntropy;
    int k = 1;            // FixedK
    double lambda = 0.0;  // Med / ArMed, nats
    int k_max = 1;        // Med / ArMed

    static OrderPolicy left_to_right() { return {OrderKind::LeftToRight}; }
    static OrderPolicy min_entropy() { return {OrderKind::AnyOrderMinEntropy}; }
    static OrderPolicy fixed_k(int k) { return {OrderKind::FixedK, k}; }
    static OrderPolicy med(double lambda, int k_max) { return {OrderKind::Med, 1, lambda, k_max}; }
    static OrderPolicy ar_med(double lambda, int k_max) { return {OrderKind::ArMed, 1, lambda, k_max}; }

    bool operator==(const OrderPolicy&) const = default;
};

struct TokenChoice {
    enum class Kind { Greedy, Sampled };
    Kind kind = Kind::Greedy;
    double temperature = 1.0;

    static TokenChoice greedy() { return {}; }
    static TokenChoice sampled(double temperature = 1.0) { return {Kind::Sampled, temperature}; }

    bool operator==(const TokenChoice&) const = default;
};

/// Full scheduler configuration. The sampling seed lives with the session.
struct DecodePolicy {
    OrderPolicy order;
    int block_size = 1;
    TokenChoice token_choice;
    std::optional<double> early_exit_gamma;
    std::optional<int> max_steps;  // default: number of initially masked cells
    int top_k = 16;

    void validate() const;
    bool operator==(const DecodePolicy&) const = default;
};

/// Human-readable policy label, e.g. "med,lambda=0.2,kmax=8,block=32".
std::string describe(const DecodePolicy& policy);

enum class Rationale { Leftmost, MinEntropy, FixedK, UnderThreshold, FallbackMinEntropy, FallbackLeftmost };

struct DecodedToken {
    Position position = 0;
    TokenId token = 0;
    double logprob = 0.0;
    double entropy = 0.0;

    bool operator==(const DecodedToken&) const = default;
};

struct StepRecord {
    std::vector<DecodedToken> decoded;  // sorted by position
    std::optional<double> answer_hub;
    int block_index = 0;

    bool operator==(const StepRecord&) const = default;
};

enum class ExitKind { Completed, EarlyExit, MaxSteps };

struct DecodeTrace {
    std::vector<StepRecord> steps;
    int nfe = 0;
    ExitKind exit = ExitKind::Completed;
    std::optional<int> exit_step;  // set for EarlyExit
    double schedule_logprob = 0.0;
    std::vector<Position> skipped;   // reasoning cells padded by an early exit
    std::vector<Position> unfilled;  // cells still masked when max_steps hit

    bool operator==(const DecodeTrace&) const = default;
};

/// Builds a canvas with the template's delimiter (and prefilled answer) filled.
MaskedSequence new_canvas(std::vector<TokenId> context, const Template& tmpl, std::size_t generation_length);

/// Ascending masked positions, optionally restricted to `within`.
std::vector<Position> masked_positions(const MaskedSequence& seq, std::optional<Interval> within = std::nullopt);

std::string to_string(OrderKind kind);
std::string to_string(Rationale r);
std::string to_string(ExitKind e);

}  // namespace mdlm
