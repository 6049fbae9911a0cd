#include "mdlm/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mdlm {

void Vocab::validate() const {
    if (size < 2) {
        throw ConfigError("vocab size must be >= 2, got " + std::to_string(size));
    }
    if (!contains(eos_id)) {
        throw ConfigError("eos_id " + std::to_string(eos_id) + " outside vocab");
    }
    if (!contains(pad_id)) {
        throw ConfigError("pad_id " + std::to_string(pad_id) + " outside vocab");
    }
}

MaskedSequence::MaskedSequence(std::size_t length, std::vector<TokenId> context)
    : cells_(length), context_(std::move(context)) {}

MaskedSequence::MaskedSequence(std::vector<Cell> cells, std::vector<TokenId> context)
    : cells_(std::move(cells)), context_(std::move(context)) {
    for (const auto& c : cells_) {
        if (c && *c < 0) {
            throw LengthError("negative token id in canvas");
        }
    }
}

void MaskedSequence::fill(Position p, TokenId token) {
    if (p < 0 || static_cast<std::size_t>(p) >= cells_.size()) {
        throw LengthError("fill position " + std::to_string(p) + " outside canvas");
    }
    if (token < 0) {
        throw InconsistentTrace("negative token id");
    }
    auto& cell = cells_[static_cast<std::size_t>(p)];
    if (cell.has_value()) {
        throw InconsistentTrace("position " + std::to_string(p) + " is already filled");
    }
    cell = token;
}

std::size_t MaskedSequence::masked_count() const {
    return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), [](const Cell& c) { return !c; }));
}

std::vector<TokenId> MaskedSequence::tokens() const {
    std::vector<TokenId> out;
    out.reserve(cells_.size());
    for (std::size_t i = 0; i < cells_.size(); ++i) {
        if (!cells_[i]) {
            throw LengthError("position " + std::to_string(i) + " is still masked");
        }
        out.push_back(*cells_[i]);
    }
    return out;
}

void Template::validate(std::size_t length) const {
    const auto L = static_cast<Position>(length);
    if (reasoning.begin < 0 || reasoning.end < reasoning.begin || answer.end < answer.begin || answer.begin < 0) {
        throw LengthError("template spans must be well-formed half-open intervals");
    }
    if (reasoning.overlaps(answer)) {
        throw OverlapError("reasoning span overlaps answer span");
    }
    if (reasoning.end > answer.begin) {
        throw OverlapError("reasoning span must precede answer span");
    }
    if (reasoning.end > L || answer.end > L) {
        throw LengthError("template spans exceed canvas length " + std::to_string(length));
    }
    if (static_cast<Position>(delimiter.size()) != delimiter_span().size()) {
        throw LengthError("delimiter has " + std::to_string(delimiter.size()) + " tokens but the gap is " +
                          std::to_string(delimiter_span().size()));
    }
    if (prefilled_answer && static_cast<Position>(prefilled_answer->size()) != answer.size()) {
        throw LengthError("prefilled answer length differs from answer span");
    }
}

void DecodePolicy::validate() const {
    if (block_size < 1) {
        throw ConfigError("block_size must be >= 1");
    }
    if (top_k < 1) {
        throw ConfigError("top_k must be >= 1");
    }
    if (max_steps && *max_steps < 1) {
        throw ConfigError("max_steps must be >= 1");
    }
    if (early_exit_gamma && !(*early_exit_gamma >= 0.0)) {
        throw ConfigError("early_exit_gamma must be >= 0");
    }
    if (token_choice.kind == TokenChoice::Kind::Sampled && !(token_choice.temperature >= 0.0)) {
        throw ConfigError("temperature must be >= 0");
    }
    switch (order.kind) {
        case OrderKind::FixedK:
            if (order.k < 1) throw ConfigError("k must be >= 1");
            break;
        case OrderKind::Med:
        case OrderKind::ArMed:
            if (!(order.lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
            if (order.k_max < 1) throw ConfigError("k_max must be >= 1");
            break;
        default:
            break;
    }
}

std::string describe(const DecodePolicy& policy) {
    std::ostringstream os;
    switch (policy.order.kind) {
        case OrderKind::LeftToRight: os << "left-to-right"; break;
        case OrderKind::AnyOrderMinEntropy: os << "entropy,k=1"; break;
        case OrderKind::FixedK: os << "entropy,k=" << policy.order.k; break;
        case OrderKind::Med: os << "med,lambda=" << policy.order.lambda << ",kmax=" << policy.order.k_max; break;
        case OrderKind::ArMed: os << "ar-med,lambda=" << policy.order.lambda << ",kmax=" << policy.order.k_max; break;
    }
    os << ",block=" << policy.block_size;
    if (policy.early_exit_gamma) {
        os << ",gamma=" << *policy.early_exit_gamma;
    }
    if (policy.token_choice.kind == TokenChoice::Kind::Sampled) {
        os << ",T=" << policy.token_choice.temperature;
    }
    return os.str();
}

MaskedSequence new_canvas(std::vector<TokenId> context, const Template& tmpl, std::size_t generation_length) {
    if (generation_length == 0) {
        throw LengthError("generation length must be positive");
    }
    tmpl.validate(generation_length);
    MaskedSequence seq(generation_length, std::move(context));
    const Interval gap = tmpl.delimiter_span();
    for (Position p = gap.begin; p < gap.end; ++p) {
        seq.fill(p, tmpl.delimiter[static_cast<std::size_t>(p - gap.begin)]);
    }
    if (tmpl.prefilled_answer) {
        for (Position p = tmpl.answer.begin; p < tmpl.answer.end; ++p) {
            seq.fill(p, (*tmpl.prefilled_answer)[static_cast<std::size_t>(p - tmpl.answer.begin)]);
        }
    }
    return seq;
}

std::vector<Position> masked_positions(const MaskedSequence& seq, std::optional<Interval> within) {
    std::vector<Position> out;
    const auto L = static_cast<Position>(seq.length());
    Position lo = 0;
    Position hi = L;
    if (within) {
        lo = std::max<Position>(0, within->begin);
        hi = std::min<Position>(L, within->end);
    }
    for (Position p = lo; p < hi; ++p) {
        if (seq.is_masked(p)) out.push_back(p);
    }
    return out;
}

std::string to_string(OrderKind kind) {
    switch (kind) {
        case OrderKind::LeftToRight: return "left-to-right";
        case OrderKind::AnyOrderMinEntropy: return "min-entropy";
        case OrderKind::FixedK: return "fixed-k";
        case OrderKind::Med: return "med";
        case OrderKind::ArMed: return "ar-med";
    }
    return "?";
}

std::string to_string(Rationale r) {
    switch (r) {
        case Rationale::Leftmost: return "leftmost";
        case Rationale::MinEntropy: return "min_entropy";
        case Rationale::FixedK: return "fixed_k";
        case Rationale::UnderThreshold: return "under_threshold";
        case Rationale::FallbackMinEntropy: return "fallback_min_entropy";
        case Rationale::FallbackLeftmost: return "fallback_leftmost";
    }
    return "?";
}

std::string to_string(ExitKind e) {
    switch (e) {
        case ExitKind::Completed: return "completed";
        case ExitKind::EarlyExit: return "early_exit";
        case ExitKind::MaxSteps: return "max_steps";
    }
    return "?";
}

}  // namespace mdlm
