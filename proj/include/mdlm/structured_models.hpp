#pragma once

#include <array>
#include <vector>

#include "mdlm/models.hpp"
#include "mdlm/prob.hpp"

namespace mdlm {

/// Row-stochastic matrix stored as rows.
using Matrix = std::vector<std::vector<double>>;

/// Exact conditionals for a hidden Markov chain that spans the context followed by the canvas.
///
/// Positions 0..C-1 carry the context (always observed), positions C..C+L-1 the canvas cells.
/// transitions[t] moves the hidden state from t to t+1; emissions[t] maps the hidden state at t
/// to a token. Masked-cell conditionals come from a scaled forward-backward pass, so they are
/// exact for any evidence pattern.
class HiddenMarkovModel final : public DenseConditionalModel {
public:
    HiddenMarkovModel(Vocab vocab, std::size_t context_length, std::size_t length, std::vector<double> initial,
                      std::vector<Matrix> transitions, std::vector<Matrix> emissions);

    [[nodiscard]] Vocab vocab() const override { return vocab_; }
    [[nodiscard]] std::optional<std::size_t> length() const override { return length_; }
    [[nodiscard]] std::size_t context_length() const { return context_length_; }
    [[nodiscard]] std::size_t num_states() const { return initial_.size(); }

    std::vector<CellDistribution> conditionals(const MaskedSequence& seq) const override;

    /// log p(filled cells, context).
    [[nodiscard]] double log_evidence(const MaskedSequence& seq) const;

    /// Enumerates p(x | c) into a tabular model (tiny L and V only).
    [[nodiscard]] ExactJointModel to_exact_joint(const std::vector<TokenId>& context) const;

private:
    std::vector<int> observations(const MaskedSequence& seq) const;
    double emission(std::size_t t, std::size_t h, int obs) const;

    Vocab vocab_;
    std::size_t context_length_;
    std::size_t length_;
    std::vector<double> initial_;
    std::vector<Matrix> transitions_;
    std::vector<Matrix> emissions_;
};

/// Uniform distribution over completed 4x4 Sudoku grids consistent with the givens.
///
/// Tokens 0..3 are the digits; the context holds 16 cells where any id outside 0..3 is blank.
class SudokuModel final : public DenseConditionalModel {
public:
    static constexpr int kCells = 16;
    static constexpr TokenId kEos = 4;
    static constexpr TokenId kBlank = 5;

    using Grid = std::array<TokenId, kCells>;

    /// Every valid 4x4 grid (288 of them).
    static const std::vector<Grid>& all_grids();

    [[nodiscard]] Vocab vocab() const override { return {6, kEos, kEos}; }
    [[nodiscard]] std::optional<std::size_t> length() const override { return kCells; }
    std::vector<CellDistribution> conditionals(const MaskedSequence& seq) const override;
};

/// Draws a completion of the masked cells left to right from exact conditionals.
std::vector<TokenId> sample_completion(const DenseConditionalModel& model, MaskedSequence seq, Rng& rng);

}  // namespace mdlm
