#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mdlm/core.hpp"
#include "mdlm/models.hpp"
#include "mdlm/serialization.hpp"
#include "mdlm/structured_models.hpp"

namespace mdlm {

struct TaskInstance {
    std::shared_ptr<const ConditionalModel> model;
    std::vector<TokenId> context;
    Template tmpl;
    std::size_t length = 0;
    std::vector<TokenId> gold;
};

class SyntheticTask {
public:
    virtual ~SyntheticTask() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] virtual TaskInstance make(std::uint64_t seed) const = 0;
    [[nodiscard]] virtual json config() const = 0;
};

/// Markov chain over content tokens with a delimiter and a deterministic answer suffix. Each
/// reasoning transition is a random permutation with probability `deterministic_rate`, else a
/// random row with entries drawn from [0.2, 0.5] before normalization.
class MarkovSuffixTask final : public SyntheticTask {
public:
    struct Options {
        int states = 3;
        int reasoning = 16;
        int answer = 8;
        double deterministic_rate = 0.5;
    };

    explicit MarkovSuffixTask(Options options);
    MarkovSuffixTask() : MarkovSuffixTask(Options{}) {}

    [[nodiscard]] std::string name() const override { return "markov"; }
    [[nodiscard]] TaskInstance make(std::uint64_t seed) const override;
    [[nodiscard]] json config() const override;

    /// Token ids: 0..states-1 content, `states` delimiter, `states`+1 eos/pad.
    [[nodiscard]] Vocab vocab() const;

private:
    Options opt_;
};

/// A hidden value v is observed through noisy copies (context and reasoning, correct with
/// probability 1 - noise, otherwise a uniformly chosen wrong value); the answer repeats v exactly.
class NoisyCopyTask final : public SyntheticTask {
public:
    struct Options {
        int values = 3;
        int context = 3;
        int reasoning = 12;
        int answer = 2;
        double noise = 0.3;
    };

    explicit NoisyCopyTask(Options options);
    NoisyCopyTask() : NoisyCopyTask(Options{}) {}

    [[nodiscard]] std::string name() const override { return "noisy-copy"; }
    [[nodiscard]] TaskInstance make(std::uint64_t seed) const override;
    [[nodiscard]] json config() const override;
    [[nodiscard]] const HiddenMarkovModel& model() const { return *model_; }

private:
    Options opt_;
    std::shared_ptr<const HiddenMarkovModel> model_;
};

/// 4x4 Sudoku with a unique solution; the whole grid is the answer span.
class SudokuTask final : public SyntheticTask {
public:
    struct Options {
        int min_givens = 4;
    };

    explicit SudokuTask(Options options);
    SudokuTask() : SudokuTask(Options{}) {}

    [[nodiscard]] std::string name() const override { return "sudoku"; }
    [[nodiscard]] TaskInstance make(std::uint64_t seed) const override;
    [[nodiscard]] json config() const override;

private:
    Options opt_;
    std::shared_ptr<const SudokuModel> model_;
};

/// Builds a task from {"kind": "markov"|"noisy-copy"|"sudoku", ...options}.
std::unique_ptr<SyntheticTask> make_task(const json& config);

}  // namespace mdlm
