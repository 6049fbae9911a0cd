#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mdlm/models.hpp"
#include "json.hpp"

namespace mdlm {

/// A masked-diffusion model whose parameters are softmax tables, one per (position, bucket).
///
/// With `Bucketing::Pattern` the bucket is the full state of every other cell (masked or its
/// token), so the tables can represent any set of masked conditionals exactly. When that table
/// space would exceed the cap, buckets shrink to (position, previous cell state).
/// The model is unconditional: the canvas context is ignored.
class TabularMDLM final : public DenseConditionalModel {
public:
    enum class Bucketing { Pattern, PreviousToken };

    static constexpr std::size_t kDefaultPatternCap = std::size_t{1} << 20;
    static constexpr const char* kCheckpointVersion = "tabular-mdlm/1";

    /// Uniformly initialized tables.
    TabularMDLM(std::size_t length, Vocab vocab, std::size_t pattern_cap = kDefaultPatternCap);

    [[nodiscard]] Vocab vocab() const override { return vocab_; }
    [[nodiscard]] std::optional<std::size_t> length() const override { return length_; }
    [[nodiscard]] Bucketing bucketing() const { return bucketing_; }
    [[nodiscard]] std::size_t buckets_per_position() const { return buckets_; }

    std::vector<CellDistribution> conditionals(const MaskedSequence& seq) const override;

    /// Bucket of cell `position` given the states of all cells.
    [[nodiscard]] std::size_t bucket(std::size_t position, std::span<const Cell> cells) const;
    [[nodiscard]] std::vector<double> probs(std::size_t position, std::size_t bucket) const;
    [[nodiscard]] double logprob(std::size_t position, std::size_t bucket, TokenId token) const;

    std::vector<double>& logits(std::size_t position, std::size_t bucket);

    int step_count = 0;
    double learning_rate = 2.0;

    [[nodiscard]] nlohmann::json to_checkpoint() const;
    static TabularMDLM from_checkpoint(const nlohmann::json& doc);
    void save(const std::filesystem::path& path) const;
    static TabularMDLM load(const std::filesystem::path& path);

private:
    std::size_t length_;
    Vocab vocab_;
    Bucketing bucketing_ = Bucketing::Pattern;
    std::size_t buckets_ = 0;
    std::vector<std::vector<double>> logits_;  // [position * buckets_ + bucket][token]
};

struct TrainOptions {
    int epochs = 100;
    double learning_rate = 2.0;
    std::uint64_t seed = 0;
    std::size_t pattern_cap = TabularMDLM::kDefaultPatternCap;
};

struct TrainReport {
    /// Mean per-sample masked log-likelihood under fresh masks, measured before each epoch's update.
    std::vector<double> epoch_objective;
};

/// Fits a TabularMDLM by gradient ascent on the masked log-likelihood with uniform non-empty mask sets.
TabularMDLM train_tabular_mdlm(const std::vector<std::vector<TokenId>>& data, Vocab vocab, const TrainOptions& options,
                               TrainReport* report = nullptr);

/// Exact expectation over all 2^L - 1 non-empty mask sets of the summed masked log-likelihood,
/// averaged over the data (L <= 20).
double expected_masked_loglik(const TabularMDLM& model, const std::vector<std::vector<TokenId>>& data);

}  // namespace mdlm
