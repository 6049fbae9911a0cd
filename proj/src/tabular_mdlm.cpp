#include "mdlm/tabular_mdlm.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "mdlm/prob.hpp"
#include "mdlm/serialization.hpp"

namespace mdlm {

TabularMDLM::TabularMDLM(std::size_t length, Vocab vocab, std::size_t pattern_cap) : length_(length), vocab_(vocab) {
    vocab_.validate();
    if (length_ == 0) throw LengthError("tabular model needs a positive length");
    const auto base = static_cast<std::size_t>(vocab_.size) + 1;
    std::size_t pattern_buckets = 1;
    bool fits = true;
    for (std::size_t i = 0; i + 1 < length_; ++i) {
        pattern_buckets *= base;
        if (pattern_buckets * length_ * static_cast<std::size_t>(vocab_.size) > pattern_cap) {
            fits = false;
            break;
        }
    }
    if (fits) {
        bucketing_ = Bucketing::Pattern;
        buckets_ = pattern_buckets;
    } else {
        bucketing_ = Bucketing::PreviousToken;
        buckets_ = base;
    }
    logits_.assign(length_ * buckets_, std::vector<double>(static_cast<std::size_t>(vocab_.size), 0.0));
}

std::size_t TabularMDLM::bucket(std::size_t position, std::span<const Cell> cells) const {
    if (bucketing_ == Bucketing::PreviousToken) {
        if (position == 0 || !cells[position - 1]) return 0;
        return static_cast<std::size_t>(*cells[position - 1]) + 1;
    }
    const auto base = static_cast<std::size_t>(vocab_.size) + 1;
    std::size_t idx = 0;
    for (std::size_t j = 0; j < length_; ++j) {
        if (j == position) continue;
        idx = idx * base + (cells[j] ? static_cast<std::size_t>(*cells[j]) + 1 : 0);
    }
    return idx;
}

std::vector<double>& TabularMDLM::logits(std::size_t position, std::size_t bucket) {
    return logits_.at(position * buckets_ + bucket);
}

std::vector<double> TabularMDLM::probs(std::size_t position, std::size_t bucket) const {
    return softmax(logits_.at(position * buckets_ + bucket));
}

double TabularMDLM::logprob(std::size_t position, std::size_t bucket, TokenId token) const {
    const auto& row = logits_.at(position * buckets_ + bucket);
    double hi = row[0];
    for (double v : row) hi = std::max(hi, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - hi);
    return row[static_cast<std::size_t>(token)] - hi - std::log(z);
}

std::vector<CellDistribution> TabularMDLM::conditionals(const MaskedSequence& seq) const {
    if (seq.length() != length_) throw LengthMismatch("canvas length differs from tabular model length");
    std::vector<CellDistribution> out;
    const auto& cells = seq.cells();
    for (std::size_t i = 0; i < length_; ++i) {
        if (cells[i] && !vocab_.contains(*cells[i])) throw ModelError("filled token outside vocab");
    }
    for (std::size_t i = 0; i < length_; ++i) {
        if (!cells[i]) out.push_back({static_cast<Position>(i), probs(i, bucket(i, cells))});
    }
    return out;
}

nlohmann::json TabularMDLM::to_checkpoint() const {
    json tables = json::array();
    for (const auto& row : logits_) tables.push_back(row);
    return {{"version", kCheckpointVersion},
            {"length", length_},
            {"vocab", vocab_},
            {"bucketing", bucketing_ == Bucketing::Pattern ? "pattern" : "previous-token"},
            {"step_count", step_count},
            {"learning_rate", learning_rate},
            {"logits", std::move(tables)}};
}

TabularMDLM TabularMDLM::from_checkpoint(const nlohmann::json& doc) {
    ObjectReader r(doc, "checkpoint");
    const auto version = r.get<std::string>("version");
    if (version != kCheckpointVersion) throw ConfigError("unsupported checkpoint version '" + version + "'");
    const auto length = r.get<std::size_t>("length");
    const auto vocab = r.get<Vocab>("vocab");
    const auto bucketing = r.get<std::string>("bucketing");
    // A pattern checkpoint must reload as pattern, a fallback one as fallback.
    TabularMDLM m(length, vocab, bucketing == "pattern" ? std::numeric_limits<std::size_t>::max() : 0);
    if ((bucketing == "pattern") != (m.bucketing_ == Bucketing::Pattern)) {
        throw ConfigError("checkpoint bucketing mismatch");
    }
    m.step_count = r.get_or<int>("step_count", 0);
    m.learning_rate = r.get_or<double>("learning_rate", 2.0);
    auto tables = r.get<std::vector<std::vector<double>>>("logits");
    if (tables.size() != m.logits_.size()) throw LengthMismatch("checkpoint has the wrong number of tables");
    for (const auto& row : tables) {
        if (row.size() != static_cast<std::size_t>(vocab.size)) throw LengthMismatch("checkpoint table width");
    }
    m.logits_ = std::move(tables);
    r.finish();
    return m;
}

void TabularMDLM::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    out << to_checkpoint().dump() << '\n';
}

TabularMDLM TabularMDLM::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_checkpoint(doc);
}

namespace {

// Uniform draw over the non-empty subsets of {0..L-1}, as a bool mask.
void draw_mask(Rng& rng, std::vector<char>& mask) {
    for (;;) {
        bool any = false;
        for (auto& m : mask) {
            m = static_cast<char>(rng.next() >> 63);
            any = any || m;
        }
        if (any) return;
    }
}

}  // namespace

TabularMDLM train_tabular_mdlm(const std::vector<std::vector<TokenId>>& data, Vocab vocab, const TrainOptions& options,
                               TrainReport* report) {
    if (data.empty()) throw EmptyData("no training sequences");
    const std::size_t L = data.front().size();
    for (const auto& x : data) {
        if (x.size() != L) throw LengthMismatch("training sequences differ in length");
        for (TokenId t : x) {
            if (!vocab.contains(t)) throw ConfigError("training token outside vocab");
        }
    }
    TabularMDLM model(L, vocab, options.pattern_cap);
    model.learning_rate = options.learning_rate;
    Rng rng(options.seed);

    const std::size_t rows = L * model.buckets_per_position();
    const auto V = static_cast<std::size_t>(vocab.size);
    std::vector<std::vector<double>> counts(rows);
    std::vector<double> visits(rows, 0.0);
    std::vector<char> mask(L);
    std::vector<Cell> cells(L);

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (auto& c : counts) c.clear();
        std::fill(visits.begin(), visits.end(), 0.0);
        double objective = 0.0;
        for (const auto& x : data) {
            draw_mask(rng, mask);
            for (std::size_t j = 0; j < L; ++j) cells[j] = mask[j] ? Cell{} : Cell{x[j]};
            for (std::size_t j = 0; j < L; ++j) {
                if (!mask[j]) continue;
                const std::size_t b = model.bucket(j, cells);
                const std::size_t row = j * model.buckets_per_position() + b;
                if (counts[row].empty()) counts[row].assign(V, 0.0);
                counts[row][static_cast<std::size_t>(x[j])] += 1.0;
                visits[row] += 1.0;
                objective += model.logprob(j, b, x[j]);
            }
        }
        if (report) report->epoch_objective.push_back(objective / static_cast<double>(data.size()));

        // Per-row mean gradient of log-softmax: empirical frequency minus current prediction.
        for (std::size_t row = 0; row < rows; ++row) {
            if (visits[row] == 0.0) continue;
            auto& lg = model.logits(row / model.buckets_per_position(), row % model.buckets_per_position());
            const auto p = softmax(lg);
            for (std::size_t v = 0; v < V; ++v) {
                lg[v] += options.learning_rate * (counts[row][v] / visits[row] - p[v]);
            }
        }
        ++model.step_count;
    }
    return model;
}

double expected_masked_loglik(const TabularMDLM& model, const std::vector<std::vector<TokenId>>& data) {
    if (data.empty()) throw EmptyData("no evaluation sequences");
    const std::size_t L = data.front().size();
    if (L > 20) throw CapExceeded("exact mask expectation limited to L <= 20");
    const std::size_t subsets = (std::size_t{1} << L) - 1;
    double total = 0.0;
    std::vector<Cell> cells(L);
    for (const auto& x : data) {
        double per_sample = 0.0;
        for (std::size_t m = 1; m <= subsets; ++m) {
            for (std::size_t j = 0; j < L; ++j) cells[j] = (m >> j) & 1U ? Cell{} : Cell{x[j]};
            for (std::size_t j = 0; j < L; ++j) {
                if ((m >> j) & 1U) per_sample += model.logprob(j, model.bucket(j, cells), x[j]);
            }
        }
        total += per_sample / static_cast<double>(subsets);
    }
    return total / static_cast<double>(data.size());
}

}  // namespace mdlm
