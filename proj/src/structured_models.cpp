#include "mdlm/structured_models.hpp"

#include <cmath>
#include <numeric>

namespace mdlm {

namespace {

void check_stochastic(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
    if (m.size() != rows) throw ConfigError(std::string(what) + ": wrong row count");
    for (const auto& row : m) {
        if (row.size() != cols) throw ConfigError(std::string(what) + ": wrong column count");
        double total = 0.0;
        for (double v : row) {
            if (!(v >= 0.0)) throw ConfigError(std::string(what) + ": negative entry");
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError(std::string(what) + ": row does not sum to 1");
    }
}

}  // namespace

HiddenMarkovModel::HiddenMarkovModel(Vocab vocab, std::size_t context_length, std::size_t length,
                                     std::vector<double> initial, std::vector<Matrix> transitions,
                                     std::vector<Matrix> emissions)
    : vocab_(vocab),
      context_length_(context_length),
      length_(length),
      initial_(std::move(initial)),
      transitions_(std::move(transitions)),
      emissions_(std::move(emissions)) {
    vocab_.validate();
    const std::size_t total = context_length_ + length_;
    const std::size_t S = initial_.size();
    if (length_ == 0 || S == 0) throw ConfigError("hmm: empty state space or canvas");
    check_stochastic(Matrix{initial_}, 1, S, "hmm initial");
    if (transitions_.size() + 1 != total) throw ConfigError("hmm: need one transition matrix per step");
    if (emissions_.size() != total) throw ConfigError("hmm: need one emission matrix per position");
    for (const auto& t : transitions_) check_stochastic(t, S, S, "hmm transition");
    for (const auto& e : emissions_) check_stochastic(e, S, static_cast<std::size_t>(vocab_.size), "hmm emission");
}

std::vector<int> HiddenMarkovModel::observations(const MaskedSequence& seq) const {
    if (seq.length() != length_) throw LengthMismatch("canvas length differs from hmm length");
    if (seq.context().size() != context_length_) throw LengthMismatch("context length differs from hmm context");
    std::vector<int> obs;
    obs.reserve(context_length_ + length_);
    for (TokenId t : seq.context()) {
        if (!vocab_.contains(t)) throw ModelError("context token outside vocab");
        obs.push_back(t);
    }
    for (const auto& c : seq.cells()) {
        if (c && !vocab_.contains(*c)) throw ModelError("filled token outside vocab");
        obs.push_back(c ? *c : -1);
    }
    return obs;
}

double HiddenMarkovModel::emission(std::size_t t, std::size_t h, int obs) const {
    return obs < 0 ? 1.0 : emissions_[t][h][static_cast<std::size_t>(obs)];
}

std::vector<CellDistribution> HiddenMarkovModel::conditionals(const MaskedSequence& seq) const {
    const auto obs = observations(seq);
    if (seq.complete()) return {};
    const std::size_t T = obs.size();
    const std::size_t S = initial_.size();

    std::vector<std::vector<double>> alpha(T, std::vector<double>(S));
    for (std::size_t h = 0; h < S; ++h) alpha[0][h] = initial_[h] * emission(0, h, obs[0]);
    if (!(normalize(alpha[0]) > 0.0)) throw DegenerateConditional("hmm evidence has zero probability");
    for (std::size_t t = 1; t < T; ++t) {
        for (std::size_t h = 0; h < S; ++h) {
            double acc = 0.0;
            for (std::size_t g = 0; g < S; ++g) acc += alpha[t - 1][g] * transitions_[t - 1][g][h];
            alpha[t][h] = acc * emission(t, h, obs[t]);
        }
        if (!(normalize(alpha[t]) > 0.0)) throw DegenerateConditional("hmm evidence has zero probability");
    }

    std::vector<std::vector<double>> beta(T, std::vector<double>(S, 1.0));
    for (std::size_t t = T - 1; t-- > 0;) {
        for (std::size_t g = 0; g < S; ++g) {
            double acc = 0.0;
            for (std::size_t h = 0; h < S; ++h) {
                acc += transitions_[t][g][h] * emission(t + 1, h, obs[t + 1]) * beta[t + 1][h];
            }
            beta[t][g] = acc;
        }
        normalize(beta[t]);
    }

    std::vector<CellDistribution> out;
    for (std::size_t i = 0; i < length_; ++i) {
        const std::size_t t = context_length_ + i;
        if (obs[t] >= 0) continue;
        std::vector<double> post(S);
        for (std::size_t h = 0; h < S; ++h) post[h] = alpha[t][h] * beta[t][h];
        if (!(normalize(post) > 0.0)) throw DegenerateConditional("hmm posterior vanished");
        std::vector<double> probs(static_cast<std::size_t>(vocab_.size), 0.0);
        for (std::size_t h = 0; h < S; ++h) {
            if (post[h] == 0.0) continue;
            for (std::size_t v = 0; v < probs.size(); ++v) probs[v] += post[h] * emissions_[t][h][v];
        }
        normalize(probs);
        out.push_back({static_cast<Position>(i), std::move(probs)});
    }
    return out;
}

double HiddenMarkovModel::log_evidence(const MaskedSequence& seq) const {
    const auto obs = observations(seq);
    const std::size_t S = initial_.size();
    std::vector<double> alpha(S);
    for (std::size_t h = 0; h < S; ++h) alpha[h] = initial_[h] * emission(0, h, obs[0]);
    double log_total = safe_log(normalize(alpha));
    std::vector<double> next(S);
    for (std::size_t t = 1; t < obs.size() && std::isfinite(log_total); ++t) {
        for (std::size_t h = 0; h < S; ++h) {
            double acc = 0.0;
            for (std::size_t g = 0; g < S; ++g) acc += alpha[g] * transitions_[t - 1][g][h];
            next[h] = acc * emission(t, h, obs[t]);
        }
        log_total += safe_log(normalize(next));
        alpha.swap(next);
    }
    return log_total;
}

ExactJointModel HiddenMarkovModel::to_exact_joint(const std::vector<TokenId>& context) const {
    std::size_t outcomes = 1;
    for (std::size_t i = 0; i < length_; ++i) outcomes *= static_cast<std::size_t>(vocab_.size);
    const double log_c = log_evidence(MaskedSequence(length_, context));
    std::vector<double> probs(outcomes);
    std::vector<Cell> cells(length_);
    for (std::size_t idx = 0; idx < outcomes; ++idx) {
        std::size_t rest = idx;
        for (std::size_t i = length_; i-- > 0;) {
            cells[i] = static_cast<TokenId>(rest % static_cast<std::size_t>(vocab_.size));
            rest /= static_cast<std::size_t>(vocab_.size);
        }
        probs[idx] = std::exp(log_evidence(MaskedSequence(cells, context)) - log_c);
    }
    normalize(probs);  // absorbs rounding so the table passes the 1e-12 check
    return ExactJointModel::from_probs(static_cast<int>(length_), vocab_, std::move(probs));
}

const std::vector<SudokuModel::Grid>& SudokuModel::all_grids() {
    static const std::vector<Grid> grids = [] {
        std::vector<Grid> out;
        Grid g{};
        auto ok = [&](int cell, TokenId d) {
            const int r = cell / 4, c = cell % 4;
            for (int k = 0; k < cell; ++k) {
                const int rk = k / 4, ck = k % 4;
                const bool same_box = (rk / 2 == r / 2) && (ck / 2 == c / 2);
                if ((rk == r || ck == c || same_box) && g[static_cast<std::size_t>(k)] == d) return false;
            }
            return true;
        };
        auto fill = [&](auto&& self, int cell) -> void {
            if (cell == kCells) {
                out.push_back(g);
                return;
            }
            for (TokenId d = 0; d < 4; ++d) {
                if (ok(cell, d)) {
                    g[static_cast<std::size_t>(cell)] = d;
                    self(self, cell + 1);
                }
            }
        };
        fill(fill, 0);
        return out;
    }();
    return grids;
}

std::vector<CellDistribution> SudokuModel::conditionals(const MaskedSequence& seq) const {
    if (seq.length() != kCells) throw LengthMismatch("sudoku canvas must have 16 cells");
    const auto& ctx = seq.context();
    if (!ctx.empty() && ctx.size() != kCells) throw LengthMismatch("sudoku context must be empty or 16 cells");
    const auto masked = masked_positions(seq);
    std::vector<CellDistribution> out;
    if (masked.empty()) return out;
    for (Position p : masked) out.push_back({p, std::vector<double>(6, 0.0)});
    double total = 0.0;
    for (const auto& g : all_grids()) {
        bool consistent = true;
        for (std::size_t i = 0; i < kCells && consistent; ++i) {
            if (!ctx.empty() && ctx[i] >= 0 && ctx[i] < 4 && ctx[i] != g[i]) consistent = false;
            const auto& c = seq.cells()[i];
            if (c && *c != g[i]) consistent = false;
        }
        if (!consistent) continue;
        total += 1.0;
        for (auto& cd : out) cd.probs[static_cast<std::size_t>(g[static_cast<std::size_t>(cd.position)])] += 1.0;
    }
    if (total == 0.0) throw DegenerateConditional("no sudoku grid matches the givens and filled cells");
    for (auto& cd : out) {
        for (double& v : cd.probs) v /= total;
    }
    return out;
}

std::vector<TokenId> sample_completion(const DenseConditionalModel& model, MaskedSequence seq, Rng& rng) {
    while (!seq.complete()) {
        const auto dists = model.conditionals(seq);
        const auto& first = dists.front();
        seq.fill(first.position, static_cast<TokenId>(rng.categorical(first.probs)));
    }
    return seq.tokens();
}

}  // namespace mdlm
