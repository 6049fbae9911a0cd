#include "mdlm/tasks.hpp"

#include <algorithm>
#include <numeric>

#include "mdlm/prob.hpp"

namespace mdlm {

namespace {

Matrix identity(int n) {
    Matrix m(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int i = 0; i < n; ++i) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
    return m;
}

Matrix random_permutation(int n, Rng& rng) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng.uniform() * (i + 1));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    Matrix m(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int i = 0; i < n; ++i) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = 1.0;
    return m;
}

Matrix random_rows(int n, Rng& rng) {
    Matrix m(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
    for (auto& row : m) {
        for (double& v : row) v = 0.2 + 0.3 * rng.uniform();
        normalize(row);
    }
    return m;
}

// Emission matrix (states x vocab) that writes the state itself.
Matrix copy_emission(int states, int vocab) {
    Matrix m(static_cast<std::size_t>(states), std::vector<double>(static_cast<std::size_t>(vocab), 0.0));
    for (int s = 0; s < states; ++s) m[static_cast<std::size_t>(s)][static_cast<std::size_t>(s)] = 1.0;
    return m;
}

Matrix constant_emission(int states, int vocab, TokenId token) {
    Matrix m(static_cast<std::size_t>(states), std::vector<double>(static_cast<std::size_t>(vocab), 0.0));
    for (auto& row : m) row[static_cast<std::size_t>(token)] = 1.0;
    return m;
}

Matrix noisy_emission(int states, int vocab, double noise) {
    Matrix m(static_cast<std::size_t>(states), std::vector<double>(static_cast<std::size_t>(vocab), 0.0));
    for (int s = 0; s < states; ++s) {
        for (int v = 0; v < states; ++v) {
            m[static_cast<std::size_t>(s)][static_cast<std::size_t>(v)] = s == v ? 1.0 - noise : noise / (states - 1);
        }
    }
    return m;
}

Template spans(int reasoning, int delimiter, int answer, TokenId delimiter_token) {
    Template t;
    t.reasoning = {0, reasoning};
    t.delimiter.assign(static_cast<std::size_t>(delimiter), delimiter_token);
    t.answer = {reasoning + delimiter, reasoning + delimiter + answer};
    return t;
}

}  // namespace

MarkovSuffixTask::MarkovSuffixTask(Options options) : opt_(options) {
    if (opt_.states < 2 || opt_.reasoning < 1 || opt_.answer < 1) throw ConfigError("markov task: sizes too small");
    if (opt_.deterministic_rate < 0.0 || opt_.deterministic_rate > 1.0) {
        throw ConfigError("markov task: deterministic_rate must be in [0, 1]");
    }
}

Vocab MarkovSuffixTask::vocab() const { return {opt_.states + 2, opt_.states + 1, opt_.states + 1}; }

TaskInstance MarkovSuffixTask::make(std::uint64_t seed) const {
    Rng rng(seed);
    const int S = opt_.states;
    const auto v = vocab();
    const TokenId delim = S;

    // Observation layout: [start] reasoning... delimiter answer...
    std::vector<Matrix> transitions;
    for (int i = 0; i < opt_.reasoning; ++i) {
        transitions.push_back(rng.uniform() < opt_.deterministic_rate ? random_permutation(S, rng)
                                                                      : random_rows(S, rng));
    }
    transitions.push_back(identity(S));  // into the delimiter
    for (int i = 0; i < opt_.answer; ++i) transitions.push_back(random_permutation(S, rng));

    std::vector<Matrix> emissions(static_cast<std::size_t>(1 + opt_.reasoning), copy_emission(S, v.size));
    emissions.push_back(constant_emission(S, v.size, delim));
    for (int i = 0; i < opt_.answer; ++i) emissions.push_back(copy_emission(S, v.size));

    const auto start = static_cast<TokenId>(rng.uniform() * S);
    std::vector<double> initial(static_cast<std::size_t>(S), 1.0 / S);

    TaskInstance inst;
    inst.context = {start};
    inst.tmpl = spans(opt_.reasoning, 1, opt_.answer, delim);
    inst.length = static_cast<std::size_t>(opt_.reasoning + 1 + opt_.answer);

    TokenId state = start;
    for (std::size_t t = 0; t < transitions.size(); ++t) {
        state = static_cast<TokenId>(rng.categorical(transitions[t][static_cast<std::size_t>(state)]));
        if (t > static_cast<std::size_t>(opt_.reasoning)) inst.gold.push_back(state);
    }
    inst.model = std::make_shared<HiddenMarkovModel>(v, 1, inst.length, std::move(initial), std::move(transitions),
                                                     std::move(emissions));
    return inst;
}

json MarkovSuffixTask::config() const {
    return {{"kind", "markov"},
            {"states", opt_.states},
            {"reasoning", opt_.reasoning},
            {"answer", opt_.answer},
            {"deterministic_rate", opt_.deterministic_rate}};
}

NoisyCopyTask::NoisyCopyTask(Options options) : opt_(options) {
    const int K = opt_.values;
    if (K < 2 || opt_.context < 0 || opt_.reasoning < 1 || opt_.answer < 1) {
        throw ConfigError("noisy-copy task: sizes too small");
    }
    if (!(opt_.noise >= 0.0 && opt_.noise < 1.0)) throw ConfigError("noisy-copy task: noise must be in [0, 1)");
    const Vocab v{K + 2, K + 1, K + 1};
    const int C = opt_.context;
    const int L = opt_.reasoning + 1 + opt_.answer;
    std::vector<Matrix> transitions(static_cast<std::size_t>(C + L - 1), identity(K));
    std::vector<Matrix> emissions(static_cast<std::size_t>(C + opt_.reasoning), noisy_emission(K, v.size, opt_.noise));
    emissions.push_back(constant_emission(K, v.size, K));
    for (int i = 0; i < opt_.answer; ++i) emissions.push_back(copy_emission(K, v.size));
    model_ = std::make_shared<HiddenMarkovModel>(v, static_cast<std::size_t>(C), static_cast<std::size_t>(L),
                                                 std::vector<double>(static_cast<std::size_t>(K), 1.0 / K),
                                                 std::move(transitions), std::move(emissions));
}

TaskInstance NoisyCopyTask::make(std::uint64_t seed) const {
    Rng rng(seed);
    const int K = opt_.values;
    const auto value = static_cast<TokenId>(rng.uniform() * K);
    TaskInstance inst;
    inst.model = model_;
    for (int i = 0; i < opt_.context; ++i) {
        TokenId obs = value;
        if (rng.uniform() < opt_.noise) {
            obs = static_cast<TokenId>((value + 1 + static_cast<int>(rng.uniform() * (K - 1))) % K);
        }
        inst.context.push_back(obs);
    }
    inst.tmpl = spans(opt_.reasoning, 1, opt_.answer, K);
    inst.length = static_cast<std::size_t>(opt_.reasoning + 1 + opt_.answer);
    inst.gold.assign(static_cast<std::size_t>(opt_.answer), value);
    return inst;
}

json NoisyCopyTask::config() const {
    return {{"kind", "noisy-copy"},
            {"values", opt_.values},
            {"context", opt_.context},
            {"reasoning", opt_.reasoning},
            {"answer", opt_.answer},
            {"noise", opt_.noise}};
}

SudokuTask::SudokuTask(Options options) : opt_(options), model_(std::make_shared<SudokuModel>()) {
    if (opt_.min_givens < 0 || opt_.min_givens > SudokuModel::kCells) {
        throw ConfigError("sudoku task: min_givens must be in [0, 16]");
    }
}

TaskInstance SudokuTask::make(std::uint64_t seed) const {
    Rng rng(seed);
    const auto& grids = SudokuModel::all_grids();
    const auto& solution = grids[static_cast<std::size_t>(rng.uniform() * static_cast<double>(grids.size()))];

    auto solutions = [&](const SudokuModel::Grid& givens) {
        int count = 0;
        for (const auto& g : grids) {
            bool ok = true;
            for (int i = 0; i < SudokuModel::kCells && ok; ++i) {
                const auto c = givens[static_cast<std::size_t>(i)];
                ok = c == SudokuModel::kBlank || c == g[static_cast<std::size_t>(i)];
            }
            count += ok ? 1 : 0;
        }
        return count;
    };

    SudokuModel::Grid givens = solution;
    std::vector<int> order(SudokuModel::kCells);
    std::iota(order.begin(), order.end(), 0);
    for (int i = SudokuModel::kCells - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng.uniform() * (i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    int remaining = SudokuModel::kCells;
    for (int cell : order) {
        if (remaining <= opt_.min_givens) break;
        const auto keep = givens[static_cast<std::size_t>(cell)];
        givens[static_cast<std::size_t>(cell)] = SudokuModel::kBlank;
        if (solutions(givens) == 1) {
            --remaining;
        } else {
            givens[static_cast<std::size_t>(cell)] = keep;
        }
    }

    TaskInstance inst;
    inst.model = model_;
    inst.context.assign(givens.begin(), givens.end());
    inst.tmpl.reasoning = {0, 0};
    inst.tmpl.answer = {0, SudokuModel::kCells};
    inst.length = SudokuModel::kCells;
    inst.gold.assign(solution.begin(), solution.end());
    return inst;
}

json SudokuTask::config() const { return {{"kind", "sudoku"}, {"min_givens", opt_.min_givens}}; }

std::unique_ptr<SyntheticTask> make_task(const json& config) {
    ObjectReader r(config, "task");
    const auto kind = r.get<std::string>("kind");
    std::unique_ptr<SyntheticTask> task;
    if (kind == "markov") {
        MarkovSuffixTask::Options o;
        o.states = r.get_or("states", o.states);
        o.reasoning = r.get_or("reasoning", o.reasoning);
        o.answer = r.get_or("answer", o.answer);
        o.deterministic_rate = r.get_or("deterministic_rate", o.deterministic_rate);
        task = std::make_unique<MarkovSuffixTask>(o);
    } else if (kind == "noisy-copy") {
        NoisyCopyTask::Options o;
        o.values = r.get_or("values", o.values);
        o.context = r.get_or("context", o.context);
        o.reasoning = r.get_or("reasoning", o.reasoning);
        o.answer = r.get_or("answer", o.answer);
        o.noise = r.get_or("noise", o.noise);
        task = std::make_unique<NoisyCopyTask>(o);
    } else if (kind == "sudoku") {
        SudokuTask::Options o;
        o.min_givens = r.get_or("min_givens", o.min_givens);
        task = std::make_unique<SudokuTask>(o);
    } else {
        throw ConfigError("task.kind must be markov, noisy-copy or sudoku (got '" + kind + "')");
    }
    r.finish();
    return task;
}

}  // namespace mdlm
