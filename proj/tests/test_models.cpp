#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mdlm/models.hpp"
#include "mdlm/prob.hpp"
#include "mdlm/structured_models.hpp"
#include "mdlm/tabular_mdlm.hpp"
#include "oracles.hpp"

using namespace mdlm;

namespace {

const Vocab kBinary{2, 1, 1};

ExactJointModel four_entry() { return ExactJointModel::from_probs(2, kBinary, {0.4, 0.1, 0.2, 0.3}); }

oracle::Joint as_oracle(const ExactJointModel& m) {
    return {m.sequence_length(), m.vocab().size, m.joint({})};
}

MaskedSequence from_partial(const oracle::Partial& given, std::vector<TokenId> context = {}) {
    std::vector<Cell> cells;
    for (int v : given) cells.push_back(v < 0 ? Cell{} : Cell{v});
    return MaskedSequence(std::move(cells), std::move(context));
}

// Every partial assignment over L cells with V tokens (V+1 states per cell).
std::vector<oracle::Partial> all_partials(int L, int V) {
    std::vector<oracle::Partial> out;
    std::size_t n = 1;
    for (int i = 0; i < L; ++i) n *= static_cast<std::size_t>(V + 1);
    for (std::size_t idx = 0; idx < n; ++idx) {
        oracle::Partial p(static_cast<std::size_t>(L));
        std::size_t rest = idx;
        for (int i = 0; i < L; ++i) {
            p[static_cast<std::size_t>(i)] = static_cast<int>(rest % static_cast<std::size_t>(V + 1)) - 1;
            rest /= static_cast<std::size_t>(V + 1);
        }
        out.push_back(p);
    }
    return out;
}

std::vector<std::vector<TokenId>> draw(const ExactJointModel& m, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<TokenId>> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(m.decode_index(rng.categorical(m.joint({}))));
    return out;
}

}  // namespace

TEST_CASE("exact conditionals of the four-entry joint") {
    const auto m = four_entry();
    MaskedSequence seq(2);
    seq.fill(0, 0);
    const auto reports = exact_conditionals(m, seq);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].position == 1);
    CHECK(std::exp(*reports[0].logprob_of(0)) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(std::exp(*reports[0].logprob_of(1)) == doctest::Approx(0.2).epsilon(1e-12));
    const double h = oracle::entropy({0.8, 0.2});
    CHECK(reports[0].entropy == doctest::Approx(h).epsilon(1e-12));
    CHECK(reports[0].entropy == doctest::Approx(0.5004).epsilon(1e-4));
}

TEST_CASE("uniform and deterministic joints") {
    const auto uniform = ExactJointModel::from_probs(1, Vocab{4, 3, 3}, {0.25, 0.25, 0.25, 0.25});
    const auto r = exact_conditionals(uniform, MaskedSequence(1));
    REQUIRE(r.size() == 1);
    CHECK(r[0].entropy == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    std::vector<double> point(27, 0.0);
    point[14] = 1.0;
    const auto det = ExactJointModel::from_probs(3, Vocab{3, 2, 2}, point);
    for (const auto& rep : exact_conditionals(det, MaskedSequence(3))) CHECK(rep.entropy == 0.0);
}

TEST_CASE("exact conditionals match brute force on random joints") {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 40; ++trial) {
        const int L = 1 + trial % 3;
        const int V = 2 + trial % 2;
        const auto j = oracle::random_joint(gen, L, V, 0.3);
        const auto m = ExactJointModel::from_probs(L, Vocab{V, V - 1, V - 1}, j.p);
        for (const auto& given : all_partials(L, V)) {
            if (oracle::evidence(j, given) <= 0.0) {
                bool any_masked = false;
                for (int v : given) any_masked = any_masked || v < 0;
                if (any_masked) CHECK_THROWS_AS(m.conditionals(from_partial(given)), DegenerateConditional);
                continue;
            }
            for (const auto& d : m.conditionals(from_partial(given))) {
                const auto expect = oracle::marginal(j, given, d.position);
                for (int v = 0; v < V; ++v) {
                    CHECK(d.probs[static_cast<std::size_t>(v)] == doctest::Approx(expect[static_cast<std::size_t>(v)]).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("exact_joint_conditional") {
    const auto m = four_entry();
    const auto table = exact_joint_conditional(m, MaskedSequence(2), {0, 1});
    REQUIRE(table.probs.size() == 4);
    const std::vector<double> expect{0.4, 0.1, 0.2, 0.3};
    for (std::size_t i = 0; i < 4; ++i) CHECK(table.probs[i] == doctest::Approx(expect[i]).epsilon(1e-12));

    const auto single = exact_joint_conditional(m, MaskedSequence(2), {1});
    const auto dists = m.conditionals(MaskedSequence(2));
    for (std::size_t v = 0; v < 2; ++v) CHECK(single.probs[v] == doctest::Approx(dists[1].probs[v]).epsilon(1e-12));

    const auto corr = ExactJointModel::from_probs(2, kBinary, {0.5, 0.0, 0.0, 0.5});
    const auto jt = exact_joint_conditional(corr, MaskedSequence(2), {0, 1});
    double kl = 0.0;
    for (std::size_t idx = 0; idx < 4; ++idx) {
        if (jt.probs[idx] <= 0.0) continue;
        const auto a = jt.assignment(idx);
        kl += jt.probs[idx] * std::log(jt.probs[idx] / (jt.marginal(0)[static_cast<std::size_t>(a[0])] *
                                                        jt.marginal(1)[static_cast<std::size_t>(a[1])]));
    }
    const oracle::Joint oj{2, 2, {0.5, 0.0, 0.0, 0.5}};
    CHECK(kl == doctest::Approx(oracle::kl_to_product(oj, {-1, -1}, {0, 1})).epsilon(1e-12));
    CHECK(kl == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    std::mt19937_64 gen(9);
    const auto j = oracle::random_joint(gen, 4, 3);
    const auto rm = ExactJointModel::from_probs(4, Vocab{3, 2, 2}, j.p);
    auto seq = MaskedSequence(4);
    seq.fill(2, 1);
    const auto sub = exact_joint_conditional(rm, seq, {0, 3});
    const auto expect_sub = oracle::joint_over(j, {-1, -1, 1, -1}, {0, 3});
    for (std::size_t i = 0; i < sub.probs.size(); ++i) CHECK(sub.probs[i] == doctest::Approx(expect_sub[i]).epsilon(1e-12));

    CHECK_THROWS_AS(exact_joint_conditional(rm, seq, {2}), Error);
}

TEST_CASE("joint construction errors and index coding") {
    CHECK_THROWS_AS(ExactJointModel::from_probs(2, kBinary, {0.5, 0.5}), LengthMismatch);
    CHECK_THROWS_AS(ExactJointModel::from_probs(2, kBinary, {0.5, 0.5, 0.5, 0.5}), ConfigError);
    CHECK_THROWS_AS(ExactJointModel::from_probs(2, kBinary, {1.5, -0.5, 0.0, 0.0}), ConfigError);

    const auto m = ExactJointModel::from_probs(3, Vocab{3, 2, 2}, std::vector<double>(27, 1.0 / 27.0));
    const oracle::Joint j{3, 3, m.joint({})};
    for (std::size_t idx = 0; idx < 27; ++idx) {
        const auto tokens = m.decode_index(idx);
        const auto expect = j.outcome(idx);
        CHECK(std::vector<int>(tokens.begin(), tokens.end()) == expect);
        CHECK(m.encode(tokens) == idx);
    }

    const std::vector<double> logits{0.0, std::log(3.0)};
    const auto lm = ExactJointModel::from_logits(1, kBinary, logits);
    CHECK(lm.joint({})[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("exact model file with per-context tables") {
    const auto path = std::filesystem::temp_directory_path() / "mdlm_test_exact.json";
    {
        std::ofstream out(path);
        out << R"({"length": 1, "vocab": 2, "probs": [0.5, 0.5],
                   "contexts": [{"context": [1], "probs": [0.9, 0.1]}]})";
    }
    const auto m = ExactJointModel::load(path);
    CHECK(m.joint({})[0] == 0.5);
    CHECK(m.joint({1})[0] == 0.9);
    CHECK(m.joint({0})[0] == 0.5);
    {
        std::ofstream out(path);
        out << R"({"length": 1, "vocab": 2, "probs": [0.5, 0.5], "extra": 1})";
    }
    CHECK_THROWS_AS(ExactJointModel::load(path), ConfigError);
    std::filesystem::remove(path);
}

TEST_CASE("report construction") {
    const std::vector<double> probs{0.1, 0.4, 0.4, 0.1, 0.0};
    QuerySpec spec;
    spec.top_k = 3;
    spec.query_tokens[2] = {4, 0};
    const auto r = make_report(2, probs, spec);
    REQUIRE(r.top.size() == 3);
    CHECK(r.top[0].token == 1);
    CHECK(r.top[1].token == 2);
    CHECK((r.top[2].token == 0));
    CHECK(r.queried.size() == 2);
    CHECK(std::isinf(r.queried.at(4)));
    CHECK(r.queried.at(0) == doctest::Approx(std::log(0.1)));
    CHECK(r.entropy == doctest::Approx(oracle::entropy(probs)).epsilon(1e-12));
    CHECK(r.logprob_of(3) == std::nullopt);

    const auto m = four_entry();
    QuerySpec sampled;
    sampled.sample = SampleSpec{1.0, 42};
    const auto a = m.query(MaskedSequence(2), sampled);
    const auto b = m.query(MaskedSequence(2), sampled);
    REQUIRE(a.size() == 2);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].sampled.has_value());
        CHECK(a[i].sampled == b[i].sampled);
        CHECK(a[i].queried.count(*a[i].sampled) == 1);
    }
}

TEST_CASE("hidden Markov model matches its enumerated joint") {
    const Vocab v{3, 2, 2};
    const std::vector<double> init{0.6, 0.4};
    const Matrix trans{{0.7, 0.3}, {0.2, 0.8}};
    const Matrix emit{{0.5, 0.3, 0.2}, {0.1, 0.3, 0.6}};
    const HiddenMarkovModel hmm(v, 1, 3, init, {trans, trans, trans}, {emit, emit, emit, emit});
    const std::vector<TokenId> ctx{2};

    // Independent enumeration over hidden paths for the oracle joint.
    oracle::Joint j{3, 3, std::vector<double>(27, 0.0)};
    double total = 0.0;
    for (int h0 = 0; h0 < 2; ++h0) {
        for (int h1 = 0; h1 < 2; ++h1) {
            for (int h2 = 0; h2 < 2; ++h2) {
                for (int h3 = 0; h3 < 2; ++h3) {
                    const double path = init[h0] * trans[h0][h1] * trans[h1][h2] * trans[h2][h3] * emit[h0][2];
                    for (std::size_t idx = 0; idx < 27; ++idx) {
                        const auto x = j.outcome(idx);
                        const double w = path * emit[h1][x[0]] * emit[h2][x[1]] * emit[h3][x[2]];
                        j.p[idx] += w;
                        total += w;
                    }
                }
            }
        }
    }
    for (double& p : j.p) p /= total;

    const auto exact = hmm.to_exact_joint(ctx);
    for (std::size_t idx = 0; idx < 27; ++idx) CHECK(exact.joint(ctx)[idx] == doctest::Approx(j.p[idx]).epsilon(1e-10));

    for (const auto& given : all_partials(3, 3)) {
        for (const auto& d : hmm.conditionals(from_partial(given, ctx))) {
            const auto expect = oracle::marginal(j, given, d.position);
            for (std::size_t t = 0; t < 3; ++t) CHECK(d.probs[t] == doctest::Approx(expect[t]).epsilon(1e-10));
        }
    }
    CHECK_THROWS_AS(hmm.conditionals(MaskedSequence(3)), LengthMismatch);
}

TEST_CASE("sudoku model") {
    const auto& grids = SudokuModel::all_grids();
    CHECK(grids.size() == 288);
    std::set<SudokuModel::Grid> distinct(grids.begin(), grids.end());
    CHECK(distinct.size() == 288);

    const SudokuModel model;
    const auto& solution = grids[17];
    std::vector<TokenId> ctx(solution.begin(), solution.end());
    for (int i : {0, 5, 10, 15}) ctx[static_cast<std::size_t>(i)] = SudokuModel::kBlank;
    MaskedSequence seq(16, ctx);
    for (const auto& d : model.conditionals(seq)) {
        const auto want = solution[static_cast<std::size_t>(d.position)];
        std::size_t matching = 0;
        for (const auto& g : grids) {
            bool ok = true;
            for (int i = 0; i < 16; ++i) {
                if (ctx[static_cast<std::size_t>(i)] != SudokuModel::kBlank) ok = ok && g[static_cast<std::size_t>(i)] == ctx[static_cast<std::size_t>(i)];
            }
            matching += ok ? 1 : 0;
        }
        if (matching == 1) CHECK(d.probs[static_cast<std::size_t>(want)] == doctest::Approx(1.0));
        CHECK(d.probs[SudokuModel::kEos] == 0.0);
    }
}

TEST_CASE("tabular model initialization and checkpoints") {
    const TabularMDLM fresh(3, Vocab{3, 2, 2});
    CHECK(fresh.bucketing() == TabularMDLM::Bucketing::Pattern);
    for (const auto& d : fresh.conditionals(MaskedSequence(3))) {
        for (double p : d.probs) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }

    const auto m = four_entry();
    TrainOptions opt;
    opt.epochs = 3;
    opt.seed = 4;
    const auto trained = train_tabular_mdlm(draw(m, 500, 1), kBinary, opt);
    const auto path = std::filesystem::temp_directory_path() / "mdlm_test_ckpt.json";
    trained.save(path);
    const auto loaded = TabularMDLM::load(path);
    std::filesystem::remove(path);
    CHECK(loaded.to_checkpoint() == trained.to_checkpoint());
    CHECK(max_conditional_error(loaded, m) == max_conditional_error(trained, m));

    const TabularMDLM capped(6, Vocab{4, 3, 3}, 64);
    CHECK(capped.bucketing() == TabularMDLM::Bucketing::PreviousToken);

    CHECK_THROWS_AS(train_tabular_mdlm({}, kBinary, opt), EmptyData);
    CHECK_THROWS_AS(train_tabular_mdlm({{0, 1}, {0}}, kBinary, opt), LengthMismatch);
}

TEST_CASE("training recovers the four-entry conditionals") {
    const auto m = four_entry();
    CHECK(max_conditional_error(m, m) == 0.0);
    TrainOptions opt;
    opt.seed = 2;
    TrainReport report;
    const auto trained = train_tabular_mdlm(draw(m, 20000, 3), kBinary, opt, &report);
    CHECK(max_conditional_error(trained, m) < 0.03);
    MaskedSequence seq(2);
    seq.fill(0, 0);
    CHECK(trained.conditionals(seq)[0].probs[0] == doctest::Approx(0.8).epsilon(0.05));
    REQUIRE(report.epoch_objective.size() == static_cast<std::size_t>(opt.epochs));
    CHECK(report.epoch_objective.back() > report.epoch_objective.front());
}

TEST_CASE("training on one repeated sequence becomes one-hot") {
    const std::vector<std::vector<TokenId>> data(200, std::vector<TokenId>{2, 0, 1});
    TrainOptions opt;
    opt.epochs = 300;
    const auto trained = train_tabular_mdlm(data, Vocab{3, 2, 2}, opt);
    for (const auto& given : all_partials(3, 3)) {
        bool consistent = true;
        for (std::size_t i = 0; i < 3; ++i) consistent = consistent && (given[i] < 0 || given[i] == data[0][i]);
        if (!consistent) continue;
        for (const auto& d : trained.conditionals(from_partial(given))) {
            CHECK(d.probs[static_cast<std::size_t>(data[0][static_cast<std::size_t>(d.position)])] > 0.99);
        }
    }
    CHECK(expected_masked_loglik(trained, data) > -0.05);
    CHECK(expected_masked_loglik(trained, data) <= 0.0);
}
