#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "json.hpp"
#include "mdlm/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Workdir {
    fs::path dir;

    Workdir() {
        static int counter = 0;
        dir = fs::temp_directory_path() / ("mdlm_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workdir() { fs::remove_all(dir); }

    std::string put(const std::string& name, const char* text) const { return put_text(name, text); }
    std::string put_text(const std::string& name, const std::string& text) const {
        std::ofstream(dir / name) << text;
        return (dir / name).string();
    }
    std::string put(const std::string& name, const json& doc) const { return put_text(name, doc.dump()); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

struct Run {
    int status = 0;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.status = mdlm::run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    std::vector<json> rows;
    std::string line;
    while (std::getline(in, line)) rows.push_back(json::parse(line));
    return rows;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// L=3: reasoning cells 0,1 and answer cell 2; the answer equals cell 0, so answer 2 is impossible.
json reasoning_joint() {
    std::vector<double> p(27, 0.0);
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) p[static_cast<std::size_t>(a * 9 + b * 3 + a)] = a == 2 ? 0.0 : (a == 0 ? 0.6 : 0.4) / 3.0;
    }
    return {{"length", 3}, {"vocab", 3}, {"probs", p}};
}

json three_cell_template() { return {{"reasoning", {0, 2}}, {"delimiter", json::array()}, {"answer", {2, 3}}}; }

}  // namespace

TEST_CASE("decode writes one row per session") {
    Workdir w;
    const auto model = w.put("joint.json", reasoning_joint());
    const auto cfg = w.put("run.json", json{{"model", {{"exact", "joint.json"}}},
                                            {"template", three_cell_template()},
                                            {"samples", 3},
                                            {"policy", {{"order", "min-entropy"}, {"token_choice", "sampled"}}},
                                            {"out", w.path("traces.jsonl")}});
    (void)model;
    const auto r = cli({"decode", "--config", cfg});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    const auto rows = read_jsonl(w.path("traces.jsonl"));
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].contains("config"));
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].at("session") == i - 1);
        CHECK(rows[i].at("trace").at("nfe") == 3);
    }
    CHECK(r.out.find("sessions=3 mean_nfe=3") != std::string::npos);

    const auto again = cli({"decode", "--config", cfg, "--out", w.path("again.jsonl")});
    REQUIRE(again.status == 0);
    auto first = read_jsonl(w.path("traces.jsonl"));
    auto second = read_jsonl(w.path("again.jsonl"));
    first.erase(first.begin());
    second.erase(second.begin());
    CHECK(first == second);
}

TEST_CASE("decode flags override the config") {
    Workdir w;
    w.put("joint.json", reasoning_joint());
    const auto cfg = w.put("run.json", json{{"model", {{"exact", "joint.json"}}},
                                            {"policy", {{"order", "min-entropy"}}},
                                            {"out", w.path("a.jsonl")}});
    const auto r = cli({"decode", "--config", cfg, "--policy", "fixed-k", "--k", "3", "--block", "3", "--out",
                        w.path("b.jsonl"), "--seed", "5"});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK_FALSE(fs::exists(w.path("a.jsonl")));
    const auto rows = read_jsonl(w.path("b.jsonl"));
    CHECK(rows[0].at("config").at("policy").at("k") == 3);
    CHECK(rows[0].at("config").at("seed") == 5);
    CHECK(rows[1].at("trace").at("nfe") == 1);
}

TEST_CASE("decode configuration errors exit 1 and name the field") {
    Workdir w;
    const auto missing = w.put("missing.json", json{{"model", {{"exact", "nope.json"}}}, {"out", w.path("x.jsonl")}});
    const auto r = cli({"decode", "--config", missing});
    CHECK(r.status == 1);
    CHECK(r.err.find("model.exact") != std::string::npos);

    const auto no_model = w.put("nomodel.json", json{{"out", w.path("x.jsonl")}});
    const auto r2 = cli({"decode", "--config", no_model});
    CHECK(r2.status == 1);
    CHECK(r2.err.find("model") != std::string::npos);

    w.put("joint.json", reasoning_joint());
    const auto typo = w.put("typo.json", json{{"model", {{"exact", "joint.json"}}}, {"out", w.path("x.jsonl")}, {"sampels", 2}});
    const auto r3 = cli({"decode", "--config", typo});
    CHECK(r3.status == 1);
    CHECK(r3.err.find("sampels") != std::string::npos);

    CHECK(cli({"decode", "--config", w.path("absent.json")}).status == 1);
    CHECK(cli({"decode", "--model", "weird:thing", "--out", w.path("x.jsonl")}).status == 1);
}

TEST_CASE("posterior rows, warnings and samples") {
    Workdir w;
    w.put("joint.json", reasoning_joint());
    w.put("answers.jsonl", "{\"answer\": [0]}\n{\"answer\": [1]}\n{\"answer\": [0]}\n");
    w.put("mixed.jsonl", "{\"answer\": [0]}\n{\"answer\": [2]}\n{\"answer\": [1]}\n");
    const auto cfg = w.put("post.json", json{{"model", {{"exact", "joint.json"}}},
                                             {"template", three_cell_template()},
                                             {"answers", "answers.jsonl"},
                                             {"out", w.path("post.jsonl")}});

    const auto r = cli({"posterior", "--config", cfg});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    auto rows = read_jsonl(w.path("post.jsonl"));
    CHECK(rows.size() == 4);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].at("reasoning")[0] == rows[i].at("answer")[0]);
    }
    CHECK(r.out.find("pairs=3 rows_written=3 warnings=0") != std::string::npos);

    const auto r2 = cli({"posterior", "--config", cfg, "--answers", w.path("mixed.jsonl")});
    REQUIRE(r2.status == 0);
    CHECK(r2.out.find("pairs=3 rows_written=2 warnings=1") != std::string::npos);

    const auto r3 = cli({"posterior", "--config", cfg, "--samples", "4"});
    REQUIRE(r3.status == 0);
    rows = read_jsonl(w.path("post.jsonl"));
    REQUIRE(rows.size() == 13);
    std::set<std::uint64_t> seeds_of_first;
    for (std::size_t i = 1; i < 5; ++i) {
        CHECK(rows[i].at("row") == 0);
        CHECK(rows[i].at("sample") == i - 1);
        seeds_of_first.insert(rows[i].at("seed").get<std::uint64_t>());
    }
    CHECK(seeds_of_first.size() == 4);

    const auto greedy = cli({"posterior", "--config", cfg, "--token-choice", "greedy"});
    CHECK(greedy.status == 1);
}

TEST_CASE("score mean, stride and missing fields") {
    Workdir w;
    // Deterministic 7-cell joint: reasoning 0..5 = 1,0,1,1,0,0 and answer 1.
    std::vector<double> p(128, 0.0);
    p[0b1011001] = 1.0;
    w.put("det.json", json{{"length", 7}, {"vocab", 2}, {"probs", p}});
    w.put("chains.jsonl", "{\"reasoning\": [1,0,1,1,0,0], \"gold_answer\": [1]}\n");
    const json tmpl = {{"reasoning", {0, 6}}, {"delimiter", json::array()}, {"answer", {6, 7}}};
    const auto cfg = w.put("score.json", json{{"model", {{"exact", "det.json"}}},
                                              {"template", tmpl},
                                              {"chains", "chains.jsonl"},
                                              {"out", w.path("scores.jsonl")}});
    const auto r = cli({"score", "--config", cfg});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    auto rows = read_jsonl(w.path("scores.jsonl"));
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].at("mean_score") == 0.0);
    CHECK(rows[1].at("phi_curve").size() == 7);
    CHECK(r.out.find("chains=1 mean_score=0") != std::string::npos);

    REQUIRE(cli({"score", "--config", cfg, "--stride", "4"}).status == 0);
    rows = read_jsonl(w.path("scores.jsonl"));
    CHECK(rows[1].at("phi_curve").size() == 2);

    w.put("bad.jsonl", "{\"reasoning\": [1,0,1,1,0,0]}\n");
    const auto bad = cli({"score", "--config", cfg, "--chains", w.path("bad.jsonl")});
    CHECK(bad.status == 1);
    CHECK(bad.err.find("gold_answer") != std::string::npos);
}

TEST_CASE("bench writes a row per policy, identically across runs") {
    Workdir w;
    const auto cfg = w.put("bench.json", json{{"task", {{"kind", "markov"}}},
                                              {"policies",
                                               {{{"order", "fixed-k"}, {"k", 1}, {"block_size", 32}},
                                                {{"order", "fixed-k"}, {"k", 2}, {"block_size", 32}},
                                                {{"order", "med"}, {"lambda", 0.2}, {"k_max", 8}, {"block_size", 32}}}},
                                              {"n", 10},
                                              {"out_csv", w.path("a.csv")},
                                              {"out_json", w.path("a.json")}});
    const auto r = cli({"bench", "--config", cfg});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    std::istringstream csv(r.out);
    std::string line;
    int lines = 0;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 4);
    const auto doc = json::parse(slurp(w.path("a.json")));
    CHECK(doc.at("report").at("rows").size() == 3);

    REQUIRE(cli({"bench", "--config", cfg, "--out-csv", w.path("b.csv"), "--out-json", w.path("b.json")}).status == 0);
    CHECK(slurp(w.path("a.csv")).substr(slurp(w.path("a.csv")).find('\n')) ==
          slurp(w.path("b.csv")).substr(slurp(w.path("b.csv")).find('\n')));
    REQUIRE(cli({"bench", "--config", cfg, "--jobs", "3", "--out-csv", w.path("c.csv")}).status == 0);
    CHECK(cli({"bench", "--config", cfg}).out == cli({"bench", "--config", cfg, "--jobs", "2"}).out);
}

TEST_CASE("train-toy") {
    Workdir w;
    w.put("four.json", json{{"length", 2}, {"vocab", 2}, {"probs", {0.4, 0.1, 0.2, 0.3}}});
    const auto cfg = w.put("train.json", json{{"joint", "four.json"}, {"samples", 20000}, {"holdout", 2000},
                                              {"checkpoint", w.path("ckpt.json")}});
    const auto zero = cli({"train-toy", "--config", cfg, "--epochs", "0"});
    REQUIRE_MESSAGE(zero.status == 0, zero.err);
    const auto ckpt = json::parse(slurp(w.path("ckpt.json")));
    CHECK(ckpt.dump().find("tabular-mdlm/1") != std::string::npos);
    const auto zero_result = json::parse(zero.out);
    CHECK(zero_result.at("max_conditional_error").get<double>() == doctest::Approx(0.3));

    const auto trained = cli({"train-toy", "--config", cfg, "--report", w.path("report.json")});
    REQUIRE(trained.status == 0);
    CHECK(json::parse(trained.out).at("max_conditional_error").get<double>() < 0.03);
    CHECK(json::parse(slurp(w.path("report.json"))).contains("result"));

    w.put("data.jsonl", "[0,1]\n[0,1]\n[1,1]\n[0,0]\n");
    const auto data_cfg = w.put("data.json", json{{"data", "data.jsonl"}, {"vocab", {{"size", 2}, {"eos_id", 1}, {"pad_id", 1}}},
                                                  {"epochs", 5}, {"holdout_fraction", 0.25},
                                                  {"checkpoint", w.path("ckpt2.json")}});
    const auto from_data = cli({"train-toy", "--config", data_cfg});
    REQUIRE_MESSAGE(from_data.status == 0, from_data.err);
    CHECK(json::parse(from_data.out).at("heldout_samples") == 1);

    const auto both = w.put("both.json", json{{"data", "data.jsonl"}, {"joint", "four.json"}, {"checkpoint", w.path("c.json")}});
    CHECK(cli({"train-toy", "--config", both}).status == 1);
}

TEST_CASE("tabular checkpoints serve as decode models") {
    Workdir w;
    w.put("four.json", json{{"length", 2}, {"vocab", 2}, {"probs", {0.4, 0.1, 0.2, 0.3}}});
    const auto cfg = w.put("train.json", json{{"joint", "four.json"}, {"samples", 5000}, {"holdout", 0}, {"epochs", 20},
                                              {"checkpoint", w.path("ckpt.json")}});
    REQUIRE(cli({"train-toy", "--config", cfg}).status == 0);
    const auto r = cli({"decode", "--model", "tabular:" + w.path("ckpt.json"), "--out", w.path("t.jsonl")});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(read_jsonl(w.path("t.jsonl")).size() == 2);
}

TEST_CASE("remote models and the protocol check") {
    Workdir w;
    const auto joint = w.put("four.json", json{{"length", 2}, {"vocab", 2}, {"probs", {0.4, 0.1, 0.2, 0.3}}});
    const std::string endpoint = std::string("stdio:") + MDLM_MOCK_SERVER + " --joint " + joint;
    const auto check = cli({"serve-protocol-check", "--endpoint", endpoint, "--timeout-ms", "10000"});
    CHECK_MESSAGE(check.status == 0, check.out);
    CHECK(check.out.find("FAIL") == std::string::npos);
    CHECK(check.out.find("PASS handshake") != std::string::npos);

    const auto local = cli({"decode", "--model", "exact:" + joint, "--out", w.path("l.jsonl"), "--samples", "4",
                            "--token-choice", "sampled"});
    const auto remote = cli({"decode", "--model", "remote:" + endpoint, "--out", w.path("r.jsonl"), "--samples", "4",
                             "--token-choice", "sampled"});
    REQUIRE(local.status == 0);
    REQUIRE_MESSAGE(remote.status == 0, remote.err);
    auto l = read_jsonl(w.path("l.jsonl"));
    auto r = read_jsonl(w.path("r.jsonl"));
    REQUIRE(l.size() == r.size());
    for (std::size_t i = 1; i < l.size(); ++i) CHECK(l[i].at("sequence") == r[i].at("sequence"));

    const auto dead = cli({"decode", "--model", "remote:stdio:/bin/false", "--out", w.path("d.jsonl")});
    CHECK(dead.status == 2);
}

TEST_CASE("help and parse errors") {
    for (const char* cmd : {"decode", "posterior", "score", "bench", "train-toy", "serve-protocol-check"}) {
        const auto r = cli({cmd, "--help"});
        CHECK(r.status == 0);
        CHECK(r.out.find("--") != std::string::npos);
    }
    CHECK(cli({"--help"}).status == 0);
    CHECK(cli({"decode", "--frobnicate"}).status == 1);
    CHECK(cli({}).status == 1);
    CHECK(cli({"serve-protocol-check"}).status == 1);
}
