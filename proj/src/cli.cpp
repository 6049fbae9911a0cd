#include "mdlm/cli.hpp"

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>

#include "mdlm/engine.hpp"
#include "mdlm/metrics.hpp"
#include "mdlm/models.hpp"
#include "mdlm/parallel.hpp"
#include "mdlm/prob.hpp"
#include "mdlm/remote.hpp"
#include "mdlm/scoring.hpp"
#include "mdlm/serialization.hpp"
#include "mdlm/tabular_mdlm.hpp"
#include "mdlm/tasks.hpp"

namespace mdlm {

namespace {

namespace fs = std::filesystem;
using Logger = std::shared_ptr<spdlog::logger>;

json read_json_file(const fs::path& path, const std::string& field) {
    std::ifstream in(path);
    if (!in) throw ConfigError(field + ": cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(field + ": " + path.string() + ": " + e.what());
    }
}

std::vector<json> read_jsonl(const fs::path& path, const std::string& field) {
    std::ifstream in(path);
    if (!in) throw ConfigError(field + ": cannot open '" + path.string() + "'");
    std::vector<json> rows;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw ConfigError(field + ": " + path.string() + " line " + std::to_string(number) + ": " + e.what());
        }
    }
    return rows;
}

std::ofstream open_output(const std::string& path, const std::string& field) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError(field + ": cannot write '" + path + "'");
    return out;
}

template <typename T>
std::optional<T> get_opt(ObjectReader& r, const std::string& key) {
    const json* v = r.optional(key);
    if (v == nullptr || v->is_null()) return std::nullopt;
    try {
        return v->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config." + key + ": " + e.what());
    }
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path q(p);
    return q.is_absolute() ? q : base / q;
}

json sequence_json(const MaskedSequence& seq) {
    json cells = json::array();
    for (const auto& c : seq.cells()) cells.push_back(c ? json(*c) : json(nullptr));
    return cells;
}

Logger make_logger(std::ostream& err) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    auto log = std::make_shared<spdlog::logger>("mdlm", std::move(sink));
    log->set_pattern("[%l] %v");
    log->set_level(spdlog::level::warn);
    if (const char* env = std::getenv("MDLM_DECODE_LOG"); env && *env) {
        log->set_level(spdlog::level::from_str(env));
    }
    return log;
}

// Configuration file plus the directory its relative input paths resolve against.
struct ConfigDoc {
    json doc = json::object();
    fs::path base = ".";
};

ConfigDoc load_config(const std::string& path) {
    ConfigDoc c;
    if (path.empty()) return c;
    c.doc = read_json_file(path, "--config");
    if (!c.doc.is_object()) throw ConfigError("--config: top level must be a JSON object");
    c.base = fs::path(path).parent_path();
    if (c.base.empty()) c.base = ".";
    return c;
}

json parse_model_flag(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw ConfigError("--model must be exact:PATH, tabular:PATH or remote:ENDPOINT");
    const auto kind = spec.substr(0, colon);
    const auto rest = spec.substr(colon + 1);
    if (kind == "exact" || kind == "tabular") return {{kind, fs::absolute(rest).string()}};
    if (kind == "remote") return {{"remote", rest}};
    throw ConfigError("--model kind must be exact, tabular or remote (got '" + kind + "')");
}

std::shared_ptr<const ConditionalModel> load_model(const json& spec, const fs::path& base) {
    ObjectReader r(spec, "model");
    const int kinds = int(r.has("exact")) + int(r.has("tabular")) + int(r.has("remote"));
    if (kinds != 1) throw ConfigError("model: give exactly one of exact, tabular, remote");
    const auto timeout = std::chrono::milliseconds(r.get_or<long>("timeout_ms", 30000));
    std::shared_ptr<const ConditionalModel> model;
    if (r.has("exact")) {
        const auto path = resolve(base, r.get<std::string>("exact"));
        if (!fs::exists(path)) throw ConfigError("model.exact: file not found: " + path.string());
        model = std::make_shared<ExactJointModel>(ExactJointModel::load(path));
    } else if (r.has("tabular")) {
        const auto path = resolve(base, r.get<std::string>("tabular"));
        if (!fs::exists(path)) throw ConfigError("model.tabular: file not found: " + path.string());
        model = std::make_shared<TabularMDLM>(TabularMDLM::load(path));
    } else {
        const auto endpoint = r.get<std::string>("remote");
        r.finish();
        return std::make_shared<RemoteModel>(open_endpoint(endpoint), timeout);
    }
    r.finish();
    return model;
}

std::size_t canvas_length(const std::optional<std::size_t>& configured, const ConditionalModel& model) {
    if (configured) return *configured;
    if (auto L = model.length()) return *L;
    throw ConfigError("config.length: required when the model does not fix a canvas length");
}

// Policy flags shared by decode and posterior; each set flag overwrites one policy field.
struct PolicyFlags {
    std::string order, token_choice;
    int k = 1, kmax = 1, block = 1, max_steps = 1, top_k = 16;
    double lambda = 0.0, gamma = 0.0, temperature = 1.0;
    std::vector<std::pair<CLI::Option*, std::string>> options;

    void add(CLI::App* app) {
        options = {
            {app->add_option("--policy", order, "Order policy: left-to-right|min-entropy|fixed-k|med|ar-med"), "order"},
            {app->add_option("--k", k, "Tokens per step for fixed-k"), "k"},
            {app->add_option("--lambda", lambda, "Entropy threshold in nats for med/ar-med"), "lambda"},
            {app->add_option("--kmax", kmax, "Maximum tokens per step for med/ar-med"), "k_max"},
            {app->add_option("--block", block, "Block size"), "block_size"},
            {app->add_option("--gamma", gamma, "Early-exit threshold on the answer entropy bound, nats"),
             "early_exit_gamma"},
            {app->add_option("--token-choice", token_choice, "greedy|sampled"), "token_choice"},
            {app->add_option("--temperature", temperature, "Sampling temperature"), "temperature"},
            {app->add_option("--max-steps", max_steps, "Step budget"), "max_steps"},
            {app->add_option("--top-k", top_k, "Top candidates requested per cell"), "top_k"},
        };
    }

    void apply(json& cfg, const DecodePolicy& fallback) const {
        bool any = false;
        for (const auto& [opt, _] : options) any = any || opt->count() > 0;
        if (!any) return;
        json& policy = cfg["policy"];
        if (!policy.is_object()) policy = fallback;
        for (const auto& [opt, field] : options) {
            if (opt->count() == 0) continue;
            if (field == "order") policy[field] = order;
            else if (field == "k") policy[field] = k;
            else if (field == "lambda") policy[field] = real_to_json(lambda);
            else if (field == "k_max") policy[field] = kmax;
            else if (field == "block_size") policy[field] = block;
            else if (field == "early_exit_gamma") policy[field] = gamma;
            else if (field == "token_choice") policy[field] = token_choice;
            else if (field == "temperature") policy[field] = temperature;
            else if (field == "max_steps") policy[field] = max_steps;
            else if (field == "top_k") policy[field] = top_k;
        }
    }
};

// Flags every config-driven command accepts.
struct CommonFlags {
    std::string config, model, out;
    std::uint64_t seed = 0;
    int jobs = 1;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* jobs_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    CLI::Option* model_opt = nullptr;

    void add(CLI::App* app, bool with_model = true, bool with_out = true) {
        app->add_option("--config", config, "Run configuration (JSON)");
        if (with_model) model_opt = app->add_option("--model", model, "Model: exact:PATH | tabular:PATH | remote:ENDPOINT");
        if (with_out) out_opt = app->add_option("--out", out, "Output file");
        seed_opt = app->add_option("--seed", seed, "Run seed");
        jobs_opt = app->add_option("--jobs", jobs, "Concurrent sessions");
    }

    ConfigDoc load() const {
        auto c = load_config(config);
        if (model_opt && model_opt->count()) c.doc["model"] = parse_model_flag(model);
        if (out_opt && out_opt->count()) c.doc["out"] = out;
        if (seed_opt->count()) c.doc["seed"] = seed;
        if (jobs_opt->count()) c.doc["jobs"] = jobs;
        return c;
    }
};

struct Env {
    std::ostream& out;
    Logger log;
};

int cmd_decode(const ConfigDoc& c, Env& env) {
    ObjectReader r(c.doc, "config");
    const json model_spec = r.required("model");
    const auto tmpl = get_opt<Template>(r, "template");
    const auto length = get_opt<std::size_t>(r, "length");
    const auto policy = r.get_or<DecodePolicy>("policy", DecodePolicy{});
    const auto seed = r.get_or<std::uint64_t>("seed", 0);
    const auto contexts = r.get_or<std::vector<std::vector<TokenId>>>("contexts", {{}});
    const int samples = r.get_or("samples", 1);
    const int jobs = r.get_or("jobs", 1);
    const auto out_path = r.get<std::string>("out");
    r.finish();
    if (samples < 1) throw ConfigError("config.samples must be >= 1");
    if (contexts.empty()) throw ConfigError("config.contexts must not be empty");

    const auto model = load_model(model_spec, c.base);
    const std::size_t L = canvas_length(length, *model);
    if (tmpl) tmpl->validate(L);

    const std::size_t n = contexts.size() * static_cast<std::size_t>(samples);
    std::vector<json> rows(n);
    std::vector<DecodeTrace> traces(n);
    parallel_for(n, jobs, [&](std::size_t i) {
        const auto& ctx = contexts[i / static_cast<std::size_t>(samples)];
        const auto session_seed = split_seed(seed, i);
        auto canvas = tmpl ? new_canvas(ctx, *tmpl, L) : MaskedSequence(L, ctx);
        auto result = decode(Session(*model, std::move(canvas), tmpl, policy, session_seed));
        env.log->info("session {}: nfe={} exit={}", i, result.trace.nfe, to_string(result.trace.exit));
        rows[i] = {{"session", i},
                   {"context", ctx},
                   {"seed", session_seed},
                   {"sequence", sequence_json(result.sequence)},
                   {"trace", result.trace}};
        traces[i] = std::move(result.trace);
    });

    auto file = open_output(out_path, "config.out");
    file << json({{"config", c.doc}}).dump() << '\n';
    for (const auto& row : rows) file << row.dump() << '\n';

    double nfe = 0.0;
    int completed = 0, exited = 0, capped = 0;
    for (const auto& t : traces) {
        nfe += t.nfe;
        completed += t.exit == ExitKind::Completed ? 1 : 0;
        exited += t.exit == ExitKind::EarlyExit ? 1 : 0;
        capped += t.exit == ExitKind::MaxSteps ? 1 : 0;
    }
    env.out << "sessions=" << n << " mean_nfe=" << format_real(nfe / static_cast<double>(n))
            << " completed=" << completed << " early_exit=" << exited << " max_steps=" << capped << '\n';
    return 0;
}

DecodePolicy default_posterior_policy() {
    DecodePolicy p;
    p.token_choice = TokenChoice::sampled(1.0);
    return p;
}

int cmd_posterior(const ConfigDoc& c, Env& env) {
    ObjectReader r(c.doc, "config");
    const json model_spec = r.required("model");
    const auto tmpl = r.get<Template>("template");
    const auto length = get_opt<std::size_t>(r, "length");
    const auto policy = r.get_or<DecodePolicy>("policy", default_posterior_policy());
    const auto answers_path = r.get<std::string>("answers");
    const int samples = r.get_or("samples", 1);
    const auto seed = r.get_or<std::uint64_t>("seed", 0);
    const int jobs = r.get_or("jobs", 1);
    const auto out_path = r.get<std::string>("out");
    r.finish();
    if (samples < 1) throw ConfigError("config.samples must be >= 1");
    if (policy.token_choice.kind != TokenChoice::Kind::Sampled) {
        throw ConfigError("config.policy.token_choice must be sampled for posterior decoding");
    }

    struct Pair {
        std::vector<TokenId> context;
        std::vector<TokenId> answer;
    };
    std::vector<Pair> pairs;
    const auto raw = read_jsonl(resolve(c.base, answers_path), "config.answers");
    for (std::size_t i = 0; i < raw.size(); ++i) {
        ObjectReader rr(raw[i], "answers[" + std::to_string(i) + "]");
        Pair p{rr.get_or<std::vector<TokenId>>("context", {}), rr.get<std::vector<TokenId>>("answer")};
        rr.finish();
        pairs.push_back(std::move(p));
    }

    const auto model = load_model(model_spec, c.base);
    const std::size_t L = canvas_length(length, *model);
    tmpl.validate(L);

    std::vector<std::vector<json>> rows(pairs.size());
    std::vector<char> skipped(pairs.size(), 0);
    parallel_for(pairs.size(), jobs, [&](std::size_t i) {
        Template t = tmpl;
        t.prefilled_answer = pairs[i].answer;
        t.validate(L);
        for (int j = 0; j < samples; ++j) {
            const auto index = i * static_cast<std::size_t>(samples) + static_cast<std::size_t>(j);
            try {
                const auto draw_seed = split_seed(seed, index);
                auto res = decode_posterior(*model, pairs[i].context, t, L, policy, draw_seed);
                rows[i].push_back({{"row", i},
                                   {"sample", j},
                                   {"seed", draw_seed},
                                   {"context", pairs[i].context},
                                   {"answer", pairs[i].answer},
                                   {"reasoning", res.reasoning},
                                   {"trace", res.trace}});
            } catch (const DegenerateConditional& e) {
                env.log->warn("answers row {} skipped: {}", i, e.what());
                skipped[i] = 1;
                rows[i].clear();
                return;
            }
        }
    });

    auto file = open_output(out_path, "config.out");
    file << json({{"config", c.doc}}).dump() << '\n';
    std::size_t written = 0;
    for (const auto& group : rows) {
        for (const auto& row : group) {
            file << row.dump() << '\n';
            ++written;
        }
    }
    const auto warnings = std::count(skipped.begin(), skipped.end(), 1);
    env.out << "pairs=" << pairs.size() << " rows_written=" << written << " warnings=" << warnings << '\n';
    return 0;
}

int cmd_score(const ConfigDoc& c, Env& env) {
    ObjectReader r(c.doc, "config");
    const json model_spec = r.required("model");
    const auto tmpl = r.get<Template>("template");
    const auto length = get_opt<std::size_t>(r, "length");
    const auto chains_path = r.get<std::string>("chains");
    const int stride = r.get_or("stride", 1);
    const int jobs = r.get_or("jobs", 1);
    const auto out_path = r.get<std::string>("out");
    r.optional("seed");
    r.finish();
    if (stride < 1) throw ConfigError("config.stride must be >= 1");

    struct Chain {
        json id;
        std::vector<TokenId> context, reasoning, gold;
    };
    std::vector<Chain> chains;
    const auto raw = read_jsonl(resolve(c.base, chains_path), "config.chains");
    for (std::size_t i = 0; i < raw.size(); ++i) {
        ObjectReader rr(raw[i], "chains[" + std::to_string(i) + "]");
        Chain ch;
        const json* id = rr.optional("chain_id");
        ch.id = id ? *id : json(i);
        ch.context = rr.get_or<std::vector<TokenId>>("context", {});
        ch.reasoning = rr.get<std::vector<TokenId>>("reasoning");
        ch.gold = rr.get<std::vector<TokenId>>("gold_answer");
        rr.finish();
        chains.push_back(std::move(ch));
    }

    const auto model = load_model(model_spec, c.base);
    const std::size_t L = canvas_length(length, *model);
    tmpl.validate(L);

    std::vector<json> rows(chains.size());
    std::vector<double> means(chains.size());
    parallel_for(chains.size(), jobs, [&](std::size_t i) {
        const auto& ch = chains[i];
        const auto s = chain_filter_score(*model, ch.context, tmpl, L, ch.reasoning, ch.gold, stride);
        json phi = json::array();
        for (double v : s.phi_curve) phi.push_back(real_to_json(v));
        means[i] = s.mean_score;
        rows[i] = {{"chain_id", ch.id},
                   {"phi_curve", std::move(phi)},
                   {"mean_score", real_to_json(s.mean_score)},
                   {"hub_curve", s.hub_curve}};
    });

    auto file = open_output(out_path, "config.out");
    file << json({{"config", c.doc}}).dump() << '\n';
    for (const auto& row : rows) file << row.dump() << '\n';
    double total = 0.0;
    for (double m : means) total += m;
    env.out << "chains=" << chains.size()
            << " mean_score=" << (chains.empty() ? "nan" : format_real(total / static_cast<double>(chains.size())))
            << '\n';
    return 0;
}

int cmd_bench(const ConfigDoc& c, Env& env) {
    ObjectReader r(c.doc, "config");
    const auto task = make_task(r.required("task"));
    const auto policies = r.get<std::vector<DecodePolicy>>("policies");
    BenchOptions options;
    options.n = r.get_or("n", 500);
    options.seed = r.get_or<std::uint64_t>("seed", 0);
    options.jobs = r.get_or("jobs", 1);
    const auto out_json = r.get_or<std::string>("out_json", "");
    const auto out_csv = r.get_or<std::string>("out_csv", "");
    const auto trace_out = r.get_or<std::string>("trace_out", "");
    r.finish();
    options.keep_traces = !trace_out.empty();

    const auto report = benchmark(*task, policies, options);
    if (!out_json.empty()) {
        auto file = open_output(out_json, "config.out_json");
        file << json({{"config", c.doc}, {"report", to_json(report)}}).dump(2) << '\n';
    }
    if (!out_csv.empty()) {
        auto file = open_output(out_csv, "config.out_csv");
        file << "# config: " << c.doc.dump() << '\n' << to_csv(report);
    }
    if (!trace_out.empty()) {
        auto file = open_output(trace_out, "config.trace_out");
        file << json({{"config", c.doc}}).dump() << '\n';
        for (const auto& t : report.traces) {
            file << json({{"policy", report.rows[t.policy_index].policy},
                          {"instance", t.instance},
                          {"answer", t.answer},
                          {"correct", t.correct},
                          {"trace", t.trace}})
                        .dump()
                 << '\n';
        }
    }
    env.out << to_csv(report);
    return 0;
}

std::vector<std::vector<TokenId>> sample_joint(const ExactJointModel& m, std::size_t count, Rng& rng) {
    const auto& probs = m.joint({});
    std::vector<double> cumulative(probs.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) cumulative[i] = (acc += probs[i]);
    std::vector<std::vector<TokenId>> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        const double u = rng.uniform() * acc;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end()) --it;
        out.push_back(m.decode_index(static_cast<std::size_t>(it - cumulative.begin())));
    }
    return out;
}

int cmd_train_toy(const ConfigDoc& c, Env& env) {
    ObjectReader r(c.doc, "config");
    const auto data_path = r.get_or<std::string>("data", "");
    const auto joint_path = r.get_or<std::string>("joint", "");
    TrainOptions options;
    options.epochs = r.get_or("epochs", options.epochs);
    options.learning_rate = r.get_or("learning_rate", options.learning_rate);
    options.seed = r.get_or<std::uint64_t>("seed", 0);
    options.pattern_cap = r.get_or<std::size_t>("pattern_cap", options.pattern_cap);
    const auto samples = r.get_or<std::size_t>("samples", 100000);
    const auto holdout = r.get_or<std::size_t>("holdout", 10000);
    const double holdout_fraction = r.get_or("holdout_fraction", 0.1);
    const auto vocab_cfg = get_opt<Vocab>(r, "vocab");
    const auto checkpoint = r.get<std::string>("checkpoint");
    const auto report_path = r.get_or<std::string>("report", "");
    r.finish();
    if (data_path.empty() == joint_path.empty()) throw ConfigError("config: give exactly one of data, joint");
    if (options.epochs < 0) throw ConfigError("config.epochs must be >= 0");

    std::vector<std::vector<TokenId>> train, held;
    Vocab vocab;
    std::optional<ExactJointModel> oracle;
    if (!joint_path.empty()) {
        const auto path = resolve(c.base, joint_path);
        if (!fs::exists(path)) throw ConfigError("config.joint: file not found: " + path.string());
        oracle = ExactJointModel::load(path);
        vocab = oracle->vocab();
        Rng rng(split_seed(options.seed, 0));
        train = sample_joint(*oracle, samples, rng);
        held = sample_joint(*oracle, holdout, rng);
    } else {
        if (!vocab_cfg) throw ConfigError("config.vocab: required with data");
        vocab = *vocab_cfg;
        std::vector<std::vector<TokenId>> all;
        const auto raw = read_jsonl(resolve(c.base, data_path), "config.data");
        for (std::size_t i = 0; i < raw.size(); ++i) {
            try {
                all.push_back(raw[i].get<std::vector<TokenId>>());
            } catch (const json::exception&) {
                throw ConfigError("config.data line " + std::to_string(i + 1) + ": expected an array of token ids");
            }
        }
        if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
            throw ConfigError("config.holdout_fraction must be in [0, 1)");
        }
        const auto n_held = static_cast<std::size_t>(holdout_fraction * static_cast<double>(all.size()));
        train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_held));
        held.assign(all.end() - static_cast<std::ptrdiff_t>(n_held), all.end());
    }

    TrainReport progress;
    const auto model = train_tabular_mdlm(train, vocab, options, &progress);
    model.save(checkpoint);

    json result = {{"epochs", options.epochs}, {"train_samples", train.size()}, {"heldout_samples", held.size()}};
    if (!held.empty()) {
        result["heldout_masked_loglik"] = real_to_json(expected_masked_loglik(model, held));
    }
    if (oracle) result["max_conditional_error"] = max_conditional_error(model, *oracle);
    env.log->info("trained {} epochs on {} samples", options.epochs, train.size());
    if (!report_path.empty()) {
        auto file = open_output(report_path, "config.report");
        file << json({{"config", c.doc}, {"result", result}}).dump(2) << '\n';
    }
    env.out << result.dump() << '\n';
    return 0;
}

int cmd_protocol_check(const std::string& endpoint, long timeout_ms, std::optional<std::size_t> length, Env& env) {
    auto transport = open_endpoint(endpoint);
    const auto report = protocol_check(*transport, std::chrono::milliseconds(timeout_ms), length);
    for (const auto& check : report.checks) {
        env.out << (check.passed ? "PASS " : "FAIL ") << check.name;
        if (!check.passed && !check.detail.empty()) env.out << ": " << check.detail;
        env.out << '\n';
    }
    env.out << (report.passed() ? "protocol check passed" : "protocol check failed") << '\n';
    return report.passed() ? 0 : 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Masked diffusion LM decoding engine"};
    app.name("mdlm");
    app.require_subcommand(1);

    CommonFlags decode_flags, posterior_flags, score_flags, bench_flags, train_flags;
    PolicyFlags decode_policy, posterior_policy;
    int samples = 1, stride = 1, n = 500, epochs = 100;

    auto* decode_cmd = app.add_subcommand("decode", "Decode sessions and write traces as JSONL");
    decode_flags.add(decode_cmd);
    decode_policy.add(decode_cmd);
    auto* decode_samples = decode_cmd->add_option("--samples", samples, "Sessions per context");

    auto* posterior_cmd = app.add_subcommand("posterior", "Sample reasoning with the answer prefilled");
    posterior_flags.add(posterior_cmd);
    posterior_policy.add(posterior_cmd);
    auto* posterior_samples = posterior_cmd->add_option("--samples", samples, "Posterior draws per answers row");
    std::string answers;
    auto* answers_opt = posterior_cmd->add_option("--answers", answers, "JSONL of {context, answer}");

    auto* score_cmd = app.add_subcommand("score", "Chain-filter scores for reasoning chains");
    score_flags.add(score_cmd);
    auto* stride_opt = score_cmd->add_option("--stride", stride, "Reveal this many reasoning tokens per point");
    std::string chains;
    auto* chains_opt = score_cmd->add_option("--chains", chains, "JSONL of {context, reasoning, gold_answer}");

    auto* bench_cmd = app.add_subcommand("bench", "Accuracy / NFE report over a synthetic task");
    bench_flags.add(bench_cmd, false, false);
    std::string out_json, out_csv, trace_out;
    auto* n_opt = bench_cmd->add_option("--n", n, "Instances per policy");
    auto* out_json_opt = bench_cmd->add_option("--out-json", out_json, "JSON report path");
    auto* out_csv_opt = bench_cmd->add_option("--out-csv", out_csv, "CSV report path");
    auto* trace_out_opt = bench_cmd->add_option("--trace-out", trace_out, "Per-trace JSONL dump");

    auto* train_cmd = app.add_subcommand("train-toy", "Train a tabular MDLM and write a checkpoint");
    train_flags.add(train_cmd, false, false);
    std::string checkpoint, report;
    auto* epochs_opt = train_cmd->add_option("--epochs", epochs, "Training epochs");
    auto* checkpoint_opt = train_cmd->add_option("--checkpoint", checkpoint, "Checkpoint output path");
    auto* report_opt = train_cmd->add_option("--report", report, "Training report output path");

    auto* check_cmd = app.add_subcommand("serve-protocol-check", "Run the wire-protocol conformance checks");
    std::string endpoint;
    long timeout_ms = 30000;
    std::size_t check_length = 0;
    check_cmd->add_option("--endpoint", endpoint, "tcp://HOST:PORT or stdio:COMMAND ARGS...")->required();
    check_cmd->add_option("--timeout-ms", timeout_ms, "Per-request timeout");
    auto* length_opt = check_cmd->add_option("--length", check_length, "Canvas length to probe with");

    std::vector<const char*> argv{"mdlm"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 1;
    }

    Env env{out, make_logger(err)};
    try {
        if (*decode_cmd) {
            auto c = decode_flags.load();
            decode_policy.apply(c.doc, DecodePolicy{});
            if (decode_samples->count()) c.doc["samples"] = samples;
            return cmd_decode(c, env);
        }
        if (*posterior_cmd) {
            auto c = posterior_flags.load();
            posterior_policy.apply(c.doc, default_posterior_policy());
            if (posterior_samples->count()) c.doc["samples"] = samples;
            if (answers_opt->count()) c.doc["answers"] = fs::absolute(answers).string();
            return cmd_posterior(c, env);
        }
        if (*score_cmd) {
            auto c = score_flags.load();
            if (stride_opt->count()) c.doc["stride"] = stride;
            if (chains_opt->count()) c.doc["chains"] = fs::absolute(chains).string();
            return cmd_score(c, env);
        }
        if (*bench_cmd) {
            auto c = bench_flags.load();
            if (n_opt->count()) c.doc["n"] = n;
            if (out_json_opt->count()) c.doc["out_json"] = out_json;
            if (out_csv_opt->count()) c.doc["out_csv"] = out_csv;
            if (trace_out_opt->count()) c.doc["trace_out"] = trace_out;
            return cmd_bench(c, env);
        }
        if (*train_cmd) {
            auto c = train_flags.load();
            if (epochs_opt->count()) c.doc["epochs"] = epochs;
            if (checkpoint_opt->count()) c.doc["checkpoint"] = checkpoint;
            if (report_opt->count()) c.doc["report"] = report;
            return cmd_train_toy(c, env);
        }
        if (*check_cmd) {
            return cmd_protocol_check(endpoint, timeout_ms,
                                      length_opt->count() ? std::optional<std::size_t>(check_length) : std::nullopt,
                                      env);
        }
    } catch (const ModelError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const InconsistentTrace& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const NoProgress& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const EmptyCandidates& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

}  // namespace mdlm
