#include "mdlm/serialization.hpp"

#include <cmath>
#include <limits>

namespace mdlm {

ObjectReader::ObjectReader(const json& object, std::string where) : object_(object), where_(std::move(where)) {
    if (!object_.is_object()) {
        throw ConfigError(where_ + ": expected a JSON object");
    }
}

bool ObjectReader::has(const std::string& key) const { return object_.contains(key); }

const json& ObjectReader::required(const std::string& key) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end()) {
        throw ConfigError(where_ + ": missing required field '" + key + "'");
    }
    return *it;
}

const json* ObjectReader::optional(const std::string& key) {
    seen_.insert(key);
    auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
}

void ObjectReader::finish() const {
    for (const auto& [key, _] : object_.items()) {
        if (!seen_.count(key)) {
            throw ConfigError(where_ + ": unknown field '" + key + "'");
        }
    }
}

json real_to_json(double v) {
    if (std::isfinite(v)) return v;
    if (v == std::numeric_limits<double>::infinity()) return "inf";
    return nullptr;  // -inf (and NaN) travel as null
}

double real_from_json(const json& v) {
    if (v.is_null()) return -std::numeric_limits<double>::infinity();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw ConfigError("expected a number, got string '" + s + "'");
    }
    if (!v.is_number()) throw ConfigError("expected a number");
    return v.get<double>();
}

void to_json(json& j, const Interval& v) { j = json::array({v.begin, v.end}); }

void from_json(const json& j, Interval& v) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("interval must be [begin, end]");
    v.begin = j[0].get<Position>();
    v.end = j[1].get<Position>();
}

void to_json(json& j, const Vocab& v) { j = {{"size", v.size}, {"eos_id", v.eos_id}, {"pad_id", v.pad_id}}; }

void from_json(const json& j, Vocab& v) {
    ObjectReader r(j, "vocab");
    v.size = r.get<int>("size");
    v.eos_id = r.get_or<TokenId>("eos_id", v.size - 1);
    v.pad_id = r.get_or<TokenId>("pad_id", v.eos_id);
    r.finish();
    v.validate();
}

void to_json(json& j, const MaskedSequence& v) {
    json cells = json::array();
    for (const auto& c : v.cells()) {
        cells.push_back(c ? json(*c) : json(nullptr));
    }
    j = {{"length", v.length()}, {"cells", std::move(cells)}, {"context", v.context()}};
}

void from_json(const json& j, MaskedSequence& v) {
    ObjectReader r(j, "sequence");
    const auto& cells_json = r.required("cells");
    std::vector<Cell> cells;
    for (const auto& c : cells_json) {
        cells.push_back(c.is_null() ? Cell{} : Cell{c.get<TokenId>()});
    }
    const auto length = r.get_or<std::size_t>("length", cells.size());
    if (length != cells.size()) throw LengthError("sequence length disagrees with cells");
    v = MaskedSequence(std::move(cells), r.get_or<std::vector<TokenId>>("context", {}));
    r.finish();
}

void to_json(json& j, const Template& v) {
    j = {{"reasoning", v.reasoning}, {"delimiter", v.delimiter}, {"answer", v.answer}};
    if (v.prefilled_answer) j["prefilled_answer"] = *v.prefilled_answer;
}

void from_json(const json& j, Template& v) {
    ObjectReader r(j, "template");
    v.reasoning = r.get<Interval>("reasoning");
    v.delimiter = r.get_or<std::vector<TokenId>>("delimiter", {});
    v.answer = r.get<Interval>("answer");
    if (const json* p = r.optional("prefilled_answer"); p && !p->is_null()) {
        v.prefilled_answer = p->get<std::vector<TokenId>>();
    } else {
        v.prefilled_answer.reset();
    }
    r.finish();
}

OrderKind order_kind_from_string(const std::string& s) {
    if (s == "left-to-right") return OrderKind::LeftToRight;
    if (s == "min-entropy") return OrderKind::AnyOrderMinEntropy;
    if (s == "fixed-k") return OrderKind::FixedK;
    if (s == "med") return OrderKind::Med;
    if (s == "ar-med") return OrderKind::ArMed;
    throw ConfigError("unknown order policy '" + s + "' (left-to-right|min-entropy|fixed-k|med|ar-med)");
}

void to_json(json& j, const DecodePolicy& v) {
    j = json::object();
    j["order"] = to_string(v.order.kind);
    switch (v.order.kind) {
        case OrderKind::FixedK: j["k"] = v.order.k; break;
        case OrderKind::Med:
        case OrderKind::ArMed:
            j["lambda"] = real_to_json(v.order.lambda);
            j["k_max"] = v.order.k_max;
            break;
        default: break;
    }
    j["block_size"] = v.block_size;
    j["token_choice"] = v.token_choice.kind == TokenChoice::Kind::Greedy ? "greedy" : "sampled";
    if (v.token_choice.kind == TokenChoice::Kind::Sampled) j["temperature"] = v.token_choice.temperature;
    j["early_exit_gamma"] = v.early_exit_gamma ? json(*v.early_exit_gamma) : json(nullptr);
    j["max_steps"] = v.max_steps ? json(*v.max_steps) : json(nullptr);
    j["top_k"] = v.top_k;
}

void from_json(const json& j, DecodePolicy& v) {
    ObjectReader r(j, "policy");
    v = DecodePolicy{};
    v.order.kind = order_kind_from_string(r.get<std::string>("order"));
    v.order.k = r.get_or<int>("k", 1);
    if (const json* l = r.optional("lambda"); l && !l->is_null()) v.order.lambda = real_from_json(*l);
    v.order.k_max = r.get_or<int>("k_max", 1);
    v.block_size = r.get_or<int>("block_size", 1);
    const auto choice = r.get_or<std::string>("token_choice", "greedy");
    if (choice == "greedy") {
        v.token_choice = TokenChoice::greedy();
    } else if (choice == "sampled") {
        v.token_choice = TokenChoice::sampled(r.get_or<double>("temperature", 1.0));
    } else {
        throw ConfigError("policy.token_choice must be greedy or sampled");
    }
    r.optional("temperature");
    if (const json* g = r.optional("early_exit_gamma"); g && !g->is_null()) v.early_exit_gamma = g->get<double>();
    if (const json* m = r.optional("max_steps"); m && !m->is_null()) v.max_steps = m->get<int>();
    v.top_k = r.get_or<int>("top_k", 16);
    r.finish();
    v.validate();
}

void to_json(json& j, const DecodedToken& v) {
    j = {{"position", v.position}, {"token", v.token}, {"logprob", real_to_json(v.logprob)}, {"entropy", v.entropy}};
}

void from_json(const json& j, DecodedToken& v) {
    ObjectReader r(j, "decoded");
    v.position = r.get<Position>("position");
    v.token = r.get<TokenId>("token");
    v.logprob = real_from_json(r.required("logprob"));
    v.entropy = r.get<double>("entropy");
    r.finish();
}

Rationale rationale_from_string(const std::string& s) {
    for (auto r : {Rationale::Leftmost, Rationale::MinEntropy, Rationale::FixedK, Rationale::UnderThreshold,
                   Rationale::FallbackMinEntropy, Rationale::FallbackLeftmost}) {
        if (to_string(r) == s) return r;
    }
    throw ConfigError("unknown rationale '" + s + "'");
}

ExitKind exit_kind_from_string(const std::string& s) {
    for (auto e : {ExitKind::Completed, ExitKind::EarlyExit, ExitKind::MaxSteps}) {
        if (to_string(e) == s) return e;
    }
    throw ConfigError("unknown exit kind '" + s + "'");
}

void to_json(json& j, const StepRecord& v) {
    j = {{"decoded", v.decoded},
         {"answer_hub", v.answer_hub ? json(*v.answer_hub) : json(nullptr)},
         {"block_index", v.block_index}};
}

void from_json(const json& j, StepRecord& v) {
    ObjectReader r(j, "step");
    v.decoded = r.get<std::vector<DecodedToken>>("decoded");
    if (const json* h = r.optional("answer_hub"); h && !h->is_null()) {
        v.answer_hub = h->get<double>();
    } else {
        v.answer_hub.reset();
    }
    v.block_index = r.get_or<int>("block_index", 0);
    r.finish();
}

void to_json(json& j, const DecodeTrace& v) {
    j = {{"steps", v.steps},
         {"nfe", v.nfe},
         {"exit", to_string(v.exit)},
         {"exit_step", v.exit_step ? json(*v.exit_step) : json(nullptr)},
         {"schedule_logprob", real_to_json(v.schedule_logprob)},
         {"skipped", v.skipped},
         {"unfilled", v.unfilled}};
}

void from_json(const json& j, DecodeTrace& v) {
    ObjectReader r(j, "trace");
    v.steps = r.get<std::vector<StepRecord>>("steps");
    v.nfe = r.get<int>("nfe");
    v.exit = exit_kind_from_string(r.get<std::string>("exit"));
    if (const json* s = r.optional("exit_step"); s && !s->is_null()) {
        v.exit_step = s->get<int>();
    } else {
        v.exit_step.reset();
    }
    v.schedule_logprob = real_from_json(r.required("schedule_logprob"));
    v.skipped = r.get_or<std::vector<Position>>("skipped", {});
    v.unfilled = r.get_or<std::vector<Position>>("unfilled", {});
    r.finish();
}

}  // namespace mdlm
