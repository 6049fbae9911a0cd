#include "mdlm/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mdlm/prob.hpp"
#include "mdlm/serialization.hpp"

namespace mdlm {

std::optional<double> PositionReport::logprob_of(TokenId token) const {
    for (const auto& t : top) {
        if (t.token == token) return t.logprob;
    }
    if (auto it = queried.find(token); it != queried.end()) return it->second;
    return std::nullopt;
}

PositionReport make_report(Position position, std::span<const double> probs, const QuerySpec& spec) {
    PositionReport r;
    r.position = position;
    r.entropy = entropy(probs);

    std::vector<TokenId> order;
    for (std::size_t t = 0; t < probs.size(); ++t) {
        if (probs[t] > 0.0) order.push_back(static_cast<TokenId>(t));
    }
    std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return probs[a] > probs[b]; });
    if (order.size() > static_cast<std::size_t>(spec.top_k)) order.resize(static_cast<std::size_t>(spec.top_k));
    r.top.reserve(order.size());
    for (TokenId t : order) r.top.push_back({t, std::log(probs[t])});

    if (auto it = spec.query_tokens.find(position); it != spec.query_tokens.end()) {
        for (TokenId t : it->second) {
            if (t < 0 || static_cast<std::size_t>(t) >= probs.size()) {
                throw ModelError("queried token " + std::to_string(t) + " outside vocab");
            }
            r.queried[t] = safe_log(probs[t]);
        }
    }
    return r;
}

void sample_reports(std::vector<PositionReport>& reports, const SampleSpec& sample) {
    Rng rng(sample.seed);
    std::vector<double> w;
    for (auto& r : reports) {
        if (r.top.empty()) throw ModelError("empty distribution at position " + std::to_string(r.position));
        std::size_t pick = 0;
        if (sample.temperature > 0.0) {
            w.clear();
            const double shift = r.top.front().logprob;
            for (const auto& t : r.top) w.push_back(std::exp((t.logprob - shift) / sample.temperature));
            pick = rng.categorical(w);
        }
        r.sampled = r.top[pick].token;
        r.queried[r.top[pick].token] = r.top[pick].logprob;  // survives top-k truncation
    }
}

std::vector<PositionReport> DenseConditionalModel::query(const MaskedSequence& seq, const QuerySpec& spec) const {
    std::vector<PositionReport> out;
    const auto dists = conditionals(seq);
    if (!spec.sample) {
        for (const auto& cd : dists) out.push_back(make_report(cd.position, cd.probs, spec));
        return out;
    }
    // Sample from the full distribution, then truncate.
    QuerySpec full = spec;
    full.top_k = std::max(spec.top_k, vocab().size);
    for (const auto& cd : dists) out.push_back(make_report(cd.position, cd.probs, full));
    sample_reports(out, *spec.sample);
    for (auto& r : out) {
        if (r.top.size() > static_cast<std::size_t>(spec.top_k)) r.top.resize(static_cast<std::size_t>(spec.top_k));
    }
    return out;
}

std::vector<TokenId> JointTable::assignment(std::size_t index) const {
    std::vector<TokenId> out(positions.size());
    for (std::size_t i = positions.size(); i-- > 0;) {
        out[i] = static_cast<TokenId>(index % static_cast<std::size_t>(vocab));
        index /= static_cast<std::size_t>(vocab);
    }
    return out;
}

std::vector<double> JointTable::marginal(std::size_t i) const {
    std::vector<double> out(static_cast<std::size_t>(vocab), 0.0);
    for (std::size_t idx = 0; idx < probs.size(); ++idx) {
        out[static_cast<std::size_t>(assignment(idx)[i])] += probs[idx];
    }
    return out;
}

ExactJointModel::ExactJointModel(int length, Vocab vocab) : length_(length), vocab_(vocab) {
    vocab_.validate();
    if (length < 1 || length > kMaxLength) {
        throw LengthError("exact joint length must be in [1, " + std::to_string(kMaxLength) + "]");
    }
    if (vocab_.size > kMaxVocab) {
        throw LengthError("exact joint vocab must be <= " + std::to_string(kMaxVocab));
    }
    outcomes_ = 1;
    for (int i = 0; i < length; ++i) outcomes_ *= static_cast<std::size_t>(vocab_.size);
}

std::vector<double> ExactJointModel::checked(std::vector<double> probs) const {
    if (probs.size() != outcomes_) {
        throw LengthMismatch("joint has " + std::to_string(probs.size()) + " entries, expected " +
                             std::to_string(outcomes_));
    }
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("joint probabilities must be finite and >= 0");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw ConfigError("joint sums to " + std::to_string(total) + ", not 1");
    }
    return probs;
}

ExactJointModel ExactJointModel::from_probs(int length, Vocab vocab, std::vector<double> probs) {
    ExactJointModel m(length, vocab);
    m.default_joint_ = m.checked(std::move(probs));
    return m;
}

ExactJointModel ExactJointModel::from_logits(int length, Vocab vocab, std::span<const double> logits) {
    return from_probs(length, vocab, softmax(logits));
}

void ExactJointModel::set_context_joint(std::vector<TokenId> context, std::vector<double> probs) {
    by_context_[std::move(context)] = checked(std::move(probs));
}

namespace {

std::vector<double> table_from(ObjectReader& r, int length, int vocab) {
    const bool has_logits = r.has("logits");
    const bool has_probs = r.has("probs");
    if (has_logits == has_probs) {
        throw ConfigError(r.where() + ": exactly one of 'logits' or 'probs' is required");
    }
    if (has_probs) return r.get<std::vector<double>>("probs");
    const auto logits = r.get<std::vector<double>>("logits");
    std::size_t expected = 1;
    for (int i = 0; i < length; ++i) expected *= static_cast<std::size_t>(vocab);
    if (logits.size() != expected) {
        throw LengthMismatch(r.where() + ": logits has " + std::to_string(logits.size()) + " entries, expected " +
                             std::to_string(expected));
    }
    return softmax(logits);
}

}  // namespace

ExactJointModel ExactJointModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open exact model file " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    ObjectReader r(doc, path.filename().string());
    const int length = r.get<int>("length");
    Vocab vocab;
    vocab.size = r.get<int>("vocab");
    vocab.eos_id = r.get_or<TokenId>("eos_id", vocab.size - 1);
    vocab.pad_id = r.get_or<TokenId>("pad_id", vocab.eos_id);
    ExactJointModel m(length, vocab);
    if (r.has("logits") || r.has("probs")) {
        m.default_joint_ = m.checked(table_from(r, length, vocab.size));
    }
    if (const json* ctxs = r.optional("contexts")) {
        for (const auto& entry : *ctxs) {
            ObjectReader cr(entry, "contexts[]");
            auto ctx = cr.get<std::vector<TokenId>>("context");
            auto table = table_from(cr, length, vocab.size);
            cr.finish();
            m.set_context_joint(std::move(ctx), std::move(table));
        }
    }
    r.finish();
    if (!m.default_joint_ && m.by_context_.empty()) {
        throw ConfigError(path.string() + ": no joint table given");
    }
    return m;
}

const std::vector<double>& ExactJointModel::joint(const std::vector<TokenId>& context) const {
    if (auto it = by_context_.find(context); it != by_context_.end()) return it->second;
    if (default_joint_) return *default_joint_;
    throw ModelError("exact model has no joint for the given context");
}

std::vector<TokenId> ExactJointModel::decode_index(std::size_t index) const {
    std::vector<TokenId> out(static_cast<std::size_t>(length_));
    for (int i = length_; i-- > 0;) {
        out[static_cast<std::size_t>(i)] = static_cast<TokenId>(index % static_cast<std::size_t>(vocab_.size));
        index /= static_cast<std::size_t>(vocab_.size);
    }
    return out;
}

std::size_t ExactJointModel::encode(std::span<const TokenId> tokens) const {
    std::size_t idx = 0;
    for (TokenId t : tokens) idx = idx * static_cast<std::size_t>(vocab_.size) + static_cast<std::size_t>(t);
    return idx;
}

void ExactJointModel::check_sequence(const MaskedSequence& seq) const {
    if (seq.length() != static_cast<std::size_t>(length_)) {
        throw LengthMismatch("canvas length " + std::to_string(seq.length()) + " != model length " +
                             std::to_string(length_));
    }
    for (const auto& c : seq.cells()) {
        if (c && !vocab_.contains(*c)) throw ModelError("filled token outside vocab");
    }
}

namespace {

// Visits every outcome consistent with the filled cells.
template <typename F>
void for_each_consistent(const ExactJointModel& m, const MaskedSequence& seq, const std::vector<double>& joint, F&& f) {
    const auto& cells = seq.cells();
    std::vector<TokenId> x(cells.size());
    for (std::size_t idx = 0; idx < m.outcome_count(); ++idx) {
        const double p = joint[idx];
        if (p == 0.0) continue;
        std::size_t rest = idx;
        bool ok = true;
        for (std::size_t i = cells.size(); i-- > 0;) {
            x[i] = static_cast<TokenId>(rest % static_cast<std::size_t>(m.vocab().size));
            rest /= static_cast<std::size_t>(m.vocab().size);
            if (cells[i] && *cells[i] != x[i]) {
                ok = false;
                break;
            }
        }
        if (ok) f(x, p);
    }
}

}  // namespace

double ExactJointModel::evidence(const MaskedSequence& seq) const {
    check_sequence(seq);
    double total = 0.0;
    for_each_consistent(*this, seq, joint(seq.context()), [&](const std::vector<TokenId>&, double p) { total += p; });
    return total;
}

std::vector<CellDistribution> ExactJointModel::conditionals(const MaskedSequence& seq) const {
    check_sequence(seq);
    const auto masked = masked_positions(seq);
    std::vector<CellDistribution> out;
    if (masked.empty()) return out;
    out.reserve(masked.size());
    for (Position p : masked) out.push_back({p, std::vector<double>(static_cast<std::size_t>(vocab_.size), 0.0)});
    double total = 0.0;
    for_each_consistent(*this, seq, joint(seq.context()), [&](const std::vector<TokenId>& x, double p) {
        total += p;
        for (auto& cd : out) cd.probs[static_cast<std::size_t>(x[static_cast<std::size_t>(cd.position)])] += p;
    });
    if (!(total > 0.0)) {
        throw DegenerateConditional("filled cells have zero probability under the joint");
    }
    for (auto& cd : out) {
        for (double& v : cd.probs) v /= total;
    }
    return out;
}

std::vector<PositionReport> exact_conditionals(const ExactJointModel& m, const MaskedSequence& seq) {
    QuerySpec spec;
    spec.top_k = m.vocab().size;
    return m.query(seq, spec);
}

JointTable exact_joint_conditional(const ExactJointModel& m, const MaskedSequence& seq, std::vector<Position> positions,
                                   std::size_t cap) {
    if (seq.length() != static_cast<std::size_t>(m.sequence_length())) {
        throw LengthMismatch("canvas length differs from model length");
    }
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
    std::size_t size = 1;
    for (Position p : positions) {
        if (p < 0 || static_cast<std::size_t>(p) >= seq.length() || !seq.is_masked(p)) {
            throw InconsistentTrace("position " + std::to_string(p) + " is not a masked cell");
        }
        size *= static_cast<std::size_t>(m.vocab().size);
        if (size > cap) throw CapExceeded("|V|^|A| exceeds enumeration cap " + std::to_string(cap));
    }
    JointTable table{positions, m.vocab().size, std::vector<double>(size, 0.0)};
    double total = 0.0;
    for_each_consistent(m, seq, m.joint(seq.context()), [&](const std::vector<TokenId>& x, double p) {
        std::size_t idx = 0;
        for (Position q : positions) idx = idx * static_cast<std::size_t>(table.vocab) + static_cast<std::size_t>(x[q]);
        table.probs[idx] += p;
        total += p;
    });
    if (!(total > 0.0)) throw DegenerateConditional("filled cells have zero probability under the joint");
    for (double& v : table.probs) v /= total;
    return table;
}

double max_conditional_error(const DenseConditionalModel& model, const ExactJointModel& oracle) {
    const auto L = static_cast<std::size_t>(oracle.sequence_length());
    const auto V = static_cast<std::size_t>(oracle.vocab().size);
    std::size_t states = 1;
    for (std::size_t i = 0; i < L; ++i) states *= V + 1;
    double worst = 0.0;
    std::vector<Cell> cells(L);
    for (std::size_t idx = 0; idx < states; ++idx) {
        std::size_t rest = idx;
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t v = rest % (V + 1);
            rest /= V + 1;
            cells[i] = v == V ? Cell{} : Cell{static_cast<TokenId>(v)};
        }
        const MaskedSequence seq(cells, {});
        if (seq.complete() || oracle.evidence(seq) <= 0.0) continue;
        const auto want = oracle.conditionals(seq);
        const auto got = model.conditionals(seq);
        if (got.size() != want.size()) throw ModelError("model reports a different masked set");
        for (std::size_t k = 0; k < want.size(); ++k) {
            for (std::size_t t = 0; t < V; ++t) worst = std::max(worst, std::abs(got[k].probs[t] - want[k].probs[t]));
        }
    }
    return worst;
}

}  // namespace mdlm
