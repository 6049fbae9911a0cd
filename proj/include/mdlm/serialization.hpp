#pragma once

#include <initializer_list>
#include <set>
#include <string>

#include "json.hpp"
#include "mdlm/core.hpp"

namespace mdlm {

using json = nlohmann::json;

/// Strict reader for JSON objects: rejects unknown keys once `finish()` runs.
class ObjectReader {
public:
    ObjectReader(const json& object, std::string where);

    [[nodiscard]] bool has(const std::string& key) const;
    const json& required(const std::string& key);
    const json* optional(const std::string& key);

    template <typename T>
    T get(const std::string& key) {
        const json& v = required(key);
        try {
            return v.get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    template <typename T>
    T get_or(const std::string& key, T fallback) {
        const json* v = optional(key);
        if (v == nullptr || v->is_null()) return fallback;
        try {
            return v->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    /// Throws ConfigError naming the first key that was never read.
    void finish() const;

    [[nodiscard]] const std::string& where() const { return where_; }

private:
    const json& object_;
    std::string where_;
    std::set<std::string> seen_;
};

// Log-probabilities may be -inf; JSON carries those as null.
json real_to_json(double v);
double real_from_json(const json& v);

void to_json(json& j, const Interval& v);
void from_json(const json& j, Interval& v);
void to_json(json& j, const Vocab& v);
void from_json(const json& j, Vocab& v);
void to_json(json& j, const MaskedSequence& v);
void from_json(const json& j, MaskedSequence& v);
void to_json(json& j, const Template& v);
void from_json(const json& j, Template& v);
void to_json(json& j, const DecodePolicy& v);
void from_json(const json& j, DecodePolicy& v);
void to_json(json& j, const DecodedToken& v);
void from_json(const json& j, DecodedToken& v);
void to_json(json& j, const StepRecord& v);
void from_json(const json& j, StepRecord& v);
void to_json(json& j, const DecodeTrace& v);
void from_json(const json& j, DecodeTrace& v);

OrderKind order_kind_from_string(const std::string& s);
Rationale rationale_from_string(const std::string& s);
ExitKind exit_kind_from_string(const std::string& s);

}  // namespace mdlm
