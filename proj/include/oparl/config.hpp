#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "oparl/errors.hpp"

namespace oparl {

enum class Variant { Oparl, OptimisticOnly, PessimisticOnly, TwoCriticBaseline, RandomMember };
enum class ResetDirection { PesToOpt, OptToPes };
enum class SelectionCriterion { MaxQ, MaxVariance };
enum class Alternation { Episode, Step };

/// How a set of ensemble values is reduced to one number.
enum class Aggregator { Min, Max, RandomMember };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::Oparl: return "oparl";
        case Variant::OptimisticOnly: return "opt-only";
        case Variant::PessimisticOnly: return "pes-only";
        case Variant::TwoCriticBaseline: return "td3";
        case Variant::RandomMember: return "random-member";
    }
    return "?";
}
inline std::string to_string(ResetDirection d) { return d == ResetDirection::PesToOpt ? "pes-to-opt" : "opt-to-pes"; }
inline std::string to_string(SelectionCriterion c) { return c == SelectionCriterion::MaxQ ? "max-q" : "max-variance"; }
inline std::string to_string(Alternation a) { return a == Alternation::Episode ? "episode" : "step"; }

namespace parse {

inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, end};
}

inline double to_double(const std::string& key, const std::string& s) {
    double v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) throw ConfigError(key, "expected a real number, got '" + s + "'");
    return v;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size() || s.empty())
        throw ConfigError(key, "expected a non-negative integer, got '" + s + "'");
    return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline Variant variant(const std::string& key, const std::string& s) {
    for (auto v : {Variant::Oparl, Variant::OptimisticOnly, Variant::PessimisticOnly, Variant::TwoCriticBaseline,
                   Variant::RandomMember})
        if (to_string(v) == s) return v;
    throw ConfigError(key, "unknown variant '" + s + "' (expected oparl|opt-only|pes-only|td3|random-member)");
}

inline ResetDirection reset_direction(const std::string& key, const std::string& s) {
    if (s == "pes-to-opt") return ResetDirection::PesToOpt;
    if (s == "opt-to-pes") return ResetDirection::OptToPes;
    throw ConfigError(key, "unknown reset direction '" + s + "' (expected pes-to-opt|opt-to-pes)");
}

inline SelectionCriterion criterion(const std::string& key, const std::string& s) {
    if (s == "max-q") return SelectionCriterion::MaxQ;
    if (s == "max-variance") return SelectionCriterion::MaxVariance;
    throw ConfigError(key, "unknown criterion '" + s + "' (expected max-q|max-variance)");
}

inline Alternation alternation(const std::string& key, const std::string& s) {
    if (s == "episode") return Alternation::Episode;
    if (s == "step") return Alternation::Step;
    throw ConfigError(key, "unknown alternation '" + s + "' (expected episode|step)");
}

}  // namespace parse

/// Every hyperparameter of one OPARL learner.
struct OparlConfig {
    std::size_t ensemble_size = 5;
    double gamma = 0.99;
    double tau = 0.005;
    std::uint64_t reset_interval = 20000;
    ResetDirection reset_direction = ResetDirection::PesToOpt;
    double exploration_noise = 0.1;  // fraction of the action half-width
    double target_noise = 0.2;
    double target_noise_clip = 0.5;
    std::size_t policy_delay = 2;
    std::size_t behavior_ratio_opt = 1;
    std::size_t behavior_ratio_pes = 1;
    Alternation alternation = Alternation::Episode;
    std::size_t candidate_count = 10;
    SelectionCriterion selection_criterion = SelectionCriterion::MaxQ;
    std::size_t batch_size = 256;
    std::uint64_t learning_starts = 5000;
    std::size_t buffer_capacity = 1000000;
    double lr_actor = 3e-4;
    double lr_critic = 3e-4;
    std::vector<std::size_t> hidden_sizes{256, 256};
    Variant variant = Variant::Oparl;

    friend bool operator==(const OparlConfig&, const OparlConfig&) = default;

    /// Applies variant-implied settings (the two-critic baseline pins N = 2).
    OparlConfig resolved() const {
        OparlConfig c = *this;
        if (c.variant == Variant::TwoCriticBaseline) c.ensemble_size = 2;
        return c;
    }

    void validate() const {
        if (ensemble_size < 1) throw ConfigError("oparl.ensemble_size", "must be at least 1");
        if (variant == Variant::TwoCriticBaseline && ensemble_size != 2)
            throw ConfigError("oparl.ensemble_size", "td3 variant requires exactly 2 critics");
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("oparl.gamma", "must lie in [0, 1)");
        if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("oparl.tau", "must lie in [0, 1]");
        if (reset_interval < 1) throw ConfigError("oparl.reset_interval", "must be positive");
        if (!(exploration_noise >= 0.0)) throw ConfigError("oparl.exploration_noise", "must be non-negative");
        if (!(target_noise >= 0.0)) throw ConfigError("oparl.target_noise", "must be non-negative");
        if (!(target_noise_clip >= 0.0)) throw ConfigError("oparl.target_noise_clip", "must be non-negative");
        if (policy_delay < 1) throw ConfigError("oparl.policy_delay", "must be positive");
        if (behavior_ratio_opt + behavior_ratio_pes == 0)
            throw ConfigError("oparl.behavior_ratio", "at least one side must be positive");
        if (candidate_count < 1) throw ConfigError("oparl.candidate_count", "must be at least 1");
        if (batch_size < 1) throw ConfigError("oparl.batch_size", "must be positive");
        if (buffer_capacity < 1) throw ConfigError("oparl.buffer_capacity", "must be positive");
        if (!(lr_actor > 0.0)) throw ConfigError("oparl.lr_actor", "must be positive");
        if (!(lr_critic > 0.0)) throw ConfigError("oparl.lr_critic", "must be positive");
        if (hidden_sizes.empty()) throw ConfigError("oparl.hidden_sizes", "need at least one hidden layer");
        for (auto h : hidden_sizes)
            if (h == 0) throw ConfigError("oparl.hidden_sizes", "layer sizes must be positive");
    }

    /// Flat key-value form, keys prefixed with "oparl.". Order is fixed.
    std::vector<std::pair<std::string, std::string>> to_key_values() const {
        std::string hidden;
        for (std::size_t i = 0; i < hidden_sizes.size(); ++i)
            hidden += (i ? "," : "") + std::to_string(hidden_sizes[i]);
        return {
            {"oparl.variant", to_string(variant)},
            {"oparl.ensemble_size", std::to_string(ensemble_size)},
            {"oparl.gamma", parse::format_double(gamma)},
            {"oparl.tau", parse::format_double(tau)},
            {"oparl.reset_interval", std::to_string(reset_interval)},
            {"oparl.reset_direction", to_string(reset_direction)},
            {"oparl.exploration_noise", parse::format_double(exploration_noise)},
            {"oparl.target_noise", parse::format_double(target_noise)},
            {"oparl.target_noise_clip", parse::format_double(target_noise_clip)},
            {"oparl.policy_delay", std::to_string(policy_delay)},
            {"oparl.behavior_ratio", std::to_string(behavior_ratio_opt) + ":" + std::to_string(behavior_ratio_pes)},
            {"oparl.alternation", to_string(alternation)},
            {"oparl.candidate_count", std::to_string(candidate_count)},
            {"oparl.selection_criterion", to_string(selection_criterion)},
            {"oparl.batch_size", std::to_string(batch_size)},
            {"oparl.learning_starts", std::to_string(learning_starts)},
            {"oparl.buffer_capacity", std::to_string(buffer_capacity)},
            {"oparl.lr_actor", parse::format_double(lr_actor)},
            {"oparl.lr_critic", parse::format_double(lr_critic)},
            {"oparl.hidden_sizes", hidden},
        };
    }

    /// Sets one "oparl.*" key. Returns false when the key is not an OPARL key.
    bool set(const std::string& key, const std::string& value) {
        using namespace parse;
        if (key == "oparl.variant") variant = parse::variant(key, value);
        else if (key == "oparl.ensemble_size") ensemble_size = to_uint(key, value);
        else if (key == "oparl.gamma") gamma = to_double(key, value);
        else if (key == "oparl.tau") tau = to_double(key, value);
        else if (key == "oparl.reset_interval") reset_interval = to_uint(key, value);
        else if (key == "oparl.reset_direction") reset_direction = parse::reset_direction(key, value);
        else if (key == "oparl.exploration_noise") exploration_noise = to_double(key, value);
        else if (key == "oparl.target_noise") target_noise = to_double(key, value);
        else if (key == "oparl.target_noise_clip") target_noise_clip = to_double(key, value);
        else if (key == "oparl.policy_delay") policy_delay = to_uint(key, value);
        else if (key == "oparl.behavior_ratio") {
            auto parts = split(value, ':');
            if (parts.size() != 2) throw ConfigError(key, "expected opt:pes, got '" + value + "'");
            behavior_ratio_opt = to_uint(key, trim(parts[0]));
            behavior_ratio_pes = to_uint(key, trim(parts[1]));
        } else if (key == "oparl.alternation") alternation = parse::alternation(key, value);
        else if (key == "oparl.candidate_count") candidate_count = to_uint(key, value);
        else if (key == "oparl.selection_criterion") selection_criterion = criterion(key, value);
        else if (key == "oparl.batch_size") batch_size = to_uint(key, value);
        else if (key == "oparl.learning_starts") learning_starts = to_uint(key, value);
        else if (key == "oparl.buffer_capacity") buffer_capacity = to_uint(key, value);
        else if (key == "oparl.lr_actor") lr_actor = to_double(key, value);
        else if (key == "oparl.lr_critic") lr_critic = to_double(key, value);
        else if (key == "oparl.hidden_sizes") {
            hidden_sizes.clear();
            for (const auto& p : split(value, ',')) hidden_sizes.push_back(to_uint(key, trim(p)));
        } else return false;
        return true;
    }
};

/// Which ensemble reduction each part of the learner uses under a variant.
/// Every variant keeps both actors, the alternation and the reset; variants
/// differ only in these reductions, so with one critic they all coincide.
struct VariantRules {
    Aggregator critic_target;
    Aggregator pes_objective;
    Aggregator opt_objective;
    bool candidate_score_pessimistic;  // score behavior candidates by min instead of the criterion
    bool evaluate_optimistic_actor;
};

inline VariantRules rules_for(Variant v) {
    switch (v) {
        case Variant::Oparl:
        case Variant::TwoCriticBaseline:
            return {Aggregator::Min, Aggregator::Min, Aggregator::Max, false, false};
        case Variant::OptimisticOnly:
            return {Aggregator::Max, Aggregator::Max, Aggregator::Max, false, true};
        case Variant::PessimisticOnly:
            return {Aggregator::Min, Aggregator::Min, Aggregator::Min, true, false};
        case Variant::RandomMember:
            return {Aggregator::RandomMember, Aggregator::Min, Aggregator::Max, false, false};
    }
    return {Aggregator::Min, Aggregator::Min, Aggregator::Max, false, false};
}

}  // namespace oparl
