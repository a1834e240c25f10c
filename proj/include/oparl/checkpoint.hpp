#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oparl/errors.hpp"
#include "oparl/neural.hpp"
#include "oparl/train.hpp"

namespace oparl {

inline constexpr int kCheckpointVersion = 1;

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Every network of a learner plus provenance: the resolved config echo and
/// the step counters at save time.
struct Checkpoint {
    std::string env;
    std::uint64_t env_steps = 0;
    std::uint64_t grad_steps = 0;
    KeyValues config;
    Mlp pi_opt;
    Mlp pi_pes;
    Mlp pi_pes_target;
    std::vector<Mlp> critics;
    std::vector<Mlp> critic_targets;

    const std::string* config_value(const std::string& key) const {
        for (const auto& [k, v] : config)
            if (k == key) return &v;
        return nullptr;
    }

    /// Actor used for evaluation: the optimistic actor for opt-only runs, the
    /// pessimistic actor otherwise.
    const Mlp& evaluation_actor() const {
        const auto* v = config_value("oparl.variant");
        if (v && *v == to_string(Variant::OptimisticOnly)) return pi_opt;
        return pi_pes;
    }
};

inline Checkpoint make_checkpoint(const std::string& env, const TrainResult& r, KeyValues config) {
    const auto& l = r.learner;
    return Checkpoint{env,           r.env_steps,        r.grad_steps,          std::move(config), l.actors.pi_opt,
                      l.actors.pi_pes, l.actors.pi_pes_target, l.critic.critics, l.critic.targets};
}

inline nlohmann::ordered_json to_json(const Checkpoint& c) {
    nlohmann::ordered_json doc;
    doc["format_version"] = kCheckpointVersion;
    doc["kind"] = "oparl-checkpoint";
    doc["env"] = c.env;
    doc["env_steps"] = c.env_steps;
    doc["grad_steps"] = c.grad_steps;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : c.config) cfg[k] = v;
    doc["config"] = cfg;
    nlohmann::ordered_json nets;
    nets["pi_opt"] = to_json(c.pi_opt);
    nets["pi_pes"] = to_json(c.pi_pes);
    nets["pi_pes_target"] = to_json(c.pi_pes_target);
    nets["critics"] = nlohmann::ordered_json::array();
    for (const auto& n : c.critics) nets["critics"].push_back(to_json(n));
    nets["critic_targets"] = nlohmann::ordered_json::array();
    for (const auto& n : c.critic_targets) nets["critic_targets"].push_back(to_json(n));
    doc["networks"] = nets;
    return doc;
}

inline Checkpoint checkpoint_from_json(const nlohmann::ordered_json& doc) {
    try {
        if (!doc.contains("format_version")) throw FormatError("checkpoint has no format_version");
        const int version = doc.at("format_version").get<int>();
        if (version != kCheckpointVersion)
            throw FormatError("unsupported checkpoint format_version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
        if (doc.at("kind").get<std::string>() != "oparl-checkpoint") throw FormatError("not an oparl checkpoint");
        Checkpoint c;
        c.env = doc.at("env").get<std::string>();
        c.env_steps = doc.at("env_steps").get<std::uint64_t>();
        c.grad_steps = doc.at("grad_steps").get<std::uint64_t>();
        for (const auto& [k, v] : doc.at("config").items()) c.config.emplace_back(k, v.get<std::string>());
        const auto& nets = doc.at("networks");
        c.pi_opt = mlp_from_json(nets.at("pi_opt"));
        c.pi_pes = mlp_from_json(nets.at("pi_pes"));
        c.pi_pes_target = mlp_from_json(nets.at("pi_pes_target"));
        for (const auto& n : nets.at("critics")) c.critics.push_back(mlp_from_json(n));
        for (const auto& n : nets.at("critic_targets")) c.critic_targets.push_back(mlp_from_json(n));
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    f << to_json(c).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open checkpoint " + path);
    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint " + path + " is not valid JSON: " + e.what());
    }
    return checkpoint_from_json(doc);
}

}  // namespace oparl
