#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oparl/agent.hpp"
#include "oparl/config.hpp"
#include "oparl/envs.hpp"
#include "oparl/neural.hpp"
#include "oparl/replay.hpp"
#include "oparl/rng.hpp"

namespace oparl {

// ---------------------------------------------------------------------------
// Metrics records

enum class RecordKind { Episode, Eval, Reset };

inline std::string to_string(RecordKind k) {
    switch (k) {
        case RecordKind::Episode: return "episode";
        case RecordKind::Eval: return "eval";
        case RecordKind::Reset: return "reset";
    }
    return "?";
}

/// One line of the metrics stream. Absent values serialize as null; the set of
/// fields is fixed.
struct RunMetrics {
    RecordKind kind = RecordKind::Episode;
    std::uint64_t step = 0;
    std::uint64_t episode = 0;
    std::optional<double> episodic_return;
    std::optional<double> eval_return_mean;
    std::optional<double> eval_success_rate;
    std::optional<double> critic_loss_mean;
    std::optional<double> q_min_mean;
    std::optional<double> q_max_mean;
    std::optional<double> ensemble_std_mean;
    std::optional<double> actor_opt_loss;
    std::optional<double> actor_pes_loss;
    bool reset_event = false;
    double wall_ms = 0.0;
};

inline const std::vector<std::string>& metrics_fields() {
    static const std::vector<std::string> fields{
        "kind",           "step",           "episode",     "episodic_return", "eval_return_mean",
        "eval_success_rate", "critic_loss_mean", "q_min_mean", "q_max_mean",   "ensemble_std_mean",
        "actor_opt_loss", "actor_pes_loss", "reset_event", "wall_ms"};
    return fields;
}

inline nlohmann::ordered_json to_json(const RunMetrics& m) {
    auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    nlohmann::ordered_json j;
    j["kind"] = to_string(m.kind);
    j["step"] = m.step;
    j["episode"] = m.episode;
    j["episodic_return"] = opt(m.episodic_return);
    j["eval_return_mean"] = opt(m.eval_return_mean);
    j["eval_success_rate"] = opt(m.eval_success_rate);
    j["critic_loss_mean"] = opt(m.critic_loss_mean);
    j["q_min_mean"] = opt(m.q_min_mean);
    j["q_max_mean"] = opt(m.q_max_mean);
    j["ensemble_std_mean"] = opt(m.ensemble_std_mean);
    j["actor_opt_loss"] = opt(m.actor_opt_loss);
    j["actor_pes_loss"] = opt(m.actor_pes_loss);
    j["reset_event"] = m.reset_event;
    j["wall_ms"] = m.wall_ms;
    return j;
}

/// Serialized record without the wall-clock field: the determinism key.
inline std::string deterministic_line(const RunMetrics& m) {
    auto j = to_json(m);
    j.erase("wall_ms");
    return j.dump();
}

using MetricsSink = std::function<void(const RunMetrics&)>;

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
    std::vector<double> returns;
    std::vector<bool> successes;  // episode ended by termination (goal reached)

    double mean() const {
        return returns.empty() ? 0.0 : std::accumulate(returns.begin(), returns.end(), 0.0) / returns.size();
    }
    /// Sample standard deviation; 0 for a single episode.
    double stddev() const {
        if (returns.size() < 2) return 0.0;
        const double mu = mean();
        double ss = 0.0;
        for (double r : returns) ss += (r - mu) * (r - mu);
        return std::sqrt(ss / static_cast<double>(returns.size() - 1));
    }
    double success_rate() const {
        if (successes.empty()) return 0.0;
        return static_cast<double>(std::count(successes.begin(), successes.end(), true)) / successes.size();
    }
};

/// Runs `actor` greedily (no noise, no candidate search) on `episodes` fresh
/// episodes. Episode k starts from the k-th draw of Rng(seed). Returns are
/// undiscounted sums of rewards.
inline EvalResult evaluate(Env& env, const Mlp& actor, std::size_t episodes, std::uint64_t seed) {
    if (episodes < 1) throw std::invalid_argument("evaluate needs at least one episode");
    if (actor.input_size() != env.spec().obs_dim)
        throw ShapeError("actor input vs environment observation", env.spec().obs_dim, actor.input_size());
    if (actor.output_size() != env.spec().action_dim)
        throw ShapeError("actor output vs environment action", env.spec().action_dim, actor.output_size());
    Rng seeds(seed);
    EvalResult out;
    for (std::size_t e = 0; e < episodes; ++e) {
        auto obs = env.reset(seeds.next());
        double total = 0.0;
        bool success = false;
        while (true) {
            const auto action = mlp_forward(actor, obs);
            auto r = env.step(action);
            total += r.reward;
            if (r.done || r.truncated) {
                success = r.done;
                break;
            }
            obs = std::move(r.next_obs);
        }
        out.returns.push_back(total);
        out.successes.push_back(success);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Learner and training loop

/// Independent random streams of one run, all derived from the run seed.
struct RunStreams {
    Rng init;
    Rng behavior;
    Rng warmup;
    Rng target_noise;
    Rng sampling;
    Rng member;
    Rng env;
    std::uint64_t eval_seed;

    explicit RunStreams(std::uint64_t seed)
        : init(Rng(seed).split("init")),
          behavior(Rng(seed).split("behavior")),
          warmup(Rng(seed).split("warmup")),
          target_noise(Rng(seed).split("target-noise")),
          sampling(Rng(seed).split("sampling")),
          member(Rng(seed).split("member")),
          env(Rng(seed).split("env")),
          eval_seed(Rng(seed).split("eval").next()) {}
};

/// All learned state of one OPARL agent.
struct Learner {
    OparlConfig cfg;
    VariantRules rules;
    EnsembleCritic critic;
    ActorPair actors;

    static Learner create(const EnvSpec& spec, const OparlConfig& config, Rng& init_rng) {
        Learner l;
        l.cfg = config.resolved();
        l.cfg.validate();
        l.rules = rules_for(l.cfg.variant);
        Rng actor_rng = init_rng.split("actor");
        Rng critic_rng = init_rng.split("critic");
        l.actors = ActorPair::create(spec.obs_dim, spec.action_dim, spec.action_scale(), l.cfg.hidden_sizes,
                                     l.cfg.lr_actor, actor_rng);
        l.critic = EnsembleCritic::create(l.cfg.ensemble_size, spec.obs_dim, spec.action_dim, l.cfg.hidden_sizes,
                                          l.cfg.lr_critic, critic_rng);
        return l;
    }

    const Mlp& evaluation_actor() const { return rules.evaluate_optimistic_actor ? actors.pi_opt : actors.pi_pes; }
    const Mlp& actor(BehaviorActor which) const {
        return which == BehaviorActor::Optimistic ? actors.pi_opt : actors.pi_pes;
    }
};

/// Statistics of one gradient step.
struct UpdateStats {
    double critic_loss_mean = 0.0;
    double q_min_mean = 0.0;
    double q_max_mean = 0.0;
    double ensemble_std_mean = 0.0;
    ActorLosses actor;
};

/// One gradient step: critic regression toward the variant's target, then
/// (every policy_delay steps) actor ascent and target tracking.
inline UpdateStats gradient_step(Learner& l, const ReplayBuffer& buffer, std::uint64_t grad_step, RunStreams& rs) {
    const Batch batch = buffer.sample_batch(l.cfg.batch_size, rs.sampling);
    const auto te = evaluate_targets(batch, l.critic, l.actors, l.cfg, rs.target_noise);
    const Vector reduced = reduce_members(te.member_q, l.rules.critic_target, &rs.member);
    const Vector y = bootstrap_target(batch, reduced, l.cfg.gamma);
    if (!y.allFinite())
        throw NumericAbort("non-finite critic target at gradient step " + std::to_string(grad_step) + ": " +
                           detail::batch_diagnostics(batch, y));

    UpdateStats s;
    std::vector<double> losses;
    try {
        losses = update_critics(batch, l.critic, y);
    } catch (const NumericAbort& e) {
        throw NumericAbort(std::string(e.what()) + " at gradient step " + std::to_string(grad_step));
    }
    s.critic_loss_mean = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    s.q_min_mean = te.member_q.colwise().minCoeff().mean();
    s.q_max_mean = te.member_q.colwise().maxCoeff().mean();
    const Eigen::RowVectorXd mean = te.member_q.colwise().mean();
    s.ensemble_std_mean = (te.member_q.rowwise() - mean).array().square().colwise().mean().sqrt().mean();

    if (grad_step % l.cfg.policy_delay == 0) {
        try {
            s.actor = update_actors(batch, l.actors, l.critic, l.rules);
        } catch (const NumericAbort& e) {
            throw NumericAbort(std::string(e.what()) + " at gradient step " + std::to_string(grad_step));
        }
        soft_update_targets(l.critic, l.actors, l.cfg.tau);
    }
    return s;
}

/// Sees the learner just before and just after each actor reset.
using ResetObserver = std::function<void(std::uint64_t env_step, const Learner& before, const Learner& after)>;

struct TrainOptions {
    std::uint64_t total_steps = 30000;
    std::uint64_t eval_interval = 5000;
    std::size_t eval_episodes = 10;
    ResetObserver on_reset;
};

struct TrainResult {
    Learner learner;
    std::uint64_t env_steps = 0;
    std::uint64_t grad_steps = 0;
    std::uint64_t episodes = 0;
    std::uint64_t resets = 0;
    std::optional<EvalResult> final_eval;
};

/// Running means of update statistics between two episode records.
class UpdateWindow {
public:
    void add(const UpdateStats& s) {
        ++n_;
        critic_ += s.critic_loss_mean;
        qmin_ += s.q_min_mean;
        qmax_ += s.q_max_mean;
        std_ += s.ensemble_std_mean;
        if (s.actor.opt) ++n_opt_, opt_ += *s.actor.opt;
        if (s.actor.pes) ++n_pes_, pes_ += *s.actor.pes;
    }
    void fill(RunMetrics& m) const {
        auto avg = [](double sum, std::size_t n) { return n ? std::optional<double>(sum / n) : std::nullopt; };
        m.critic_loss_mean = avg(critic_, n_);
        m.q_min_mean = avg(qmin_, n_);
        m.q_max_mean = avg(qmax_, n_);
        m.ensemble_std_mean = avg(std_, n_);
        m.actor_opt_loss = avg(opt_, n_opt_);
        m.actor_pes_loss = avg(pes_, n_pes_);
    }
    void clear() { *this = UpdateWindow{}; }

private:
    std::size_t n_ = 0, n_opt_ = 0, n_pes_ = 0;
    double critic_ = 0, qmin_ = 0, qmax_ = 0, std_ = 0, opt_ = 0, pes_ = 0;
};

/// Collect/train loop. Each environment step: act (uniform random before
/// learning_starts, candidate search afterwards), store the transition, take
/// one gradient step once learning has started, reset the actors every
/// reset_interval steps and evaluate every eval_interval steps. Records go to
/// `sink` as they happen, so an abort leaves a valid prefix behind.
inline TrainResult train(Env& env, const OparlConfig& config, std::uint64_t seed, const TrainOptions& opts,
                         const MetricsSink& sink = {}) {
    const auto start = std::chrono::steady_clock::now();
    auto wall_ms = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    };
    auto emit = [&](RunMetrics m) {
        m.wall_ms = wall_ms();
        if (sink) sink(m);
    };

    RunStreams rs(seed);
    const EnvSpec& spec = env.spec();
    TrainResult out{Learner::create(spec, config, rs.init)};
    Learner& l = out.learner;
    const CandidateScore score = candidate_score_for(l.cfg, l.rules);
    ReplayBuffer buffer(l.cfg.buffer_capacity, spec.obs_dim, spec.action_dim);
    auto eval_env = make_env(env.name());

    auto run_eval = [&] {
        auto ev = evaluate(*eval_env, l.evaluation_actor(), opts.eval_episodes, rs.eval_seed);
        RunMetrics m;
        m.kind = RecordKind::Eval;
        m.step = out.env_steps;
        m.episode = out.episodes;
        m.eval_return_mean = ev.mean();
        m.eval_success_rate = ev.success_rate();
        emit(m);
        out.final_eval = std::move(ev);
    };

    UpdateWindow window;
    std::vector<double> obs = env.reset(rs.env.next());
    double episode_return = 0.0;

    for (std::uint64_t t = 1; t <= opts.total_steps; ++t) {
        std::vector<double> action(spec.action_dim);
        if (out.env_steps < l.cfg.learning_starts) {
            for (std::size_t d = 0; d < spec.action_dim; ++d)
                action[d] = rs.warmup.uniform(spec.action_low[d], spec.action_high[d]);
        } else {
            const auto which = behavior_actor_for(l.cfg, out.episodes, out.env_steps);
            action = select_behavior_action(obs, l.actor(which), l.critic, l.cfg.candidate_count,
                                            l.cfg.exploration_noise, score, rs.behavior)
                         .action;
        }

        auto r = env.step(action);
        for (double v : r.next_obs)
            if (!std::isfinite(v))
                throw NumericAbort("non-finite observation at env step " + std::to_string(out.env_steps + 1));
        buffer.push(Transition{obs, action, r.reward, r.next_obs, r.done});
        ++out.env_steps;
        episode_return += r.reward;

        if (out.env_steps >= l.cfg.learning_starts) {
            ++out.grad_steps;
            window.add(gradient_step(l, buffer, out.grad_steps, rs));
        }

        if (out.env_steps % l.cfg.reset_interval == 0) {
            if (opts.on_reset) {
                const Learner before = l;
                reset_parameters(l.actors, l.cfg.reset_direction);
                opts.on_reset(out.env_steps, before, l);
            } else {
                reset_parameters(l.actors, l.cfg.reset_direction);
            }
            ++out.resets;
            RunMetrics m;
            m.kind = RecordKind::Reset;
            m.step = out.env_steps;
            m.episode = out.episodes;
            m.reset_event = true;
            emit(m);
        }

        if (r.done || r.truncated) {
            ++out.episodes;
            RunMetrics m;
            m.kind = RecordKind::Episode;
            m.step = out.env_steps;
            m.episode = out.episodes;
            m.episodic_return = episode_return;
            window.fill(m);
            window.clear();
            emit(m);
            obs = env.reset(rs.env.next());
            episode_return = 0.0;
        } else {
            obs = std::move(r.next_obs);
        }

        if (opts.eval_interval > 0 && out.env_steps % opts.eval_interval == 0) run_eval();
    }
    if (opts.total_steps > 0 && (opts.eval_interval == 0 || opts.total_steps % opts.eval_interval != 0)) run_eval();
    return out;
}

}  // namespace oparl
