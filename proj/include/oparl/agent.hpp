#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <span>
#include <vector>

#include "oparl/config.hpp"
#include "oparl/envs.hpp"
#include "oparl/neural.hpp"
#include "oparl/replay.hpp"
#include "oparl/rng.hpp"

namespace oparl {

/// N critics Q_i(s, a) -> scalar, their Polyak targets and one Adam state each.
struct EnsembleCritic {
    std::vector<Mlp> critics;
    std::vector<Mlp> targets;
    std::vector<AdamState> adam;

    std::size_t size() const { return critics.size(); }

    static EnsembleCritic create(std::size_t members, std::size_t obs_dim, std::size_t action_dim,
                                 const std::vector<std::size_t>& hidden, double lr, Rng& rng) {
        std::vector<std::size_t> sizes{obs_dim + action_dim};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(1);
        EnsembleCritic e;
        for (std::size_t i = 0; i < members; ++i) {
            e.critics.push_back(init_mlp(sizes, OutputTransform::identity(), rng));
            e.targets.push_back(e.critics.back());
            e.adam.emplace_back(e.critics.back().param_count(), lr);
        }
        return e;
    }
};

/// Stacks states over actions: the critic input layout.
inline Matrix critic_input(const Matrix& states, const Matrix& actions) {
    if (states.cols() != actions.cols())
        throw ShapeError("critic input batch", static_cast<std::size_t>(states.cols()),
                         static_cast<std::size_t>(actions.cols()));
    Matrix x(states.rows() + actions.rows(), states.cols());
    x.topRows(states.rows()) = states;
    x.bottomRows(actions.rows()) = actions;
    return x;
}

/// Per-member values, one row per member, one column per sample.
inline Matrix member_values(const std::vector<Mlp>& nets, const Matrix& states, const Matrix& actions) {
    const Matrix x = critic_input(states, actions);
    Matrix q(static_cast<Eigen::Index>(nets.size()), x.cols());
    for (std::size_t i = 0; i < nets.size(); ++i) q.row(static_cast<Eigen::Index>(i)) = nets[i].forward(x);
    return q;
}

/// Optimistic behavior actor, pessimistic actor and the pessimistic actor's target.
struct ActorPair {
    Mlp pi_opt;
    Mlp pi_pes;
    Mlp pi_pes_target;
    AdamState adam_opt;
    AdamState adam_pes;

    /// Both actors start from the same random draw; see README "Initialization".
    static ActorPair create(std::size_t obs_dim, std::size_t action_dim, double action_scale,
                            const std::vector<std::size_t>& hidden, double lr, Rng& rng) {
        std::vector<std::size_t> sizes{obs_dim};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(action_dim);
        ActorPair a;
        a.pi_pes = init_mlp(sizes, OutputTransform::bounded(action_scale), rng);
        a.pi_opt = a.pi_pes;
        a.pi_pes_target = a.pi_pes;
        a.adam_opt = AdamState(a.pi_opt.param_count(), lr);
        a.adam_pes = AdamState(a.pi_pes.param_count(), lr);
        return a;
    }
};

// ---------------------------------------------------------------------------
// Ensemble reductions

/// Row index of the minimum / maximum per column; ties resolve to the lowest member.
inline std::vector<Eigen::Index> arg_extreme(const Matrix& q, bool maximum) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(q.cols()), 0);
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < q.rows(); ++r)
            if (maximum ? q(r, c) > q(best, c) : q(r, c) < q(best, c)) best = r;
        idx[static_cast<std::size_t>(c)] = best;
    }
    return idx;
}

/// Reduces member values (N x B) to one value per column. RandomMember draws
/// one member per column from `member_rng`; the other reductions never touch it.
inline Vector reduce_members(const Matrix& q, Aggregator agg, Rng* member_rng) {
    Vector out(q.cols());
    switch (agg) {
        case Aggregator::Min: out = q.colwise().minCoeff().transpose(); break;
        case Aggregator::Max: out = q.colwise().maxCoeff().transpose(); break;
        case Aggregator::RandomMember:
            if (!member_rng) throw std::invalid_argument("random-member reduction needs an rng");
            for (Eigen::Index c = 0; c < q.cols(); ++c)
                out(c) = q(static_cast<Eigen::Index>(member_rng->uniform_index(static_cast<std::uint64_t>(q.rows()))), c);
            break;
    }
    return out;
}

/// Bootstrap target r + gamma * (1 - done) * reduced(Q').
inline Vector bootstrap_target(const Batch& batch, const Vector& reduced_next_q, double gamma) {
    return batch.rewards.array() + gamma * (1.0 - batch.dones.array()) * reduced_next_q.array();
}

/// Smoothed target action: clip(pi'(s') + clip(noise, -c, c), -scale, scale), with
/// noise and clip expressed as fractions of the action half-width.
inline Matrix smoothed_target_actions(const Batch& batch, const Mlp& target_actor, double target_noise,
                                      double noise_clip, Rng& noise_rng) {
    const double scale = target_actor.output_transform().scale;
    Matrix a = target_actor.forward(batch.next_states);
    for (Eigen::Index c = 0; c < a.cols(); ++c)
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
            const double eps = std::clamp(noise_rng.normal() * target_noise * scale, -noise_clip * scale,
                                          noise_clip * scale);
            a(r, c) = std::clamp(a(r, c) + eps, -scale, scale);
        }
    return a;
}

/// Target-critic values at (s', a~) for every member, plus the a~ used.
struct TargetEvaluation {
    Matrix next_actions;
    Matrix member_q;  // N x B
};

inline TargetEvaluation evaluate_targets(const Batch& batch, const EnsembleCritic& critic, const ActorPair& actors,
                                         const OparlConfig& cfg, Rng& noise_rng) {
    if (batch.size() == 0) throw std::invalid_argument("target computation needs a nonempty batch");
    TargetEvaluation t;
    t.next_actions =
        smoothed_target_actions(batch, actors.pi_pes_target, cfg.target_noise, cfg.target_noise_clip, noise_rng);
    t.member_q = member_values(critic.targets, batch.next_states, t.next_actions);
    return t;
}

/// y1 = r + gamma (1 - d) min_i Q'_i(s', a~)
inline Vector compute_target_pessimistic(const Batch& batch, const EnsembleCritic& critic, const ActorPair& actors,
                                         const OparlConfig& cfg, Rng& noise_rng) {
    auto t = evaluate_targets(batch, critic, actors, cfg, noise_rng);
    return bootstrap_target(batch, reduce_members(t.member_q, Aggregator::Min, nullptr), cfg.gamma);
}

/// y2 = r + gamma (1 - d) max_i Q'_i(s', a~)
inline Vector compute_target_optimistic(const Batch& batch, const EnsembleCritic& critic, const ActorPair& actors,
                                        const OparlConfig& cfg, Rng& noise_rng) {
    auto t = evaluate_targets(batch, critic, actors, cfg, noise_rng);
    return bootstrap_target(batch, reduce_members(t.member_q, Aggregator::Max, nullptr), cfg.gamma);
}

/// y' = r + gamma (1 - d) Q'_j(s', a~), j uniform per row.
inline Vector compute_target_random_member(const Batch& batch, const EnsembleCritic& critic, const ActorPair& actors,
                                           const OparlConfig& cfg, Rng& noise_rng, Rng& member_rng) {
    auto t = evaluate_targets(batch, critic, actors, cfg, noise_rng);
    return bootstrap_target(batch, reduce_members(t.member_q, Aggregator::RandomMember, &member_rng), cfg.gamma);
}

// ---------------------------------------------------------------------------
// Updates

namespace detail {

inline std::string batch_diagnostics(const Batch& batch, const Vector& y) {
    std::ostringstream os;
    os << "batch=" << batch.size() << " reward[min=" << batch.rewards.minCoeff() << " max=" << batch.rewards.maxCoeff()
       << "] target[min=" << y.minCoeff() << " max=" << y.maxCoeff() << "]";
    return os.str();
}

}  // namespace detail

/// One Adam step per member on mean((y - Q_i(s, a))^2). Returns pre-step losses.
inline std::vector<double> update_critics(const Batch& batch, EnsembleCritic& critic, const Vector& y) {
    if (y.size() != batch.size())
        throw ShapeError("critic targets", static_cast<std::size_t>(batch.size()), static_cast<std::size_t>(y.size()));
    const Matrix x = critic_input(batch.states, batch.actions);
    const double n = static_cast<double>(batch.size());
    std::vector<double> losses(critic.size());
    AlignedBuffer grad;
    ForwardCache cache;
    for (std::size_t i = 0; i < critic.size(); ++i) {
        const Matrix q = critic.critics[i].forward(x, cache);
        const Matrix err = q - y.transpose();
        losses[i] = err.squaredNorm() / n;
        if (!std::isfinite(losses[i]))
            throw NumericAbort("non-finite critic loss: member=" + std::to_string(i) + " " +
                               detail::batch_diagnostics(batch, y));
        critic.critics[i].backward(cache, (2.0 / n) * err, &grad, false);
        adam_apply(critic.critics[i].params(), grad, critic.adam[i]);
    }
    return losses;
}

struct ActorLosses {
    std::optional<double> opt;
    std::optional<double> pes;
};

/// Ascends mean_s agg_i Q_i(s, pi(s)) for one actor (loss = minus that mean).
/// The gradient follows the member picked by the reduction in each row.
/// Returns the pre-step loss.
inline double update_actor(const Batch& batch, Mlp& actor, AdamState& adam, const EnsembleCritic& critic,
                           Aggregator objective) {
    if (objective == Aggregator::RandomMember) throw std::invalid_argument("actor objective must be min or max");
    ForwardCache actor_cache;
    const Matrix actions = actor.forward(batch.states, actor_cache);
    const Matrix x = critic_input(batch.states, actions);
    const auto n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<ForwardCache> caches(critic.size());
    Matrix q(static_cast<Eigen::Index>(critic.size()), n);
    for (std::size_t i = 0; i < critic.size(); ++i)
        q.row(static_cast<Eigen::Index>(i)) = critic.critics[i].forward(x, caches[i]);
    const auto pick = arg_extreme(q, objective == Aggregator::Max);

    double loss = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) loss -= q(pick[static_cast<std::size_t>(c)], c);
    loss *= inv_n;
    if (!std::isfinite(loss)) throw NumericAbort("non-finite actor loss");

    // Each row's gradient flows through its picked member only, so every member
    // backpropagates just the columns it won.
    const auto act_rows = static_cast<Eigen::Index>(actor.output_size());
    Matrix action_grad = Matrix::Zero(act_rows, n);
    for (std::size_t i = 0; i < critic.size(); ++i) {
        std::vector<Eigen::Index> cols;
        for (Eigen::Index c = 0; c < n; ++c)
            if (pick[static_cast<std::size_t>(c)] == static_cast<Eigen::Index>(i)) cols.push_back(c);
        if (cols.empty()) continue;
        ForwardCache won;
        won.input = caches[i].input(Eigen::all, cols);
        for (const auto& out : caches[i].outputs) won.outputs.emplace_back(out(Eigen::all, cols));
        const Matrix g = Matrix::Constant(1, static_cast<Eigen::Index>(cols.size()), -inv_n);
        const Matrix input_grad = critic.critics[i].backward(won, g, nullptr, true);
        action_grad(Eigen::all, cols) = input_grad.bottomRows(act_rows);
    }
    AlignedBuffer grad;
    actor.backward(actor_cache, action_grad, &grad, false);
    adam_apply(actor.params(), grad, adam);
    return loss;
}

/// Deterministic-policy-gradient step for both actors under the variant's objectives.
inline ActorLosses update_actors(const Batch& batch, ActorPair& actors, const EnsembleCritic& critic,
                                 const VariantRules& rules) {
    ActorLosses out;
    out.pes = update_actor(batch, actors.pi_pes, actors.adam_pes, critic, rules.pes_objective);
    out.opt = update_actor(batch, actors.pi_opt, actors.adam_opt, critic, rules.opt_objective);
    return out;
}

/// Polyak step for every critic target and for the pessimistic actor's target.
inline void soft_update_targets(EnsembleCritic& critic, ActorPair& actors, double tau) {
    for (std::size_t i = 0; i < critic.size(); ++i) polyak_update(critic.targets[i], critic.critics[i], tau);
    polyak_update(actors.pi_pes_target, actors.pi_pes, tau);
}

/// Hard parameter copy between the two actors. Targets and optimizer state stay put.
inline void reset_parameters(ActorPair& actors, ResetDirection direction) {
    if (direction == ResetDirection::PesToOpt) hard_copy(actors.pi_opt, actors.pi_pes);
    else hard_copy(actors.pi_pes, actors.pi_opt);
}

// ---------------------------------------------------------------------------
// Behavior

enum class BehaviorActor { Optimistic, Pessimistic };

/// Which actor drives collection. Episode alternation cycles over episodes
/// (0-based index) with `opt` optimistic episodes then `pes` pessimistic ones;
/// step alternation does the same per environment step.
inline BehaviorActor behavior_actor_for(const OparlConfig& cfg, std::uint64_t episode, std::uint64_t env_step) {
    const std::uint64_t period = cfg.behavior_ratio_opt + cfg.behavior_ratio_pes;
    const std::uint64_t k = cfg.alternation == Alternation::Episode ? episode : env_step;
    return (k % period) < cfg.behavior_ratio_opt ? BehaviorActor::Optimistic : BehaviorActor::Pessimistic;
}

struct BehaviorChoice {
    std::vector<double> action;
    Matrix candidates;  // action_dim x K
    Vector scores;      // one per candidate
    Matrix member_q;    // N x K
    std::size_t chosen = 0;
};

enum class CandidateScore { MaxQ, MinQ, Variance };

inline CandidateScore candidate_score_for(const OparlConfig& cfg, const VariantRules& rules) {
    if (rules.candidate_score_pessimistic) return CandidateScore::MinQ;
    return cfg.selection_criterion == SelectionCriterion::MaxQ ? CandidateScore::MaxQ : CandidateScore::Variance;
}

inline Vector score_candidates(const Matrix& member_q, CandidateScore score) {
    switch (score) {
        case CandidateScore::MaxQ: return member_q.colwise().maxCoeff().transpose();
        case CandidateScore::MinQ: return member_q.colwise().minCoeff().transpose();
        case CandidateScore::Variance: {
            const Eigen::RowVectorXd mean = member_q.colwise().mean();
            return (member_q.rowwise() - mean).array().square().colwise().mean().transpose();
        }
    }
    return {};
}

/// Draws K noisy candidates around the behavior actor's action at `state`,
/// scores each against the ensemble and keeps the best (lowest index on ties).
inline BehaviorChoice select_behavior_action(std::span<const double> state, const Mlp& behavior_actor,
                                             const EnsembleCritic& critic, std::size_t candidate_count,
                                             double exploration_noise, CandidateScore score, Rng& noise_rng) {
    if (candidate_count < 1) throw std::invalid_argument("candidate count must be at least 1");
    if (state.size() != behavior_actor.input_size())
        throw ShapeError("behavior state", behavior_actor.input_size(), state.size());
    const double scale = behavior_actor.output_transform().scale;
    const Vector s = to_column(state);
    const Vector base = behavior_actor.forward(Matrix(s)).col(0);
    const auto k = static_cast<Eigen::Index>(candidate_count);

    BehaviorChoice out;
    out.candidates.resize(base.size(), k);
    for (Eigen::Index c = 0; c < k; ++c)
        for (Eigen::Index r = 0; r < base.size(); ++r)
            out.candidates(r, c) = std::clamp(base(r) + noise_rng.normal() * exploration_noise * scale, -scale, scale);

    if (candidate_count == 1) {
        out.scores = Vector::Zero(1);
    } else {
        out.member_q = member_values(critic.critics, s.replicate(1, k), out.candidates);
        out.scores = score_candidates(out.member_q, score);
        for (Eigen::Index c = 1; c < k; ++c)
            if (out.scores(c) > out.scores(static_cast<Eigen::Index>(out.chosen))) out.chosen = static_cast<std::size_t>(c);
    }
    const auto col = out.candidates.col(static_cast<Eigen::Index>(out.chosen));
    out.action.assign(col.data(), col.data() + col.size());
    return out;
}

}  // namespace oparl
