#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oparl/agent.hpp"
#include "test_support.hpp"

using namespace oparl;

namespace {

// Ensemble whose members ignore their input and output constant biases.
EnsembleCritic constant_critic(const std::vector<double>& values, std::size_t obs, std::size_t act) {
    Rng rng(0);
    auto e = EnsembleCritic::create(values.size(), obs, act, {4}, 1e-3, rng);
    for (std::size_t i = 0; i < values.size(); ++i) {
        for (auto* net : {&e.critics[i], &e.targets[i]}) {
            for (auto& p : net->params()) p = 0.0;
            net->bias(net->layer_count() - 1)(0) = values[i];
        }
    }
    return e;
}

Batch random_batch(std::size_t n, std::size_t obs, std::size_t act, Rng& rng, double done_prob = 0.2) {
    std::vector<Transition> rows;
    for (std::size_t i = 0; i < n; ++i) {
        Transition t;
        for (std::size_t d = 0; d < obs; ++d) t.state.push_back(rng.uniform(-1, 1)), t.next_state.push_back(rng.uniform(-1, 1));
        for (std::size_t d = 0; d < act; ++d) t.action.push_back(rng.uniform(-1, 1));
        t.reward = rng.normal();
        t.done = rng.uniform() < done_prob;
        rows.push_back(t);
    }
    return make_batch(rows);
}

struct Fixture {
    OparlConfig cfg;
    EnsembleCritic critic;
    ActorPair actors;
    Fixture(std::size_t n, std::uint64_t seed, std::size_t obs = 3, std::size_t act = 2) {
        Rng rng(seed);
        cfg.ensemble_size = n;
        critic = EnsembleCritic::create(n, obs, act, {16, 16}, 1e-3, rng);
        actors = ActorPair::create(obs, act, 1.0, {16, 16}, 1e-3, rng);
    }
};

}  // namespace

TEST(Targets, ConstantStubEnsemble) {
    auto critic = constant_critic({1.0, 2.0, 3.0}, 2, 1);
    Rng rng(1);
    auto actors = ActorPair::create(2, 1, 1.0, {4}, 1e-3, rng);
    OparlConfig cfg;
    const auto batch = make_batch({{{0.1, 0.2}, {0.3}, 1.0, {0.5, 0.6}, false}, {{0.1, 0.2}, {0.3}, 1.0, {0.5, 0.6}, true}});
    Rng n1(7), n2(7);
    const Vector y1 = compute_target_pessimistic(batch, critic, actors, cfg, n1);
    const Vector y2 = compute_target_optimistic(batch, critic, actors, cfg, n2);
    EXPECT_NEAR(y1(0), 1.99, 1e-12);
    EXPECT_NEAR(y2(0), 3.97, 1e-12);
    EXPECT_EQ(y1(1), 1.0);  // terminal row: no bootstrap
    EXPECT_EQ(y2(1), 1.0);
}

TEST(Targets, OrderingAndSpreadOverRandomRows) {
    Fixture f(5, 11);
    Rng rng(12), member_rng(13);
    const auto batch = random_batch(10000, 3, 2, rng);
    Rng noise(14);
    const auto t = evaluate_targets(batch, f.critic, f.actors, f.cfg, noise);
    const Vector y1 = bootstrap_target(batch, reduce_members(t.member_q, Aggregator::Min, nullptr), f.cfg.gamma);
    const Vector y2 = bootstrap_target(batch, reduce_members(t.member_q, Aggregator::Max, nullptr), f.cfg.gamma);
    const Vector yr =
        bootstrap_target(batch, reduce_members(t.member_q, Aggregator::RandomMember, &member_rng), f.cfg.gamma);
    int violations = 0;
    for (Eigen::Index c = 0; c < batch.size(); ++c) {
        if (!(y1(c) <= yr(c) && yr(c) <= y2(c))) ++violations;
        const double spread = f.cfg.gamma * (1.0 - batch.dones(c)) *
                              (t.member_q.col(c).maxCoeff() - t.member_q.col(c).minCoeff());
        ASSERT_NEAR(y2(c) - y1(c), spread, 1e-12);
    }
    EXPECT_EQ(violations, 0);
}

TEST(Targets, PublicEntryPointsShareSmoothedAction) {
    Fixture f(4, 21);
    Rng rng(22);
    const auto batch = random_batch(64, 3, 2, rng);
    Rng a(5), b(5), c(5), m(6);
    const Vector y1 = compute_target_pessimistic(batch, f.critic, f.actors, f.cfg, a);
    const Vector y2 = compute_target_optimistic(batch, f.critic, f.actors, f.cfg, b);
    const Vector yr = compute_target_random_member(batch, f.critic, f.actors, f.cfg, c, m);
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
        EXPECT_LE(y1(i), yr(i));
        EXPECT_LE(yr(i), y2(i));
    }
}

TEST(Targets, RandomMemberPicksUniformly) {
    Matrix q(5, 100000);
    for (Eigen::Index r = 0; r < 5; ++r) q.row(r).setConstant(static_cast<double>(r));
    Rng rng(31);
    const Vector picked = reduce_members(q, Aggregator::RandomMember, &rng);
    std::vector<std::size_t> counts(5, 0);
    for (Eigen::Index c = 0; c < picked.size(); ++c) ++counts[static_cast<std::size_t>(picked(c))];
    EXPECT_LT(testing_support::chi_square_uniform(counts), testing_support::chi_square_critical_p001(4));
}

TEST(Targets, SingleMemberReductionsCoincide) {
    Rng rng(32);
    Matrix q = Matrix::Random(1, 50);
    EXPECT_EQ(reduce_members(q, Aggregator::Min, nullptr), reduce_members(q, Aggregator::Max, nullptr));
    EXPECT_EQ(reduce_members(q, Aggregator::Min, nullptr), reduce_members(q, Aggregator::RandomMember, &rng));
}

TEST(Targets, SmoothingNoiseIsClippedAndBounded) {
    Rng rng(41);
    auto actors = ActorPair::create(3, 2, 2.0, {8}, 1e-3, rng);
    const auto batch = random_batch(2000, 3, 2, rng);
    Rng noise(42);
    const Matrix a = smoothed_target_actions(batch, actors.pi_pes_target, 0.2, 0.5, noise);
    const Matrix base = actors.pi_pes_target.forward(batch.next_states);
    double max_dev = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        EXPECT_LE(std::abs(a(i)), 2.0);
        max_dev = std::max(max_dev, std::abs(a(i) - base(i)));
    }
    EXPECT_LE(max_dev, 0.5 * 2.0 + 1e-15);
    EXPECT_GT(max_dev, 0.5);  // noise scaled by the half-width actually reaches the clip
}

TEST(Selection, SingleCandidateSkipsScoring) {
    Fixture f(3, 51);
    Rng noise(52);
    const std::vector<double> s{0.1, 0.2, 0.3};
    const auto choice = select_behavior_action(s, f.actors.pi_opt, f.critic, 1, 0.1, CandidateScore::MaxQ, noise);
    EXPECT_EQ(choice.chosen, 0u);
    EXPECT_EQ(choice.candidates.cols(), 1);
    EXPECT_EQ(choice.action[0], choice.candidates(0, 0));
}

TEST(Selection, TiesResolveToFirstCandidate) {
    auto critic = constant_critic({0.5, 0.5}, 3, 2);
    Rng rng(53);
    auto actors = ActorPair::create(3, 2, 1.0, {8}, 1e-3, rng);
    for (auto score : {CandidateScore::MaxQ, CandidateScore::MinQ, CandidateScore::Variance}) {
        const auto choice =
            select_behavior_action(std::vector<double>{0, 0, 0}, actors.pi_opt, critic, 10, 0.3, score, rng);
        EXPECT_EQ(choice.chosen, 0u);
    }
}

TEST(Selection, ChosenCandidateMaximizesEnsembleMax) {
    Fixture f(5, 61);
    Rng rng(62);
    int violations = 0;
    for (int call = 0; call < 300; ++call) {
        std::vector<double> s{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const auto choice = select_behavior_action(s, f.actors.pi_opt, f.critic, 10, 0.3, CandidateScore::MaxQ, rng);
        // Re-score every candidate from scratch, one network call at a time.
        std::vector<double> best(10);
        for (int k = 0; k < 10; ++k) {
            std::vector<double> x = s;
            x.push_back(choice.candidates(0, k));
            x.push_back(choice.candidates(1, k));
            double m = -1e300;
            for (const auto& net : f.critic.critics) m = std::max(m, mlp_forward(net, x)[0]);
            best[static_cast<std::size_t>(k)] = m;
        }
        for (int k = 0; k < 10; ++k)
            if (best[static_cast<std::size_t>(k)] > best[choice.chosen]) ++violations;
    }
    EXPECT_EQ(violations, 0);
}

TEST(Selection, IdenticalCriticsMakeMaxAndMinAgree) {
    Fixture f(3, 71);
    for (std::size_t i = 1; i < 3; ++i) f.critic.critics[i] = f.critic.critics[0];
    Rng a(72), b(72);
    const std::vector<double> s{0.4, -0.2, 0.9};
    const auto hi = select_behavior_action(s, f.actors.pi_opt, f.critic, 10, 0.3, CandidateScore::MaxQ, a);
    const auto lo = select_behavior_action(s, f.actors.pi_opt, f.critic, 10, 0.3, CandidateScore::MinQ, b);
    EXPECT_EQ(hi.chosen, lo.chosen);
    EXPECT_EQ(hi.action, lo.action);
}

TEST(Selection, CandidatesStayInActionBox) {
    Fixture f(2, 73);
    Rng rng(74);
    const auto choice = select_behavior_action(std::vector<double>{0, 0, 0}, f.actors.pi_opt, f.critic, 50, 5.0,
                                               CandidateScore::Variance, rng);
    EXPECT_LE(choice.candidates.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_GE(choice.scores.minCoeff(), 0.0);
}

TEST(Selection, BehaviorAlternation) {
    OparlConfig cfg;
    EXPECT_EQ(behavior_actor_for(cfg, 0, 17), BehaviorActor::Optimistic);
    EXPECT_EQ(behavior_actor_for(cfg, 1, 17), BehaviorActor::Pessimistic);
    EXPECT_EQ(behavior_actor_for(cfg, 2, 0), BehaviorActor::Optimistic);
    cfg.alternation = Alternation::Step;
    cfg.behavior_ratio_opt = 2;
    cfg.behavior_ratio_pes = 1;
    std::vector<BehaviorActor> seq;
    for (std::uint64_t t = 0; t < 6; ++t) seq.push_back(behavior_actor_for(cfg, 0, t));
    using B = BehaviorActor;
    EXPECT_EQ(seq, (std::vector<B>{B::Optimistic, B::Optimistic, B::Pessimistic, B::Optimistic, B::Optimistic,
                                   B::Pessimistic}));
}

TEST(CriticUpdate, AtOptimumNothingMoves) {
    auto critic = constant_critic({2.5, 2.5}, 2, 1);
    Rng rng(81);
    const auto batch = random_batch(32, 2, 1, rng);
    const Vector y = Vector::Constant(32, 2.5);
    const auto before = critic.critics[0].snapshot();
    const auto losses = update_critics(batch, critic, y);
    EXPECT_EQ(losses[0], 0.0);
    EXPECT_EQ(critic.critics[0].snapshot(), before);
}

TEST(CriticUpdate, RepeatedStepsReduceLoss) {
    Fixture f(3, 82);
    Rng rng(83);
    const auto batch = random_batch(128, 3, 2, rng);
    // A smooth regression target the critics can actually fit.
    const Vector y = (batch.states.colwise().sum() - batch.actions.row(0)).transpose();
    const auto first = update_critics(batch, f.critic, y);
    std::vector<double> last;
    for (int i = 0; i < 200; ++i) last = update_critics(batch, f.critic, y);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(last[i], 0.5 * first[i]);
}

TEST(CriticUpdate, NonFiniteTargetAborts) {
    Fixture f(2, 84);
    Rng rng(85);
    const auto batch = random_batch(8, 3, 2, rng);
    Vector y = Vector::Zero(8);
    y(3) = std::nan("");
    EXPECT_THROW(update_critics(batch, f.critic, y), NumericAbort);
}

TEST(ActorUpdate, StepFollowsFiniteDifferenceGradientOfEnsembleObjective) {
    for (auto objective : {Aggregator::Max, Aggregator::Min}) {
        Fixture f(3, 91);
        Rng rng(92);
        const auto batch = random_batch(16, 3, 2, rng);
        auto objective_value = [&](const Mlp& actor) {
            double sum = 0.0;
            for (Eigen::Index c = 0; c < batch.size(); ++c) {
                std::vector<double> s(batch.states.col(c).data(), batch.states.col(c).data() + 3);
                auto a = mlp_forward(actor, s);
                s.insert(s.end(), a.begin(), a.end());
                double best = objective == Aggregator::Max ? -1e300 : 1e300;
                for (const auto& net : f.critic.critics) {
                    const double q = mlp_forward(net, s)[0];
                    best = objective == Aggregator::Max ? std::max(best, q) : std::min(best, q);
                }
                sum += best;
            }
            return sum / static_cast<double>(batch.size());
        };
        Mlp probe = f.actors.pi_pes;
        std::vector<double> fd(probe.param_count());
        for (std::size_t i = 0; i < fd.size(); ++i) {
            const double orig = probe.params()[i];
            probe.params()[i] = orig + 1e-6;
            const double up = objective_value(probe);
            probe.params()[i] = orig - 1e-6;
            const double down = objective_value(probe);
            probe.params()[i] = orig;
            fd[i] = (up - down) / 2e-6;
        }
        const double objective_before = objective_value(f.actors.pi_pes);
        const auto before = f.actors.pi_pes.snapshot();
        const double loss = update_actor(batch, f.actors.pi_pes, f.actors.adam_pes, f.critic, objective);
        EXPECT_NEAR(loss, -objective_before, 1e-12);
        // A first Adam step moves each parameter by about lr * sign(gradient of the objective).
        const auto after = f.actors.pi_pes.snapshot();
        int checked = 0;
        for (std::size_t i = 0; i < fd.size(); ++i) {
            if (std::abs(fd[i]) < 1e-5) continue;
            ++checked;
            const double delta = after.values[i] - before.values[i];
            EXPECT_GT(delta * fd[i], 0.0) << "param " << i;
            EXPECT_NEAR(std::abs(delta), 1e-3, 1e-5);
        }
        EXPECT_GT(checked, 50);
        EXPECT_GT(objective_value(f.actors.pi_pes), objective_before);
    }
}

TEST(ActorUpdate, PairUsesVariantObjectives) {
    Fixture f(3, 93);
    Rng rng(94);
    const auto batch = random_batch(32, 3, 2, rng);
    Fixture g = f;
    const auto losses = update_actors(batch, f.actors, f.critic, rules_for(Variant::Oparl));
    update_actor(batch, g.actors.pi_pes, g.actors.adam_pes, g.critic, Aggregator::Min);
    update_actor(batch, g.actors.pi_opt, g.actors.adam_opt, g.critic, Aggregator::Max);
    EXPECT_EQ(f.actors.pi_pes.snapshot(), g.actors.pi_pes.snapshot());
    EXPECT_EQ(f.actors.pi_opt.snapshot(), g.actors.pi_opt.snapshot());
    ASSERT_TRUE(losses.opt && losses.pes);
    EXPECT_LE(*losses.opt, *losses.pes);  // -mean max <= -mean min from a shared start
    EXPECT_EQ(f.actors.pi_pes_target.snapshot(), g.actors.pi_pes_target.snapshot());
}

TEST(ActorUpdate, SingleCriticMakesActorsCoincide) {
    Fixture f(1, 95);
    Rng rng(96);
    for (int step = 0; step < 20; ++step) {
        const auto batch = random_batch(32, 3, 2, rng);
        update_actors(batch, f.actors, f.critic, rules_for(Variant::Oparl));
    }
    EXPECT_EQ(f.actors.pi_pes.snapshot(), f.actors.pi_opt.snapshot());
    EXPECT_EQ(f.actors.adam_pes, f.actors.adam_opt);
}

TEST(ActorUpdate, MaxCriticActorClimbsLinearCritic) {
    // Q(s, a) = a_0: the optimal bounded action saturates at +scale.
    Rng rng(97);
    auto critic = EnsembleCritic::create(1, 2, 1, {}, 1e-3, rng);
    for (auto& p : critic.critics[0].params()) p = 0.0;
    critic.critics[0].weights(0)(0, 2) = 1.0;
    auto actors = ActorPair::create(2, 1, 1.0, {8}, 1e-2, rng);
    const auto batch = random_batch(64, 2, 1, rng);
    const double start = actors.pi_pes.forward(batch.states).mean();
    for (int i = 0; i < 300; ++i) update_actor(batch, actors.pi_pes, actors.adam_pes, critic, Aggregator::Max);
    const double end = actors.pi_pes.forward(batch.states).mean();
    EXPECT_GT(end, start);
    EXPECT_GT(end, 0.95);
}

TEST(Targets, SoftUpdateTouchesOnlyTargets) {
    Fixture f(3, 101);
    Fixture g = f;
    for (auto& p : f.actors.pi_pes.params()) p += 0.5;
    for (auto& p : f.critic.critics[1].params()) p -= 0.25;
    const auto opt_before = f.actors.pi_opt.snapshot();
    soft_update_targets(f.critic, f.actors, 0.005);
    EXPECT_EQ(f.actors.pi_opt.snapshot(), opt_before);
    const auto tgt = f.actors.pi_pes_target.snapshot().values;
    const auto old = g.actors.pi_pes_target.snapshot().values;
    const auto online = f.actors.pi_pes.snapshot().values;
    for (std::size_t i = 0; i < tgt.size(); ++i) EXPECT_NEAR(tgt[i], 0.005 * online[i] + 0.995 * old[i], 1e-12);
    const auto t0 = f.critic.targets[0].snapshot().values, g0 = g.critic.targets[0].snapshot().values;
    for (std::size_t i = 0; i < t0.size(); ++i) EXPECT_NEAR(t0[i], g0[i], 1e-15);  // online equals target
    EXPECT_NE(f.critic.targets[1].snapshot(), g.critic.targets[1].snapshot());
}

TEST(Reset, PesToOptCopiesOnlyThatActor) {
    Fixture f(2, 111);
    Rng rng(112);
    for (int i = 0; i < 3; ++i) update_actors(random_batch(16, 3, 2, rng), f.actors, f.critic, rules_for(Variant::Oparl));
    const Fixture before = f;
    ASSERT_NE(f.actors.pi_opt.snapshot(), f.actors.pi_pes.snapshot());
    reset_parameters(f.actors, ResetDirection::PesToOpt);
    EXPECT_EQ(f.actors.pi_opt.snapshot(), before.actors.pi_pes.snapshot());
    EXPECT_EQ(f.actors.pi_pes.snapshot(), before.actors.pi_pes.snapshot());
    EXPECT_EQ(f.actors.pi_pes_target.snapshot(), before.actors.pi_pes_target.snapshot());
    EXPECT_EQ(f.actors.adam_opt, before.actors.adam_opt);
    EXPECT_EQ(f.actors.adam_pes, before.actors.adam_pes);
}

TEST(Reset, OptToPesCopiesOnlyThatActor) {
    Fixture f(2, 113);
    Rng rng(114);
    for (int i = 0; i < 3; ++i) update_actors(random_batch(16, 3, 2, rng), f.actors, f.critic, rules_for(Variant::Oparl));
    const Fixture before = f;
    reset_parameters(f.actors, ResetDirection::OptToPes);
    EXPECT_EQ(f.actors.pi_pes.snapshot(), before.actors.pi_opt.snapshot());
    EXPECT_EQ(f.actors.pi_opt.snapshot(), before.actors.pi_opt.snapshot());
    EXPECT_EQ(f.actors.pi_pes_target.snapshot(), before.actors.pi_pes_target.snapshot());
    EXPECT_EQ(f.actors.adam_opt, before.actors.adam_opt);
    EXPECT_EQ(f.actors.adam_pes, before.actors.adam_pes);
}

TEST(Reset, CopyDoesNotAlias) {
    Fixture f(2, 115);
    reset_parameters(f.actors, ResetDirection::PesToOpt);
    f.actors.pi_pes.params()[0] += 1.0;
    EXPECT_NE(f.actors.pi_opt.params()[0], f.actors.pi_pes.params()[0]);
}
