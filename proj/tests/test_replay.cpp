#include <gtest/gtest.h>

#include <deque>
#include <vector>

#include "oparl/replay.hpp"
#include "test_support.hpp"

using namespace oparl;

namespace {

Transition tagged(double id) { return {{id}, {-id}, id * 10.0, {id + 0.5}, static_cast<int>(id) % 3 == 0}; }

std::vector<double> ids(const std::vector<Transition>& ts) {
    std::vector<double> out;
    for (const auto& t : ts) out.push_back(t.state[0]);
    return out;
}

}  // namespace

TEST(Replay, CapacityTwoKeepsNewestTwo) {
    ReplayBuffer buf(2, 1, 1);
    buf.push(tagged(1));  // a
    buf.push(tagged(2));  // b
    buf.push(tagged(3));  // c
    EXPECT_EQ(buf.size(), 2u);
    EXPECT_EQ(ids(buf.contents()), (std::vector<double>{2, 3}));
}

TEST(Replay, FifoOverwriteExhaustiveAtCapacityFour) {
    // Every push count up to three full wraps, against a bounded deque model.
    for (int n = 0; n <= 12; ++n) {
        ReplayBuffer buf(4, 1, 1);
        std::deque<Transition> model;
        for (int i = 1; i <= n; ++i) {
            buf.push(tagged(i));
            model.push_back(tagged(i));
            if (model.size() > 4) model.pop_front();
            ASSERT_EQ(buf.size(), model.size());
            ASSERT_EQ(buf.contents(), std::vector<Transition>(model.begin(), model.end())) << "after push " << i;
        }
    }
}

TEST(Replay, StoredFieldsRoundTrip) {
    ReplayBuffer buf(3, 2, 1);
    Transition t{{0.25, -1.0}, {0.5}, -3.0, {0.3, -0.9}, true};
    buf.push(t);
    EXPECT_EQ(buf.at(0), t);
    Rng rng(1);
    const auto b = buf.sample_batch(4, rng);
    for (Eigen::Index c = 0; c < 4; ++c) {
        EXPECT_EQ(b.states(1, c), -1.0);
        EXPECT_EQ(b.next_states(0, c), 0.3);
        EXPECT_EQ(b.actions(0, c), 0.5);
        EXPECT_EQ(b.rewards(c), -3.0);
        EXPECT_EQ(b.dones(c), 1.0);
    }
}

TEST(Replay, SampleFromEmptyFails) {
    ReplayBuffer buf(4, 1, 1);
    Rng rng(0);
    EXPECT_THROW(buf.sample(1, rng), std::logic_error);
    EXPECT_THROW(buf.sample_batch(1, rng), std::logic_error);
}

TEST(Replay, RejectsMalformedTransitions) {
    ReplayBuffer buf(4, 2, 1);
    EXPECT_THROW(buf.push({{1.0}, {0.0}, 0.0, {1.0, 2.0}, false}), ShapeError);
    EXPECT_THROW(buf.push({{1.0, 2.0}, {0.0, 1.0}, 0.0, {1.0, 2.0}, false}), ShapeError);
    EXPECT_THROW(buf.push({{1.0, 2.0}, {0.0}, std::nan(""), {1.0, 2.0}, false}), ShapeError);
    EXPECT_EQ(buf.size(), 0u);
}

TEST(Replay, SamplingIsUniformChiSquare) {
    ReplayBuffer buf(10, 1, 1);
    for (int i = 0; i < 10; ++i) buf.push(tagged(i));
    Rng rng(2024);
    std::vector<std::size_t> counts(10, 0);
    for (auto i : buf.sample_indices(100000, rng)) ++counts[i];
    EXPECT_LT(testing_support::chi_square_uniform(counts), testing_support::chi_square_critical_p001(9));
}

TEST(Replay, SamplingIsDeterministicPerSeed) {
    ReplayBuffer buf(10, 1, 1);
    for (int i = 0; i < 7; ++i) buf.push(tagged(i));
    Rng a(5), b(5);
    EXPECT_EQ(buf.sample_indices(64, a), buf.sample_indices(64, b));
}

TEST(Replay, MakeBatchLaysOutColumns) {
    const auto b = make_batch({tagged(1), tagged(3)});
    EXPECT_EQ(b.size(), 2);
    EXPECT_EQ(b.states(0, 1), 3.0);
    EXPECT_EQ(b.dones(0), 0.0);
    EXPECT_EQ(b.dones(1), 1.0);
}
