#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "oparl/errors.hpp"
#include "oparl/neural.hpp"
#include "oparl/rng.hpp"

namespace oparl {

struct Transition {
    std::vector<double> state;
    std::vector<double> action;
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;  // true terminal only; time-limit truncation stays false

    friend bool operator==(const Transition&, const Transition&) = default;
};

/// Minibatch in column layout: one sample per column.
struct Batch {
    Matrix states;
    Matrix actions;
    Vector rewards;
    Matrix next_states;
    Vector dones;  // 1.0 for terminal rows

    Eigen::Index size() const { return rewards.size(); }
};

/// Fixed-capacity FIFO ring of transitions with uniform sampling (with replacement).
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, std::size_t obs_dim, std::size_t action_dim)
        : capacity_(capacity), obs_dim_(obs_dim), action_dim_(action_dim) {
        if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
        states_.reserve(std::min<std::size_t>(capacity, 1u << 16) * obs_dim);
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return len_; }
    bool empty() const { return len_ == 0; }
    std::size_t obs_dim() const { return obs_dim_; }
    std::size_t action_dim() const { return action_dim_; }

    void push(const Transition& t) {
        if (t.state.size() != obs_dim_) throw ShapeError("transition state", obs_dim_, t.state.size());
        if (t.next_state.size() != obs_dim_)
            throw ShapeError("transition next_state", obs_dim_, t.next_state.size());
        if (t.action.size() != action_dim_) throw ShapeError("transition action", action_dim_, t.action.size());
        if (!std::isfinite(t.reward)) throw ShapeError("transition reward must be finite");

        if (len_ < capacity_) {
            states_.insert(states_.end(), t.state.begin(), t.state.end());
            actions_.insert(actions_.end(), t.action.begin(), t.action.end());
            next_states_.insert(next_states_.end(), t.next_state.begin(), t.next_state.end());
            rewards_.push_back(t.reward);
            dones_.push_back(t.done);
            ++len_;
        } else {
            std::copy(t.state.begin(), t.state.end(), states_.begin() + cursor_ * obs_dim_);
            std::copy(t.action.begin(), t.action.end(), actions_.begin() + cursor_ * action_dim_);
            std::copy(t.next_state.begin(), t.next_state.end(), next_states_.begin() + cursor_ * obs_dim_);
            rewards_[cursor_] = t.reward;
            dones_[cursor_] = t.done;
        }
        cursor_ = (cursor_ + 1) % capacity_;
    }

    /// Stored transition at slot `i` (0 <= i < size()). Slot order is storage
    /// order, not insertion order, once the ring has wrapped.
    Transition at(std::size_t i) const {
        if (i >= len_) throw std::out_of_range("replay slot out of range");
        Transition t;
        t.state.assign(states_.begin() + i * obs_dim_, states_.begin() + (i + 1) * obs_dim_);
        t.action.assign(actions_.begin() + i * action_dim_, actions_.begin() + (i + 1) * action_dim_);
        t.next_state.assign(next_states_.begin() + i * obs_dim_, next_states_.begin() + (i + 1) * obs_dim_);
        t.reward = rewards_[i];
        t.done = dones_[i];
        return t;
    }

    /// Contents from oldest to newest.
    std::vector<Transition> contents() const {
        std::vector<Transition> out;
        out.reserve(len_);
        const std::size_t start = len_ < capacity_ ? 0 : cursor_;
        for (std::size_t k = 0; k < len_; ++k) out.push_back(at((start + k) % len_));
        return out;
    }

    std::vector<std::size_t> sample_indices(std::size_t batch_size, Rng& rng) const {
        if (len_ == 0) throw std::logic_error("cannot sample from an empty replay buffer");
        if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
        std::vector<std::size_t> idx(batch_size);
        for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_index(len_));
        return idx;
    }

    std::vector<Transition> sample(std::size_t batch_size, Rng& rng) const {
        std::vector<Transition> out;
        for (auto i : sample_indices(batch_size, rng)) out.push_back(at(i));
        return out;
    }

    Batch sample_batch(std::size_t batch_size, Rng& rng) const {
        const auto idx = sample_indices(batch_size, rng);
        const auto n = static_cast<Eigen::Index>(batch_size);
        Batch b{Matrix(obs_dim_, n), Matrix(action_dim_, n), Vector(n), Matrix(obs_dim_, n), Vector(n)};
        for (Eigen::Index c = 0; c < n; ++c) {
            const std::size_t i = idx[static_cast<std::size_t>(c)];
            for (std::size_t d = 0; d < obs_dim_; ++d) {
                b.states(d, c) = states_[i * obs_dim_ + d];
                b.next_states(d, c) = next_states_[i * obs_dim_ + d];
            }
            for (std::size_t d = 0; d < action_dim_; ++d) b.actions(d, c) = actions_[i * action_dim_ + d];
            b.rewards(c) = rewards_[i];
            b.dones(c) = dones_[i] ? 1.0 : 0.0;
        }
        return b;
    }

private:
    std::size_t capacity_;
    std::size_t obs_dim_;
    std::size_t action_dim_;
    std::size_t len_ = 0;
    std::size_t cursor_ = 0;
    std::vector<double> states_;
    std::vector<double> actions_;
    std::vector<double> next_states_;
    std::vector<double> rewards_;
    std::vector<bool> dones_;
};

/// Assemble a column batch from explicit transitions (tests, evaluation tooling).
inline Batch make_batch(const std::vector<Transition>& rows) {
    if (rows.empty()) throw std::invalid_argument("batch must be nonempty");
    const auto obs = rows.front().state.size();
    const auto act = rows.front().action.size();
    const auto n = static_cast<Eigen::Index>(rows.size());
    Batch b{Matrix(obs, n), Matrix(act, n), Vector(n), Matrix(obs, n), Vector(n)};
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto& t = rows[static_cast<std::size_t>(c)];
        if (t.state.size() != obs || t.next_state.size() != obs) throw ShapeError("batch row state", obs, t.state.size());
        if (t.action.size() != act) throw ShapeError("batch row action", act, t.action.size());
        b.states.col(c) = to_column(t.state);
        b.next_states.col(c) = to_column(t.next_state);
        b.actions.col(c) = to_column(t.action);
        b.rewards(c) = t.reward;
        b.dones(c) = t.done ? 1.0 : 0.0;
    }
    return b;
}

}  // namespace oparl
