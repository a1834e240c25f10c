#pragma once

// Analytic continuous-control tasks. All three integrate with semi-implicit
// Euler (velocity first, then position) and clip actions inside step().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "oparl/errors.hpp"
#include "oparl/rng.hpp"

namespace oparl {

struct EnvSpec {
    std::size_t obs_dim = 0;
    std::size_t action_dim = 0;
    std::vector<double> action_low;
    std::vector<double> action_high;
    std::size_t max_episode_steps = 0;

    /// Half-width of the (symmetric) action box.
    double action_scale() const { return 0.5 * (action_high.front() - action_low.front()); }
};

struct StepResult {
    std::vector<double> next_obs;
    double reward = 0.0;
    bool done = false;       // terminal by environment rule
    bool truncated = false;  // step limit reached, not terminal
    bool saturated = false;  // the requested action was clipped
};

class Env {
public:
    virtual ~Env() = default;

    virtual std::string name() const = 0;
    const EnvSpec& spec() const { return spec_; }

    std::vector<double> reset(std::uint64_t seed) {
        Rng rng(seed);
        sample_initial_state(rng);
        steps_ = 0;
        finished_ = false;
        return observe();
    }

    StepResult step(std::span<const double> action) {
        if (finished_) throw std::logic_error(name() + ": step() after episode end without reset()");
        if (action.size() != spec_.action_dim) throw ShapeError(name() + " action", spec_.action_dim, action.size());
        std::vector<double> clipped(action.begin(), action.end());
        bool saturated = false;
        for (std::size_t i = 0; i < clipped.size(); ++i) {
            const double c = std::clamp(clipped[i], spec_.action_low[i], spec_.action_high[i]);
            saturated = saturated || c != clipped[i];
            clipped[i] = c;
        }
        StepResult r = advance(clipped);
        r.saturated = saturated;
        ++steps_;
        if (!r.done && steps_ >= spec_.max_episode_steps) r.truncated = true;
        finished_ = r.done || r.truncated;
        r.next_obs = observe();
        return r;
    }

    std::size_t elapsed_steps() const { return steps_; }
    bool finished() const { return finished_; }

    /// Raw internal state (layout documented per environment).
    virtual std::vector<double> state() const = 0;
    /// Overwrite the internal state and start a fresh episode from it.
    virtual void set_state(std::span<const double> s) = 0;

protected:
    explicit Env(EnvSpec spec) : spec_(std::move(spec)) {}

    virtual void sample_initial_state(Rng& rng) = 0;
    virtual StepResult advance(std::span<const double> action) = 0;
    virtual std::vector<double> observe() const = 0;

    void restart_episode() {
        steps_ = 0;
        finished_ = false;
    }

private:
    EnvSpec spec_;
    std::size_t steps_ = 0;
    bool finished_ = true;
};

/// Point mass on a plane. State (x, y, vx, vy); action is a force in [-1, 1]^2.
/// Reward is minus the distance to the goal (1, 1) each step, plus a +10 bonus
/// and termination once within 0.1 of the goal.
class PointMass2D final : public Env {
public:
    static constexpr double kDamping = 0.95;
    static constexpr double kGain = 0.1;
    static constexpr double kGoalX = 1.0;
    static constexpr double kGoalY = 1.0;
    static constexpr double kGoalRadius = 0.1;
    static constexpr double kGoalBonus = 10.0;
    static constexpr double kStartHalfWidth = 0.1;

    PointMass2D() : Env(EnvSpec{4, 2, {-1.0, -1.0}, {1.0, 1.0}, 200}) {}

    std::string name() const override { return "pointmass"; }
    std::vector<double> state() const override { return {x_, y_, vx_, vy_}; }
    void set_state(std::span<const double> s) override {
        if (s.size() != 4) throw ShapeError("pointmass state", 4, s.size());
        x_ = s[0], y_ = s[1], vx_ = s[2], vy_ = s[3];
        restart_episode();
    }

protected:
    void sample_initial_state(Rng& rng) override {
        x_ = rng.uniform(-kStartHalfWidth, kStartHalfWidth);
        y_ = rng.uniform(-kStartHalfWidth, kStartHalfWidth);
        vx_ = vy_ = 0.0;
    }

    StepResult advance(std::span<const double> a) override {
        vx_ = kDamping * vx_ + kGain * a[0];
        vy_ = kDamping * vy_ + kGain * a[1];
        x_ += vx_;
        y_ += vy_;
        const double dist = std::hypot(x_ - kGoalX, y_ - kGoalY);
        StepResult r;
        r.reward = -dist;
        if (dist <= kGoalRadius) {
            r.reward += kGoalBonus;
            r.done = true;
        }
        return r;
    }

    std::vector<double> observe() const override { return {x_, y_, vx_, vy_}; }

private:
    double x_ = 0, y_ = 0, vx_ = 0, vy_ = 0;
};

/// Torque-limited pendulum, angle measured from upright. Observation
/// (cos th, sin th, th_dot); never terminates.
class PendulumSwingUp final : public Env {
public:
    static constexpr double kGravity = 10.0;
    static constexpr double kMass = 1.0;
    static constexpr double kLength = 1.0;
    static constexpr double kDt = 0.05;
    static constexpr double kMaxSpeed = 8.0;
    static constexpr double kMaxTorque = 2.0;

    PendulumSwingUp() : Env(EnvSpec{3, 1, {-kMaxTorque}, {kMaxTorque}, 200}) {}

    std::string name() const override { return "pendulum"; }
    std::vector<double> state() const override { return {theta_, theta_dot_}; }
    void set_state(std::span<const double> s) override {
        if (s.size() != 2) throw ShapeError("pendulum state", 2, s.size());
        theta_ = s[0], theta_dot_ = s[1];
        restart_episode();
    }

    static double wrap_angle(double a) {
        constexpr double two_pi = 2.0 * std::numbers::pi;
        double w = std::fmod(a + std::numbers::pi, two_pi);
        if (w < 0) w += two_pi;
        return w - std::numbers::pi;
    }

protected:
    void sample_initial_state(Rng& rng) override {
        theta_ = rng.uniform(-std::numbers::pi, std::numbers::pi);
        theta_dot_ = rng.uniform(-1.0, 1.0);
    }

    StepResult advance(std::span<const double> a) override {
        const double u = a[0];
        const double th = wrap_angle(theta_);
        StepResult r;
        r.reward = -(th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u);
        const double accel = 3.0 * kGravity / (2.0 * kLength) * std::sin(theta_) +
                             3.0 / (kMass * kLength * kLength) * u;
        theta_dot_ = std::clamp(theta_dot_ + accel * kDt, -kMaxSpeed, kMaxSpeed);
        theta_ += theta_dot_ * kDt;
        return r;
    }

    std::vector<double> observe() const override { return {std::cos(theta_), std::sin(theta_), theta_dot_}; }

private:
    double theta_ = 0, theta_dot_ = 0;
};

/// Continuous mountain car with a purely terminal task reward (+100 at the
/// flag) and a small quadratic action cost. Observation (position, velocity).
class SparseMountainCar final : public Env {
public:
    static constexpr double kPower = 0.0015;
    static constexpr double kGravity = 0.0025;
    static constexpr double kMinPosition = -1.2;
    static constexpr double kMaxPosition = 0.6;
    static constexpr double kMaxSpeed = 0.07;
    static constexpr double kGoalPosition = 0.45;
    static constexpr double kGoalReward = 100.0;
    static constexpr double kActionCost = 0.01;

    SparseMountainCar() : Env(EnvSpec{2, 1, {-1.0}, {1.0}, 999}) {}

    std::string name() const override { return "sparse-mcar"; }
    std::vector<double> state() const override { return {position_, velocity_}; }
    void set_state(std::span<const double> s) override {
        if (s.size() != 2) throw ShapeError("sparse-mcar state", 2, s.size());
        position_ = s[0], velocity_ = s[1];
        restart_episode();
    }

protected:
    void sample_initial_state(Rng& rng) override {
        position_ = rng.uniform(-0.6, -0.4);
        velocity_ = 0.0;
    }

    StepResult advance(std::span<const double> a) override {
        const double u = a[0];
        velocity_ += kPower * u - kGravity * std::cos(3.0 * position_);
        velocity_ = std::clamp(velocity_, -kMaxSpeed, kMaxSpeed);
        position_ += velocity_;
        position_ = std::clamp(position_, kMinPosition, kMaxPosition);
        if (position_ == kMinPosition && velocity_ < 0.0) velocity_ = 0.0;
        StepResult r;
        r.reward = -kActionCost * u * u;
        if (position_ >= kGoalPosition) {
            r.reward += kGoalReward;
            r.done = true;
        }
        return r;
    }

    std::vector<double> observe() const override { return {position_, velocity_}; }

private:
    double position_ = 0, velocity_ = 0;
};

inline const std::vector<std::string>& env_names() {
    static const std::vector<std::string> names{"pointmass", "pendulum", "sparse-mcar"};
    return names;
}

inline std::unique_ptr<Env> make_env(const std::string& name) {
    if (name == "pointmass") return std::make_unique<PointMass2D>();
    if (name == "pendulum") return std::make_unique<PendulumSwingUp>();
    if (name == "sparse-mcar") return std::make_unique<SparseMountainCar>();
    throw ConfigError("env", "unknown environment '" + name + "' (expected pointmass|pendulum|sparse-mcar)");
}

}  // namespace oparl
