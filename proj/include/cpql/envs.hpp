#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpql/mlp.hpp"
#include "cpql/rng.hpp"

namespace cpql {

struct EnvSpec {
  std::string name;
  int state_dim = 0;
  int action_dim = 0;
  Eigen::VectorXd action_low;
  Eigen::VectorXd action_high;
  int horizon = 1;
  std::string reward_range;
};

struct StepResult {
  Eigen::VectorXd next_state;
  double reward = 0.0;
  bool done = false;  // true termination only; horizon truncation is the caller's business
};

/// Deterministic toy control tasks:
///   bimodal-reach     one-step bandit with reward peaks at a = +-0.8
///   point-mass-2d     damped double integrator steering to (1, 1)
///   pendulum-swingup  torque-limited pendulum starting hanging down
/// Rewards are evaluated on the post-step state.
class Environment {
 public:
  enum class Kind { BimodalReach, PointMass2d, PendulumSwingup };

  explicit Environment(Kind kind);

  const EnvSpec& spec() const { return spec_; }
  Kind kind() const { return kind_; }

  /// Start state; the pendulum gets +-0.05 rad of uniform jitter when `rng` is given.
  Eigen::VectorXd reset(Rng* rng = nullptr) const;
  StepResult step(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const;

  Eigen::VectorXd clip_action(const Eigen::VectorXd& action) const;

  std::uint64_t step_count() const { return steps_.get(); }

 private:
  Kind kind_;
  EnvSpec spec_;
  CallCounter steps_;
};

const std::vector<std::string>& env_names();

/// Throws ConfigError listing valid names on an unknown `name`.
Environment make_env(const std::string& name);

double bimodal_reward(double action);
/// Wraps an angle into (-pi, pi].
double wrap_angle(double theta);

}  // namespace cpql
