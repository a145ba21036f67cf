#include "cpql/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cpql/errors.hpp"

namespace cpql {

namespace {

constexpr double kPointMassDt = 0.1;
constexpr double kPointMassDamping = 0.95;
constexpr double kPointMassBox = 2.0;
constexpr double kPendulumDt = 0.05;
constexpr double kPendulumMaxSpeed = 8.0;
constexpr double kPendulumJitter = 0.05;

EnvSpec spec_for(Environment::Kind kind) {
  EnvSpec s;
  switch (kind) {
    case Environment::Kind::BimodalReach:
      s = {"bimodal-reach", 1, 1, Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 1.0),
           1, "(0, 1 + exp(-128)]"};
      break;
    case Environment::Kind::PointMass2d:
      s = {"point-mass-2d", 4, 2, Eigen::VectorXd::Constant(2, -1.0), Eigen::VectorXd::Constant(2, 1.0),
           100, "[-4*sqrt(2), 0]"};
      break;
    case Environment::Kind::PendulumSwingup:
      s = {"pendulum-swingup", 3, 1, Eigen::VectorXd::Constant(1, -2.0),
           Eigen::VectorXd::Constant(1, 2.0), 200, "(-inf, 0]"};
      break;
  }
  return s;
}

}  // namespace

double bimodal_reward(double a) {
  return std::exp(-(a - 0.8) * (a - 0.8) / 0.02) + std::exp(-(a + 0.8) * (a + 0.8) / 0.02);
}

double wrap_angle(double theta) {
  constexpr double pi = std::numbers::pi;
  double w = std::fmod(theta + pi, 2.0 * pi);
  if (w < 0) w += 2.0 * pi;
  w -= pi;  // [-pi, pi)
  return w == -pi ? pi : w;
}

Environment::Environment(Kind kind) : kind_(kind), spec_(spec_for(kind)) {}

const std::vector<std::string>& env_names() {
  static const std::vector<std::string> names = {"bimodal-reach", "point-mass-2d",
                                                 "pendulum-swingup"};
  return names;
}

Environment make_env(const std::string& name) {
  if (name == "bimodal-reach") return Environment(Environment::Kind::BimodalReach);
  if (name == "point-mass-2d") return Environment(Environment::Kind::PointMass2d);
  if (name == "pendulum-swingup") return Environment(Environment::Kind::PendulumSwingup);
  std::string valid;
  for (const auto& n : env_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown environment '" + name + "' (valid: " + valid + ")");
}

Eigen::VectorXd Environment::reset(Rng* rng) const {
  switch (kind_) {
    case Kind::BimodalReach:
      return Eigen::VectorXd::Zero(1);
    case Kind::PointMass2d:
      return Eigen::VectorXd::Zero(4);
    case Kind::PendulumSwingup: {
      double theta = std::numbers::pi;
      if (rng != nullptr) theta += rng->uniform(-kPendulumJitter, kPendulumJitter);
      Eigen::VectorXd s(3);
      s << std::cos(theta), std::sin(theta), 0.0;
      return s;
    }
  }
  return {};
}

Eigen::VectorXd Environment::clip_action(const Eigen::VectorXd& action) const {
  return action.cwiseMax(spec_.action_low).cwiseMin(spec_.action_high);
}

StepResult Environment::step(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const {
  if (state.size() != spec_.state_dim || action.size() != spec_.action_dim)
    throw UsageError("step: state/action dimension mismatch for " + spec_.name);
  steps_.bump();
  StepResult r;
  switch (kind_) {
    case Kind::BimodalReach:
      r.next_state = Eigen::VectorXd::Zero(1);
      r.reward = bimodal_reward(action[0]);
      r.done = true;
      break;
    case Kind::PointMass2d: {
      Eigen::Vector2d p = state.head<2>();
      Eigen::Vector2d v = state.tail<2>();
      v = kPointMassDamping * (v + kPointMassDt * action.head<2>());
      p = p + kPointMassDt * v;
      p = p.cwiseMax(-kPointMassBox).cwiseMin(kPointMassBox);
      v = v.cwiseMax(-kPointMassBox).cwiseMin(kPointMassBox);
      r.next_state.resize(4);
      r.next_state << p, v;
      r.reward = -(p - Eigen::Vector2d(1.0, 1.0)).norm();
      break;
    }
    case Kind::PendulumSwingup: {
      const double theta = std::atan2(state[1], state[0]);
      const double u = action[0];
      const double accel = 15.0 * std::sin(theta) + 3.0 * u;
      const double speed =
          std::clamp(state[2] + kPendulumDt * accel, -kPendulumMaxSpeed, kPendulumMaxSpeed);
      const double next_theta = theta + kPendulumDt * speed;
      r.next_state.resize(3);
      r.next_state << std::cos(next_theta), std::sin(next_theta), speed;
      const double w = wrap_angle(next_theta);
      r.reward = -(w * w + 0.1 * speed * speed + 0.001 * u * u);
      break;
    }
  }
  return r;
}

}  // namespace cpql
