#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cpql/envs.hpp"
#include "cpql/errors.hpp"

using namespace cpql;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(Eigen::Index(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_CASE("environment specs") {
  const auto b = make_env("bimodal-reach");
  CHECK(b.spec().state_dim == 1);
  CHECK(b.spec().action_dim == 1);
  CHECK(b.spec().action_low[0] == -1.0);
  CHECK(b.spec().action_high[0] == 1.0);
  CHECK(b.spec().horizon == 1);
  const auto p = make_env("pendulum-swingup");
  CHECK(p.spec().state_dim == 3);
  CHECK(p.spec().action_dim == 1);
  CHECK(p.spec().action_high[0] == 2.0);
  CHECK(p.spec().horizon == 200);
  const auto m = make_env("point-mass-2d");
  CHECK(m.spec().state_dim == 4);
  CHECK(m.spec().action_dim == 2);
  CHECK(m.spec().horizon == 100);
}

TEST_CASE("unknown environment lists valid names") {
  try {
    make_env("nosuch");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const auto& n : env_names()) CHECK(msg.find(n) != std::string::npos);
  }
}

TEST_CASE("bimodal reach") {
  const auto env = make_env("bimodal-reach");
  const VectorXd s = env.reset();
  CHECK(s == VectorXd::Zero(1));
  const auto r = env.step(s, vec({0.8}));
  CHECK(r.reward == 1.0 + std::exp(-128.0));
  CHECK(r.done);
  CHECK(env.step(s, vec({-0.8})).reward == r.reward);
  CHECK(env.step(s, vec({0.0})).reward == doctest::Approx(2 * std::exp(-32.0)));
  for (double a = -1.0; a <= 1.0; a += 0.01) {
    const double rew = bimodal_reward(a);
    CHECK(rew > 0.0);
    CHECK(rew <= 1.0 + std::exp(-128.0));
  }
}

TEST_CASE("point mass") {
  const auto env = make_env("point-mass-2d");
  const VectorXd s = env.reset();
  CHECK(s == VectorXd::Zero(4));
  const auto r = env.step(s, vec({0.0, 0.0}));
  CHECK(r.next_state == s);
  CHECK(r.reward == doctest::Approx(-std::sqrt(2.0)).epsilon(1e-15));
  CHECK_FALSE(r.done);

  const auto r2 = env.step(s, vec({1.0, -1.0}));
  // v = 0.95 * 0.1 a, p = 0.1 v
  CHECK(r2.next_state[2] == doctest::Approx(0.095));
  CHECK(r2.next_state[3] == doctest::Approx(-0.095));
  CHECK(r2.next_state[0] == doctest::Approx(0.0095));

  // state stays inside the clip box and reward is bounded by its diagonal
  VectorXd x = s;
  for (int t = 0; t < 300; ++t) {
    const auto st = env.step(x, vec({1.0, 1.0}));
    CHECK(st.next_state.cwiseAbs().maxCoeff() <= 2.0);
    CHECK(st.reward <= 0.0);
    CHECK(st.reward >= -4.0 * std::sqrt(2.0));
    x = st.next_state;
  }
}

TEST_CASE("pendulum") {
  const auto env = make_env("pendulum-swingup");
  const VectorXd s = env.reset();
  CHECK(s[0] == -1.0);
  CHECK(std::abs(s[1]) < 1e-15);
  CHECK(s[2] == 0.0);

  const VectorXd up = vec({1.0, 0.0, 0.0});
  const auto r = env.step(up, vec({0.0}));
  CHECK(r.reward == 0.0);
  CHECK(r.next_state == up);

  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const VectorXd j = env.reset(&rng);
    const double theta = std::atan2(j[1], j[0]);
    CHECK(std::abs(wrap_angle(theta - std::numbers::pi)) <= 0.05 + 1e-12);
  }

  VectorXd x = s;
  for (int t = 0; t < 400; ++t) {
    const auto st = env.step(x, vec({t % 50 < 25 ? 2.0 : -2.0}));
    CHECK(st.reward <= 0.0);
    CHECK(std::abs(st.next_state[2]) <= 8.0);
    CHECK(st.next_state.head<2>().norm() == doctest::Approx(1.0));
    x = st.next_state;
  }
}

TEST_CASE("step is a pure function") {
  for (const auto& name : env_names()) {
    const auto env = make_env(name);
    Rng rng(4);
    const VectorXd s = env.reset(&rng);
    const VectorXd a = VectorXd::Constant(env.spec().action_dim, 0.37);
    const auto r1 = env.step(s, a);
    const auto r2 = env.step(s, a);
    CHECK(r1.next_state == r2.next_state);
    CHECK(r1.reward == r2.reward);
  }
}

TEST_CASE("angle wrapping into (-pi, pi]") {
  const double pi = std::numbers::pi;
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(pi) == doctest::Approx(pi));
  CHECK(wrap_angle(-pi) == doctest::Approx(pi));
  CHECK(wrap_angle(3 * pi / 2) == doctest::Approx(-pi / 2));
  CHECK(wrap_angle(-7.0) == doctest::Approx(-7.0 + 2 * pi));
  for (double t = -20.0; t < 20.0; t += 0.37) {
    const double w = wrap_angle(t);
    CHECK(w > -pi);
    CHECK(w <= pi);
    CHECK(std::abs(std::remainder(w - t, 2 * pi)) < 1e-9);
  }
}

TEST_CASE("action clipping") {
  const auto env = make_env("pendulum-swingup");
  CHECK(env.clip_action(vec({5.0}))[0] == 2.0);
  CHECK(env.clip_action(vec({-5.0}))[0] == -2.0);
  CHECK(env.clip_action(vec({0.3}))[0] == 0.3);
}
