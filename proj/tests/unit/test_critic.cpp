#include <doctest.h>

#include <cmath>

#include "cpql/critic.hpp"
#include "cpql/errors.hpp"
#include "cpql/optim.hpp"
#include "helpers.hpp"

using namespace cpql;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr int kS = 3;
constexpr int kA = 1;

Batch<double> random_batch(Rng& rng, int n, double done_prob = 0.3) {
  Batch<double> b;
  b.states = testutil::random_matrix(rng, kS, n);
  b.actions = testutil::random_matrix(rng, kA, n, 0.5);
  b.rewards = testutil::random_matrix(rng, n, 1);
  b.next_states = testutil::random_matrix(rng, kS, n);
  b.dones.resize(n);
  for (int i = 0; i < n; ++i) b.dones[i] = rng.uniform() < done_prob ? 1.0 : 0.0;
  return b;
}

ConsistencyPolicy<double> policy_for(Rng& rng) {
  ConsistencyPolicy<double> p(kS, kA, 8, DiffusionSchedule<double>(), -VectorXd::Ones(kA), VectorXd::Ones(kA));
  p.net().init_uniform(rng);
  return p;
}

// Output layer weights zero, bias c: the network is constant c.
void make_constant(Mlp<double>& net, double c) {
  VectorXd p = net.params();
  const Eigen::Index n = p.size();
  const int hidden = net.widths()[net.widths().size() - 2];
  p.segment(n - hidden - 1, hidden).setZero();
  p[n - 1] = c;
  net.set_params(p);
}

}  // namespace

TEST_CASE("expectile loss formula") {
  CHECK(expectile_loss(1.0, 0.7) == doctest::Approx(0.7));
  CHECK(expectile_loss(-1.0, 0.7) == doctest::Approx(0.3));
  for (double u = -2.0; u <= 2.0; u += 0.25) {
    CHECK(expectile_loss(u, 0.5) == 0.5 * u * u);
    if (u > 0) CHECK(expectile_loss(u, 0.8) > expectile_loss(-u, 0.8));
  }
}

TEST_CASE("critic set construction") {
  Rng rng(1);
  CriticSet<double> c(kS, kA, 8, true, 0.99, 0.7, rng);
  CHECK(c.q1.params() == c.q1_target.params());
  CHECK(c.q2.params() == c.q2_target.params());
  CHECK(c.q1.params() != c.q2.params());
  CHECK(c.q1.layernorm());
  CHECK(c.has_value());
  CHECK(c.v->input_dim() == kS);
  CHECK(c.q1_target.widths() == c.q1.widths());
  CHECK_THROWS_AS(CriticSet<double>(kS, kA, 8, false, 0.0, 0.7, rng), ConfigError);
  CHECK_THROWS_AS(CriticSet<double>(kS, kA, 8, false, 0.99, 1.0, rng), ConfigError);
  CriticSet<double> plain(kS, kA, 8, false, 0.99, 0.7, rng);
  CHECK_FALSE(plain.has_value());
}

TEST_CASE("cpql target: min selection, discount and terminal mask") {
  Rng rng(2);
  CriticSet<double> c(kS, kA, 8, false, 0.9, 0.7, rng);
  make_constant(c.q1_target, 2.0);
  make_constant(c.q2_target, 5.0);
  const auto policy = policy_for(rng);
  Batch<double> b = random_batch(rng, 4, 0.0);
  b.rewards.setOnes();
  b.dones << 0, 0, 1, 0;
  const auto l = q_loss_cpql(c, policy, b, rng);
  CHECK(l.targets[0] == doctest::Approx(2.8));
  CHECK(l.targets[1] == doctest::Approx(2.8));
  CHECK(l.targets[2] == 1.0);

  // swapping the target critics leaves every target unchanged
  std::swap(c.q1_target, c.q2_target);
  Rng again(5);
  Rng again2(5);
  const auto swapped = q_loss_cpql(c, policy, b, again);
  std::swap(c.q1_target, c.q2_target);
  const auto original = q_loss_cpql(c, policy, b, again2);
  CHECK(swapped.targets == original.targets);

  c.gamma = 1e-300;
  const auto g0 = q_loss_cpql(c, policy, b, rng);
  CHECK(g0.targets[0] == doctest::Approx(1.0));
}

TEST_CASE("cpql q loss gradient matches finite differences for both critics") {
  Rng rng(3);
  CriticSet<double> c(kS, kA, 8, false, 0.99, 0.7, rng);
  c.q1.params() += 0.2 * testutil::random_matrix(rng, c.q1.param_count(), 1);
  const auto policy = policy_for(rng);
  const Batch<double> b = random_batch(rng, 6);
  const MatrixXd z = testutil::random_matrix(rng, kA, 6);
  const auto l = q_loss_cpql(c, policy, b, z);
  const VectorXd fd1 = testutil::numeric_grad(c.q1.params(), [&] { return q_loss_cpql(c, policy, b, z).value; });
  const VectorXd fd2 = testutil::numeric_grad(c.q2.params(), [&] { return q_loss_cpql(c, policy, b, z).value; });
  CHECK(testutil::rel_err(l.grad_q1, fd1) < 1e-5);
  CHECK(testutil::rel_err(l.grad_q2, fd2) < 1e-5);
  // targets are detached: their parameters move the loss but receive no gradient output
  const double before = l.value;
  c.q1_target.params().array() += 0.05;
  CHECK(q_loss_cpql(c, policy, b, z).value != before);
}

TEST_CASE("cpql rejects nonfinite targets") {
  Rng rng(4);
  CriticSet<double> c(kS, kA, 8, false, 0.99, 0.7, rng);
  const auto policy = policy_for(rng);
  Batch<double> b = random_batch(rng, 3);
  b.rewards[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(q_loss_cpql(c, policy, b, rng), TrainingError);
}

TEST_CASE("cpiql value loss") {
  Rng rng(5);
  CriticSet<double> c(kS, kA, 8, true, 0.99, 0.7, rng);
  const Batch<double> b = random_batch(rng, 6);

  SUBCASE("gradient matches finite differences") {
    c.v->params() += 0.2 * testutil::random_matrix(rng, c.v->param_count(), 1);
    const auto l = v_loss_cpiql(c, b);
    const VectorXd fd = testutil::numeric_grad(c.v->params(), [&] { return v_loss_cpiql(c, b).value; });
    CHECK(testutil::rel_err(l.grad, fd) < 1e-5);
  }
  SUBCASE("zero when V equals the target min-Q") {
    make_constant(c.q1_target, 1.5);
    make_constant(c.q2_target, 3.0);
    make_constant(*c.v, 1.5);
    CHECK(v_loss_cpiql(c, b).value == doctest::Approx(0.0));
  }
  SUBCASE("tau = 0.5 is half the squared error") {
    c.tau = 0.5;
    const RowVectorX<double> q = c.q_min_target(b.states, b.actions);
    const RowVectorX<double> v = c.v->forward(b.states).row(0);
    CHECK(v_loss_cpiql(c, b).value == doctest::Approx(0.5 * (q - v).squaredNorm() / 6).epsilon(1e-12));
  }
  SUBCASE("requires a value network") {
    CriticSet<double> plain(kS, kA, 8, false, 0.99, 0.7, rng);
    CHECK_THROWS_AS(v_loss_cpiql(plain, b), UsageError);
    CHECK_THROWS_AS(q_loss_cpiql(plain, b), UsageError);
  }
}

TEST_CASE("cpiql q loss: target from V, gradients, terminal mask") {
  Rng rng(6);
  CriticSet<double> c(kS, kA, 8, true, 0.9, 0.7, rng);
  Batch<double> b = random_batch(rng, 5);
  make_constant(*c.v, 0.0);
  auto l = q_loss_cpiql(c, b);
  for (int i = 0; i < 5; ++i) CHECK(l.targets[i] == doctest::Approx(b.rewards[i]));
  make_constant(*c.v, 2.0);
  b.dones << 1, 0, 1, 0, 0;
  l = q_loss_cpiql(c, b);
  CHECK(l.targets[0] == doctest::Approx(b.rewards[0]));
  CHECK(l.targets[1] == doctest::Approx(b.rewards[1] + 1.8));

  c.v->init_uniform(rng);
  const auto lg = q_loss_cpiql(c, b);
  const VectorXd fd1 = testutil::numeric_grad(c.q1.params(), [&] { return q_loss_cpiql(c, b).value; });
  const VectorXd fd2 = testutil::numeric_grad(c.q2.params(), [&] { return q_loss_cpiql(c, b).value; });
  CHECK(testutil::rel_err(lg.grad_q1, fd1) < 1e-5);
  CHECK(testutil::rel_err(lg.grad_q2, fd2) < 1e-5);
}

TEST_CASE("polyak update follows the ema contract") {
  Rng rng(7);
  CriticSet<double> c(kS, kA, 8, false, 0.99, 0.7, rng);
  const VectorXd t0 = c.q1_target.params();
  c.q1.params().array() += 1.0;
  c.polyak_update(1.0);
  CHECK(c.q1_target.params() == t0);
  c.polyak_update(0.995);
  CHECK((c.q1_target.params() - (t0.array() + 0.005).matrix()).cwiseAbs().maxCoeff() < 1e-12);
  c.polyak_update(0.0);
  CHECK(c.q1_target.params() == c.q1.params());
  CHECK(c.q2_target.params() == c.q2.params());
}

TEST_CASE("double-Q regression recovers Q* on a two-state deterministic MDP") {
  // states s0 = (1), s1 = (-1); action ignored by the dynamics.
  // s0 -> s1 with r = 1, s1 -> s0 with r = 0, gamma = 0.5.
  // Q*(s0) = (1 + 0) / (1 - 0.25) = 4/3, Q*(s1) = 0.5 * 4/3 = 2/3.
  Rng rng(8);
  CriticSet<double> c(1, 1, 16, false, 0.5, 0.7, rng);
  ConsistencyPolicy<double> frozen(1, 1, 8, DiffusionSchedule<double>(), -VectorXd::Ones(1), VectorXd::Ones(1));
  frozen.net().init_uniform(rng);
  AdamState<double> o1(c.q1.param_count()), o2(c.q2.param_count());
  Batch<double> b;
  const int n = 32;
  b.states.resize(1, n);
  b.next_states.resize(1, n);
  b.rewards.resize(n);
  b.dones = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    const bool first = i % 2 == 0;
    b.states(0, i) = first ? 1.0 : -1.0;
    b.next_states(0, i) = first ? -1.0 : 1.0;
    b.rewards[i] = first ? 1.0 : 0.0;
  }
  for (int it = 0; it < 5000; ++it) {
    b.actions = frozen.sample_actions(b.states, rng);
    const auto l = q_loss_cpql(c, frozen, b, rng);
    adam_step<double>(c.q1.params(), l.grad_q1, o1, 1e-3);
    adam_step<double>(c.q2.params(), l.grad_q2, o2, 1e-3);
    c.polyak_update(0.95);
  }
  MatrixXd s(1, 2);
  s << 1.0, -1.0;
  const MatrixXd a = frozen.sample_actions(s, rng);
  const MatrixXd x = CriticSet<double>::joint(s, a);
  const double q_star[2] = {4.0 / 3.0, 2.0 / 3.0};
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(c.q1.forward(x)(0, i) - q_star[i]) < 0.05);
    CHECK(std::abs(c.q2.forward(x)(0, i) - q_star[i]) < 0.05);
  }
}
