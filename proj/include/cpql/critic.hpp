#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "cpql/data.hpp"
#include "cpql/errors.hpp"
#include "cpql/mlp.hpp"
#include "cpql/optim.hpp"
#include "cpql/policy.hpp"
#include "cpql/rng.hpp"

namespace cpql {

/// Asymmetric squared loss |tau - 1(u < 0)| u^2.
template <typename Scalar>
Scalar expectile_loss(Scalar u, Scalar tau) {
  const Scalar weight = u < Scalar(0) ? Scalar(1) - tau : tau;
  return weight * u * u;
}

/// Twin Q-networks with Polyak targets, plus a state-value network for the
/// expectile (implicit) variant. Inputs are [s; a] for Q and s for V.
template <typename Scalar>
class CriticSet {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  CriticSet() = default;
  CriticSet(int state_dim, int action_dim, int hidden, bool with_value, double gamma, double tau,
            Rng& rng)
      : q1(Mlp<Scalar>::three_layer(state_dim + action_dim, hidden, 1, true)),
        q2(Mlp<Scalar>::three_layer(state_dim + action_dim, hidden, 1, true)),
        gamma(gamma),
        tau(tau),
        state_dim_(state_dim),
        action_dim_(action_dim) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("expectile tau must lie in (0, 1)");
    q1.init_uniform(rng);
    q2.init_uniform(rng);
    q1_target = q1;
    q2_target = q2;
    if (with_value) {
      v = Mlp<Scalar>::three_layer(state_dim, hidden, 1, true);
      v->init_uniform(rng);
    }
  }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  bool has_value() const { return v.has_value(); }

  static Matrix joint(const Eigen::Ref<const Matrix>& s, const Eigen::Ref<const Matrix>& a) {
    if (s.cols() != a.cols()) throw UsageError("critic input: state and action batch sizes differ");
    Matrix x(s.rows() + a.rows(), s.cols());
    x << s, a;
    return x;
  }

  /// Elementwise min of the two online critics (row vector over the batch).
  RowVectorX<Scalar> q_min(const Eigen::Ref<const Matrix>& s, const Eigen::Ref<const Matrix>& a) const {
    const Matrix x = joint(s, a);
    return q1.forward(x).cwiseMin(q2.forward(x));
  }
  RowVectorX<Scalar> q_min_target(const Eigen::Ref<const Matrix>& s,
                                  const Eigen::Ref<const Matrix>& a) const {
    const Matrix x = joint(s, a);
    return q1_target.forward(x).cwiseMin(q2_target.forward(x));
  }

  void polyak_update(double rho) {
    ema_update<Scalar>(q1_target.params(), q1.params(), rho);
    ema_update<Scalar>(q2_target.params(), q2.params(), rho);
  }

  Mlp<Scalar> q1, q2, q1_target, q2_target;
  std::optional<Mlp<Scalar>> v;
  double gamma = 0.99;
  double tau = 0.7;

 private:
  int state_dim_ = 0;
  int action_dim_ = 0;
};

template <typename Scalar>
struct CriticLoss {
  Scalar value = 0;  // summed over both critics
  VectorX<Scalar> grad_q1;
  VectorX<Scalar> grad_q2;
  VectorX<Scalar> targets;  // detached Bellman targets y
};

namespace detail {

template <typename Scalar>
void check_transitions(const Batch<Scalar>& b, const char* what) {
  if (b.size() == 0) throw UsageError(std::string(what) + ": empty batch");
}

template <typename Scalar>
void check_finite_targets(const VectorX<Scalar>& y, const char* what) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(double(y[i])))
      throw TrainingError(std::string(what) + ": nonfinite Bellman target at batch index " +
                          std::to_string(i));
  }
}

// sum_i mean_b (y - Q_i(s, a))^2 and its gradients for both critics.
template <typename Scalar>
CriticLoss<Scalar> regress_twin(const CriticSet<Scalar>& critics, const Batch<Scalar>& b,
                                VectorX<Scalar> y) {
  CriticLoss<Scalar> out;
  const MatrixX<Scalar> x = CriticSet<Scalar>::joint(b.states, b.actions);
  const auto n = Scalar(b.size());
  out.grad_q1 = VectorX<Scalar>::Zero(critics.q1.param_count());
  out.grad_q2 = VectorX<Scalar>::Zero(critics.q2.param_count());
  auto fit = [&](const Mlp<Scalar>& q, VectorX<Scalar>& grad) {
    MlpTape<Scalar> tape;
    const RowVectorX<Scalar> resid = q.forward(x, tape).row(0) - y.transpose();
    q.backward(tape, (Scalar(2) / n) * resid, &grad);
    return resid.squaredNorm() / n;
  };
  out.value = fit(critics.q1, out.grad_q1) + fit(critics.q2, out.grad_q2);
  out.targets = std::move(y);
  return out;
}

}  // namespace detail

/// Double-Q Bellman regression. y = r + (1 - done) gamma min_j Q_j^-(s', a'),
/// with a' sampled once per transition from `target_policy`.
template <typename Scalar>
CriticLoss<Scalar> q_loss_cpql(const CriticSet<Scalar>& critics,
                               const ConsistencyPolicy<Scalar>& target_policy, const Batch<Scalar>& b,
                               const MatrixX<Scalar>& next_action_noise) {
  detail::check_transitions(b, "q_loss_cpql");
  const MatrixX<Scalar> next_actions = target_policy.sample_actions(b.next_states, next_action_noise);
  const RowVectorX<Scalar> next_q = critics.q_min_target(b.next_states, next_actions);
  VectorX<Scalar> y = b.rewards.array() + (Scalar(1) - b.dones.array()) * Scalar(critics.gamma) *
                                              next_q.transpose().array();
  detail::check_finite_targets(y, "q_loss_cpql");
  return detail::regress_twin(critics, b, std::move(y));
}

template <typename Scalar>
CriticLoss<Scalar> q_loss_cpql(const CriticSet<Scalar>& critics,
                               const ConsistencyPolicy<Scalar>& target_policy, const Batch<Scalar>& b,
                               Rng& rng) {
  return q_loss_cpql(critics, target_policy, b,
                     rng.normal_matrix<Scalar>(target_policy.action_dim(), b.size()));
}

/// Expectile value regression: mean_b L_tau(min_j Q_j^-(s, a) - V(s)).
template <typename Scalar>
LossAndGrad<Scalar> v_loss_cpiql(const CriticSet<Scalar>& critics, const Batch<Scalar>& b) {
  if (!critics.v) throw UsageError("v_loss_cpiql requires a value network (cpiql mode)");
  detail::check_transitions(b, "v_loss_cpiql");
  const RowVectorX<Scalar> q = critics.q_min_target(b.states, b.actions);
  MlpTape<Scalar> tape;
  const RowVectorX<Scalar> u = q - critics.v->forward(b.states, tape).row(0);
  const auto n = Scalar(b.size());
  const Scalar tau = Scalar(critics.tau);
  LossAndGrad<Scalar> out;
  RowVectorX<Scalar> dv(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    out.value += expectile_loss(u[i], tau) / n;
    const Scalar w = u[i] < Scalar(0) ? Scalar(1) - tau : tau;
    dv[i] = -Scalar(2) * w * u[i] / n;  // d/dV of w u^2 with u = q - V
  }
  out.grad = VectorX<Scalar>::Zero(critics.v->param_count());
  critics.v->backward(tape, dv, &out.grad);
  return out;
}

/// Implicit Q regression: y = r + (1 - done) gamma V(s'); no action sampling.
template <typename Scalar>
CriticLoss<Scalar> q_loss_cpiql(const CriticSet<Scalar>& critics, const Batch<Scalar>& b) {
  if (!critics.v) throw UsageError("q_loss_cpiql requires a value network (cpiql mode)");
  detail::check_transitions(b, "q_loss_cpiql");
  const RowVectorX<Scalar> next_v = critics.v->forward(b.next_states).row(0);
  VectorX<Scalar> y = b.rewards.array() + (Scalar(1) - b.dones.array()) * Scalar(critics.gamma) *
                                              next_v.transpose().array();
  detail::check_finite_targets(y, "q_loss_cpiql");
  return detail::regress_twin(critics, b, std::move(y));
}

}  // namespace cpql
