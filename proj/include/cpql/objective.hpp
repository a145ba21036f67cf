#pragma once

#include <algorithm>
#include <string>

#include <Eigen/Dense>

#include "cpql/critic.hpp"
#include "cpql/policy.hpp"

namespace cpql {

enum class LossMode { Reconstruction, Consistency };

struct GuidanceWeights {
  double alpha = 1.0;
  double eta = 1.0;
  LossMode loss_mode = LossMode::Reconstruction;
};

/// Floor applied to the Q normalizer.
inline constexpr double kQNormFloor = 1e-6;

template <typename Scalar>
struct GuidanceLoss {
  Scalar value = 0;
  Scalar q_scale = 0;      // detached max(mean |Q_min(s, a_data)|, floor)
  Scalar mean_q_data = 0;  // mean Q_min(s, a_data), for logging
  VectorX<Scalar> grad;
};

/// Q-guidance term -eta * mean_b Q_min(s, a_hat) / q_scale, where a_hat is the
/// clipped one-step sample from noise `z`. Clipping passes gradients straight
/// through inside the bounds and blocks them outside. Critics are frozen.
template <typename Scalar>
GuidanceLoss<Scalar> q_guidance_loss(const ConsistencyPolicy<Scalar>& policy,
                                     const CriticSet<Scalar>& critics, const MatrixX<Scalar>& states,
                                     const MatrixX<Scalar>& data_actions, const MatrixX<Scalar>& z,
                                     double eta) {
  detail::check_batch(states, data_actions, "q_guidance_loss");
  GuidanceLoss<Scalar> out;
  out.grad = VectorX<Scalar>::Zero(policy.net().param_count());
  const RowVectorX<Scalar> q_data = critics.q_min(states, data_actions);
  out.mean_q_data = q_data.mean();
  out.q_scale = std::max(q_data.cwiseAbs().mean(), Scalar(kQNormFloor));
  if (eta == 0.0) return out;

  const Eigen::Index n = states.cols();
  const Scalar big_k = policy.schedule().k_max();
  typename ConsistencyPolicy<Scalar>::Tape ptape;
  const MatrixX<Scalar> raw = policy.apply(big_k * z, VectorX<Scalar>::Constant(n, big_k), states, ptape);
  const MatrixX<Scalar> clipped = policy.clip(raw);

  const MatrixX<Scalar> x = CriticSet<Scalar>::joint(states, clipped);
  MlpTape<Scalar> t1, t2;
  const RowVectorX<Scalar> q1 = critics.q1.forward(x, t1).row(0);
  const RowVectorX<Scalar> q2 = critics.q2.forward(x, t2).row(0);

  const Scalar coeff = -Scalar(eta) / (Scalar(n) * out.q_scale);
  RowVectorX<Scalar> g1 = RowVectorX<Scalar>::Zero(n);
  RowVectorX<Scalar> g2 = RowVectorX<Scalar>::Zero(n);
  Scalar q_sum = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (q1[i] <= q2[i]) {
      q_sum += q1[i];
      g1[i] = coeff;
    } else {
      q_sum += q2[i];
      g2[i] = coeff;
    }
  }
  out.value = -Scalar(eta) * (q_sum / Scalar(n)) / out.q_scale;

  const int ad = critics.action_dim();
  MatrixX<Scalar> d_action = critics.q1.backward(t1, g1, nullptr).bottomRows(ad);
  d_action += critics.q2.backward(t2, g2, nullptr).bottomRows(ad);
  const auto inside = (raw.array() >= policy.action_low().replicate(1, n).array()) &&
                      (raw.array() <= policy.action_high().replicate(1, n).array());
  d_action = inside.select(d_action.array(), Scalar(0)).matrix();
  policy.backward(ptape, d_action, out.grad);
  return out;
}

template <typename Scalar>
struct PolicyNoise {
  StepNoise<Scalar> step;      // for the reconstruction / consistency term
  MatrixX<Scalar> guidance_z;  // for the one-step sample in the guidance term
};

template <typename Scalar>
PolicyNoise<Scalar> draw_policy_noise(const ConsistencyPolicy<Scalar>& policy, Eigen::Index batch,
                                      Rng& rng) {
  PolicyNoise<Scalar> n;
  n.step = draw_step_noise(policy.schedule(), policy.action_dim(), batch, rng);
  n.guidance_z = rng.normal_matrix<Scalar>(policy.action_dim(), batch);
  return n;
}

template <typename Scalar>
struct PolicyLoss {
  Scalar value = 0;
  Scalar bc_part = 0;        // unweighted reconstruction / consistency loss
  Scalar guidance_part = 0;  // already includes eta and the Q normalizer
  Scalar mean_q_data = 0;
  VectorX<Scalar> grad;
};

/// alpha * L_bc + guidance, with L_bc the reconstruction or consistency loss.
template <typename Scalar>
PolicyLoss<Scalar> policy_loss_total(const ConsistencyPolicy<Scalar>& policy,
                                     const ConsistencyPolicy<Scalar>& target_policy,
                                     const CriticSet<Scalar>& critics, const MatrixX<Scalar>& states,
                                     const MatrixX<Scalar>& actions, const GuidanceWeights& weights,
                                     const PolicyNoise<Scalar>& noise) {
  const LossAndGrad<Scalar> bc =
      weights.loss_mode == LossMode::Reconstruction
          ? loss_reconstruction(policy, states, actions, noise.step)
          : loss_consistency(policy, target_policy, states, actions, noise.step);
  const GuidanceLoss<Scalar> guide =
      q_guidance_loss(policy, critics, states, actions, noise.guidance_z, weights.eta);
  PolicyLoss<Scalar> out;
  out.bc_part = bc.value;
  out.guidance_part = guide.value;
  out.mean_q_data = guide.mean_q_data;
  out.value = Scalar(weights.alpha) * bc.value + guide.value;
  out.grad = Scalar(weights.alpha) * bc.grad + guide.grad;
  return out;
}

template <typename Scalar>
PolicyLoss<Scalar> policy_loss_total(const ConsistencyPolicy<Scalar>& policy,
                                     const ConsistencyPolicy<Scalar>& target_policy,
                                     const CriticSet<Scalar>& critics, const MatrixX<Scalar>& states,
                                     const MatrixX<Scalar>& actions, const GuidanceWeights& weights,
                                     Rng& rng) {
  return policy_loss_total(policy, target_policy, critics, states, actions, weights,
                           draw_policy_noise(policy, states.cols(), rng));
}

}  // namespace cpql
