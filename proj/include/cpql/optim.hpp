#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "cpql/errors.hpp"
#include "cpql/mlp.hpp"

namespace cpql {

template <typename Scalar>
struct AdamState {
  VectorX<Scalar> m;
  VectorX<Scalar> v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(Eigen::Index n) : m(VectorX<Scalar>::Zero(n)), v(VectorX<Scalar>::Zero(n)) {}
};

/// Bias-corrected Adam update applied in place.
template <typename Scalar>
void adam_step(Eigen::Ref<VectorX<Scalar>> params, const Eigen::Ref<const VectorX<Scalar>>& grads,
               AdamState<Scalar>& state, double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw UsageError("adam_step: parameter, gradient and state lengths differ");
  for (Eigen::Index i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grads[i])))
      throw TrainingError("adam_step: nonfinite gradient at index " + std::to_string(i));
  }
  ++state.t;
  const Scalar b1 = Scalar(state.beta1);
  const Scalar b2 = Scalar(state.beta2);
  state.m = b1 * state.m + (Scalar(1) - b1) * grads;
  state.v = b2 * state.v + (Scalar(1) - b2) * grads.cwiseAbs2();
  const Scalar c1 = Scalar(1.0 - std::pow(state.beta1, double(state.t)));
  const Scalar c2 = Scalar(1.0 - std::pow(state.beta2, double(state.t)));
  params.array() -= Scalar(lr) * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + Scalar(state.eps));
}

/// Polyak averaging: target <- rho * target + (1 - rho) * online.
template <typename Scalar>
void ema_update(Eigen::Ref<VectorX<Scalar>> target, const Eigen::Ref<const VectorX<Scalar>>& online,
                double rho) {
  if (target.size() != online.size()) throw UsageError("ema_update: length mismatch");
  if (!(rho >= 0.0 && rho <= 1.0)) throw UsageError("ema_update: rho must lie in [0, 1]");
  if (rho == 1.0) return;
  if (rho == 0.0) {
    target = online;
    return;
  }
  target = Scalar(rho) * target + Scalar(1.0 - rho) * online;
}

}  // namespace cpql
