#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "cpql/errors.hpp"
#include "cpql/mlp.hpp"
#include "cpql/rng.hpp"
#include "cpql/schedule.hpp"

namespace cpql {

template <typename Scalar>
struct LossAndGrad {
  Scalar value = 0;
  VectorX<Scalar> grad;
};

/// Network input for the conditioned generators: [s; c_in(k) a; k / K], one column per sample.
template <typename Scalar>
MatrixX<Scalar> generator_input(const DiffusionSchedule<Scalar>& sched,
                                const Eigen::Ref<const MatrixX<Scalar>>& a,
                                const Eigen::Ref<const VectorX<Scalar>>& k,
                                const Eigen::Ref<const MatrixX<Scalar>>& s) {
  if (a.cols() != s.cols() || k.size() != a.cols())
    throw UsageError("generator input: batch sizes of action, time and state differ");
  MatrixX<Scalar> x(s.rows() + a.rows() + 1, a.cols());
  x.topRows(s.rows()) = s;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    x.col(c).segment(s.rows(), a.rows()) = sched.c_in(k[c]) * a.col(c);
    x(x.rows() - 1, c) = sched.time_feature(k[c]);
  }
  return x;
}

/// One-step generator f(a^k, k | s) = c_skip(k) a^k + c_out(k) F(a^k, k | s).
template <typename Scalar>
class ConsistencyPolicy {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  struct Tape {
    MlpTape<Scalar> net;
    RowVectorX<Scalar> c_out;
  };

  ConsistencyPolicy() = default;
  ConsistencyPolicy(int state_dim, int action_dim, int hidden, DiffusionSchedule<Scalar> schedule,
                    const Eigen::VectorXd& action_low, const Eigen::VectorXd& action_high)
      : net_(Mlp<Scalar>::three_layer(state_dim + action_dim + 1, hidden, action_dim, false)),
        schedule_(std::move(schedule)),
        low_(action_low.cast<Scalar>()),
        high_(action_high.cast<Scalar>()),
        state_dim_(state_dim),
        action_dim_(action_dim) {
    if (low_.size() != action_dim || high_.size() != action_dim || (low_.array() >= high_.array()).any())
      throw UsageError("policy action bounds must satisfy low < high per dimension");
  }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  Mlp<Scalar>& net() { return net_; }
  const Mlp<Scalar>& net() const { return net_; }
  const DiffusionSchedule<Scalar>& schedule() const { return schedule_; }
  const Vector& action_low() const { return low_; }
  const Vector& action_high() const { return high_; }
  std::uint64_t forward_count() const { return net_.forward_count(); }

  /// Raw (unclipped) generator output for a batch; `k` holds one time per column.
  Matrix apply(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& k,
               const Eigen::Ref<const Matrix>& s) const {
    return run(a, k, s, nullptr);
  }
  Matrix apply(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& k,
               const Eigen::Ref<const Matrix>& s, Tape& tape) const {
    return run(a, k, s, &tape);
  }

  /// Accumulates d(loss)/d(params) given d(loss)/d(output).
  void backward(const Tape& tape, const Eigen::Ref<const Matrix>& out_grad, Vector& param_grad) const {
    if (out_grad.cols() != tape.c_out.size()) throw UsageError("policy backward: batch mismatch");
    const Matrix scaled = out_grad.array().rowwise() * tape.c_out.array();
    net_.backward(tape.net, scaled, &param_grad);
  }

  Matrix clip(const Eigen::Ref<const Matrix>& a) const {
    return a.cwiseMax(low_.replicate(1, a.cols())).cwiseMin(high_.replicate(1, a.cols()));
  }

  /// One-step sampling for a batch of states: a^K = K z, one network pass, clip.
  Matrix sample_actions(const Eigen::Ref<const Matrix>& states, Rng& rng) const {
    const Matrix z = rng.normal_matrix<Scalar>(action_dim_, states.cols());
    return sample_actions(states, z);
  }
  Matrix sample_actions(const Eigen::Ref<const Matrix>& states, const Eigen::Ref<const Matrix>& z) const {
    const Scalar big_k = schedule_.k_max();
    const Vector k = Vector::Constant(states.cols(), big_k);
    return clip(apply(big_k * z, k, states));
  }
  Vector sample_action(const Eigen::Ref<const Vector>& state, Rng& rng) const {
    return sample_actions(state, rng).col(0);
  }

 private:
  Matrix run(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& k,
             const Eigen::Ref<const Matrix>& s, Tape* tape) const {
    if (a.rows() != action_dim_ || s.rows() != state_dim_)
      throw UsageError("consistency policy: state/action dimension mismatch");
    const Matrix x = generator_input(schedule_, a, k, s);
    Matrix f = tape != nullptr ? net_.forward(x, tape->net) : net_.forward(x);
    RowVectorX<Scalar> c_out(a.cols());
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const auto sc = schedule_.scalings(k[c]);
      f.col(c) = sc.skip * a.col(c) + sc.out * f.col(c);
      c_out[c] = sc.out;
    }
    if (tape != nullptr) tape->c_out = std::move(c_out);
    return f;
  }

  Mlp<Scalar> net_;
  DiffusionSchedule<Scalar> schedule_;
  Vector low_;
  Vector high_;
  int state_dim_ = 0;
  int action_dim_ = 0;
};

/// Noise for the boundary-pair losses: schedule index i in [0, M-2] per
/// sample (k_m = k(i), k_{m+1} = k(i+1)) and a standard normal z.
template <typename Scalar>
struct StepNoise {
  std::vector<int> index;
  MatrixX<Scalar> z;
};

template <typename Scalar>
StepNoise<Scalar> draw_step_noise(const DiffusionSchedule<Scalar>& sched, int action_dim,
                                  Eigen::Index batch, Rng& rng) {
  StepNoise<Scalar> n;
  n.index.resize(std::size_t(batch));
  for (auto& i : n.index) i = int(rng.uniform_int(0, sched.count() - 2));
  n.z = rng.normal_matrix<Scalar>(action_dim, batch);
  return n;
}

namespace detail {

template <typename Scalar>
void check_batch(const MatrixX<Scalar>& states, const MatrixX<Scalar>& actions, const char* what) {
  if (states.cols() == 0) throw UsageError(std::string(what) + ": empty batch");
  if (states.cols() != actions.cols())
    throw UsageError(std::string(what) + ": state and action batch sizes differ");
}

template <typename Scalar>
VectorX<Scalar> times_at(const DiffusionSchedule<Scalar>& sched, const std::vector<int>& index, int shift) {
  VectorX<Scalar> k(Eigen::Index(index.size()));
  for (std::size_t i = 0; i < index.size(); ++i) k[Eigen::Index(i)] = sched.k(index[i] + shift);
  return k;
}

// Column c of a scaled by k[c].
template <typename Scalar>
MatrixX<Scalar> scale_columns(const MatrixX<Scalar>& z, const VectorX<Scalar>& k) {
  return z.array().rowwise() * k.transpose().array();
}

}  // namespace detail

/// Reconstruction loss: mean_b || f(a + k_{m+1} z, k_{m+1} | s) - a ||^2.
template <typename Scalar>
LossAndGrad<Scalar> loss_reconstruction(const ConsistencyPolicy<Scalar>& policy,
                                        const MatrixX<Scalar>& states, const MatrixX<Scalar>& actions,
                                        const StepNoise<Scalar>& noise) {
  detail::check_batch(states, actions, "loss_reconstruction");
  const auto& sched = policy.schedule();
  const VectorX<Scalar> k_next = detail::times_at(sched, noise.index, 1);
  typename ConsistencyPolicy<Scalar>::Tape tape;
  const MatrixX<Scalar> noisy = actions + detail::scale_columns(noise.z, k_next);
  const MatrixX<Scalar> diff = policy.apply(noisy, k_next, states, tape) - actions;
  const auto batch = Scalar(states.cols());
  LossAndGrad<Scalar> out;
  out.value = diff.squaredNorm() / batch;
  out.grad = VectorX<Scalar>::Zero(policy.net().param_count());
  policy.backward(tape, (Scalar(2) / batch) * diff, out.grad);
  return out;
}

template <typename Scalar>
LossAndGrad<Scalar> loss_reconstruction(const ConsistencyPolicy<Scalar>& policy,
                                        const MatrixX<Scalar>& states, const MatrixX<Scalar>& actions,
                                        Rng& rng) {
  return loss_reconstruction(policy, states, actions,
                             draw_step_noise(policy.schedule(), policy.action_dim(), states.cols(), rng));
}

/// Consistency loss: mean_b || f_theta(a + k_{m+1} z, k_{m+1}) - f_target(a + k_m z, k_m) ||^2
/// with the same z in both branches; the target branch carries no gradient.
template <typename Scalar>
LossAndGrad<Scalar> loss_consistency(const ConsistencyPolicy<Scalar>& policy,
                                     const ConsistencyPolicy<Scalar>& target,
                                     const MatrixX<Scalar>& states, const MatrixX<Scalar>& actions,
                                     const StepNoise<Scalar>& noise) {
  detail::check_batch(states, actions, "loss_consistency");
  const auto& sched = policy.schedule();
  const VectorX<Scalar> k_next = detail::times_at(sched, noise.index, 1);
  const VectorX<Scalar> k_cur = detail::times_at(sched, noise.index, 0);
  const MatrixX<Scalar> anchor =
      target.apply(actions + detail::scale_columns(noise.z, k_cur), k_cur, states);
  typename ConsistencyPolicy<Scalar>::Tape tape;
  const MatrixX<Scalar> diff =
      policy.apply(actions + detail::scale_columns(noise.z, k_next), k_next, states, tape) - anchor;
  const auto batch = Scalar(states.cols());
  LossAndGrad<Scalar> out;
  out.value = diff.squaredNorm() / batch;
  out.grad = VectorX<Scalar>::Zero(policy.net().param_count());
  policy.backward(tape, (Scalar(2) / batch) * diff, out.grad);
  return out;
}

template <typename Scalar>
LossAndGrad<Scalar> loss_consistency(const ConsistencyPolicy<Scalar>& policy,
                                     const ConsistencyPolicy<Scalar>& target,
                                     const MatrixX<Scalar>& states, const MatrixX<Scalar>& actions,
                                     Rng& rng) {
  return loss_consistency(policy, target, states, actions,
                          draw_step_noise(policy.schedule(), policy.action_dim(), states.cols(), rng));
}

/// Multi-step baseline: a plain denoiser D(a^k, k | s) ~ E[a | a^k] sampled by
/// Euler integration of the probability-flow ODE with score (D - a) / k^2.
template <typename Scalar>
class DenoiserPolicy {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  DenoiserPolicy() = default;
  DenoiserPolicy(int state_dim, int action_dim, int hidden, DiffusionSchedule<Scalar> schedule,
                 const Eigen::VectorXd& action_low, const Eigen::VectorXd& action_high, int n_steps)
      : net_(Mlp<Scalar>::three_layer(state_dim + action_dim + 1, hidden, action_dim, false)),
        schedule_(std::move(schedule)),
        low_(action_low.cast<Scalar>()),
        high_(action_high.cast<Scalar>()),
        state_dim_(state_dim),
        action_dim_(action_dim),
        n_steps_(n_steps) {
    if (n_steps < 1 || n_steps > schedule_.count() - 1)
      throw ConfigError("euler steps must lie in [1, M-1]");
  }

  int n_steps() const { return n_steps_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  Mlp<Scalar>& net() { return net_; }
  const Mlp<Scalar>& net() const { return net_; }
  const DiffusionSchedule<Scalar>& schedule() const { return schedule_; }
  std::uint64_t forward_count() const { return net_.forward_count(); }

  Matrix denoise(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& k,
                 const Eigen::Ref<const Matrix>& s) const {
    return net_.forward(generator_input(schedule_, a, k, s));
  }
  Matrix denoise(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& k,
                 const Eigen::Ref<const Matrix>& s, MlpTape<Scalar>& tape) const {
    return net_.forward(generator_input(schedule_, a, k, s), tape);
  }

  /// Schedule indices visited by the sampler: n_steps + 1 evenly spaced
  /// indices from M-1 down to 0.
  std::vector<int> step_indices() const {
    const int last = schedule_.count() - 1;
    std::vector<int> idx(std::size_t(n_steps_ + 1));
    for (int j = 0; j <= n_steps_; ++j) {
      idx[std::size_t(j)] =
          int(std::lround(double(last) * double(n_steps_ - j) / double(n_steps_)));
    }
    return idx;
  }

  Vector euler_sample(const Eigen::Ref<const Vector>& state, Rng& rng) const {
    const Vector z = rng.normal_matrix<Scalar>(action_dim_, 1);
    return euler_sample(state, z);
  }

  /// Exactly n_steps network passes.
  Vector euler_sample(const Eigen::Ref<const Vector>& state, const Eigen::Ref<const Vector>& z) const {
    const auto idx = step_indices();
    Vector a = schedule_.k_max() * z;
    Vector k1(1);
    for (std::size_t j = 0; j + 1 < idx.size(); ++j) {
      const Scalar k_from = schedule_.k(idx[j]);
      const Scalar k_to = schedule_.k(idx[j + 1]);
      k1[0] = k_from;
      const ScoreFn<Scalar> score = [&](const Vector& x, Scalar k) -> Vector {
        return (denoise(x, k1, state).col(0) - x) / (k * k);
      };
      a = euler_step<Scalar>(a, k_from, k_to, score);
    }
    return a.cwiseMax(low_).cwiseMin(high_);
  }

 private:
  Mlp<Scalar> net_;
  DiffusionSchedule<Scalar> schedule_;
  Vector low_;
  Vector high_;
  int state_dim_ = 0;
  int action_dim_ = 0;
  int n_steps_ = 1;
};

/// Noise for denoiser training: index in [1, M-1] (k drawn from boundaries 2..M) and z.
template <typename Scalar>
StepNoise<Scalar> draw_denoising_noise(const DiffusionSchedule<Scalar>& sched, int action_dim,
                                       Eigen::Index batch, Rng& rng) {
  StepNoise<Scalar> n;
  n.index.resize(std::size_t(batch));
  for (auto& i : n.index) i = int(rng.uniform_int(1, sched.count() - 1));
  n.z = rng.normal_matrix<Scalar>(action_dim, batch);
  return n;
}

/// Denoising regression: mean_b || D(a + k z, k | s) - a ||^2.
template <typename Scalar>
LossAndGrad<Scalar> loss_denoising(const DenoiserPolicy<Scalar>& dp, const MatrixX<Scalar>& states,
                                   const MatrixX<Scalar>& actions, const StepNoise<Scalar>& noise) {
  detail::check_batch(states, actions, "loss_denoising");
  const VectorX<Scalar> k = detail::times_at(dp.schedule(), noise.index, 0);
  MlpTape<Scalar> tape;
  const MatrixX<Scalar> diff =
      dp.denoise(actions + detail::scale_columns(noise.z, k), k, states, tape) - actions;
  const auto batch = Scalar(states.cols());
  LossAndGrad<Scalar> out;
  out.value = diff.squaredNorm() / batch;
  out.grad = VectorX<Scalar>::Zero(dp.net().param_count());
  dp.net().backward(tape, (Scalar(2) / batch) * diff, &out.grad);
  return out;
}

template <typename Scalar>
LossAndGrad<Scalar> loss_denoising(const DenoiserPolicy<Scalar>& dp, const MatrixX<Scalar>& states,
                                   const MatrixX<Scalar>& actions, Rng& rng) {
  return loss_denoising(dp, states, actions,
                        draw_denoising_noise(dp.schedule(), dp.action_dim(), states.cols(), rng));
}

}  // namespace cpql
