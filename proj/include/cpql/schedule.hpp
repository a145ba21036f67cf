#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpql/errors.hpp"
#include "cpql/mlp.hpp"

namespace cpql {

/// Karras time boundaries k_1 = eps < ... < k_M = k_max:
///   k_i = (eps^(1/rho) + (i-1)/(M-1) * (k_max^(1/rho) - eps^(1/rho)))^rho
/// The endpoints are pinned exactly.
std::vector<double> karras_boundaries(int count, double eps, double k_max, double rho);

template <typename Scalar>
struct Scalings {
  Scalar skip;
  Scalar out;
};

/// Discretized diffusion horizon plus the consistency-model scalings
///   c_skip(k) = sd^2 / ((k - eps)^2 + sd^2)
///   c_out(k)  = sd (k - eps) / sqrt(sd^2 + k^2)
///   c_in(k)   = 1 / sqrt(k^2 + sd^2)     (network input preconditioning)
/// with sd = sigma_data. c_skip(eps) = 1 and c_out(eps) = 0 exactly.
template <typename Scalar>
class DiffusionSchedule {
 public:
  DiffusionSchedule() : DiffusionSchedule(40, 0.002, 80.0, 7.0, 0.5) {}

  DiffusionSchedule(int count, double eps, double k_max, double rho, double sigma_data)
      : eps_(eps), k_max_(k_max), rho_(rho), sigma_data_(sigma_data) {
    if (!(sigma_data > 0.0)) throw ConfigError("sigma_data must be positive");
    const auto k = karras_boundaries(count, eps, k_max, rho);
    boundaries_.resize(static_cast<Eigen::Index>(k.size()));
    for (std::size_t i = 0; i < k.size(); ++i) boundaries_[Eigen::Index(i)] = Scalar(k[i]);
  }

  int count() const { return static_cast<int>(boundaries_.size()); }
  Scalar eps() const { return Scalar(eps_); }
  Scalar k_max() const { return Scalar(k_max_); }
  double rho() const { return rho_; }
  Scalar sigma_data() const { return Scalar(sigma_data_); }
  const VectorX<Scalar>& boundaries() const { return boundaries_; }
  /// Zero-based access: k(0) = eps, k(count() - 1) = k_max.
  Scalar k(int index) const { return boundaries_[index]; }

  Scalings<Scalar> scalings(Scalar k) const {
    check_range(k);
    const Scalar sd = sigma_data();
    const Scalar shifted = k - eps();
    return {sd * sd / (shifted * shifted + sd * sd), sd * shifted / std::sqrt(sd * sd + k * k)};
  }

  Scalar c_in(Scalar k) const {
    const Scalar sd = sigma_data();
    return Scalar(1) / std::sqrt(k * k + sd * sd);
  }

  /// Scalar time feature fed to networks: k / k_max.
  Scalar time_feature(Scalar k) const { return k / k_max(); }

 private:
  void check_range(Scalar k) const {
    // Allow a few ulps of slack for values recomputed from the boundary table.
    const double slack = 1e-12 * k_max_;
    if (!(double(k) >= eps_ - slack && double(k) <= k_max_ + slack))
      throw UsageError("diffusion time " + std::to_string(double(k)) + " outside [" +
                       std::to_string(eps_) + ", " + std::to_string(k_max_) + "]");
  }

  double eps_;
  double k_max_;
  double rho_;
  double sigma_data_;
  VectorX<Scalar> boundaries_;
};

/// Forward perturbation a + k z.
template <typename Derived, typename DerivedZ>
auto perturb(const Eigen::MatrixBase<Derived>& a, typename Derived::Scalar k,
             const Eigen::MatrixBase<DerivedZ>& z) {
  if (a.rows() != z.rows() || a.cols() != z.cols()) throw UsageError("perturb: shape mismatch");
  return (a + k * z).eval();
}

template <typename Scalar>
using ScoreFn = std::function<VectorX<Scalar>(const VectorX<Scalar>&, Scalar)>;

/// One Euler step of the probability-flow ODE da/dk = -k s(a, k), moving
/// from k_from down to k_to.
template <typename Scalar>
VectorX<Scalar> euler_step(const VectorX<Scalar>& a, Scalar k_from, Scalar k_to,
                           const ScoreFn<Scalar>& score) {
  if (!(k_to < k_from)) throw UsageError("euler_step: k_to must be below k_from");
  const VectorX<Scalar> s = score(a, k_from);
  if (s.size() != a.size()) throw UsageError("euler_step: score has wrong dimension");
  return a + (k_to - k_from) * (-k_from) * s;
}

}  // namespace cpql
