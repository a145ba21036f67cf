#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace cpql {

/// softplus(x) = ln(1 + e^x) without overflow.
template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::abs, std::exp, std::log1p;
  return std::max(x, Scalar(0)) + log1p(exp(-abs(x)));
}

/// Mish activation x * tanh(softplus(x)).
template <typename Scalar>
Scalar mish(Scalar x) {
  return x * std::tanh(softplus(x));
}

template <typename Scalar>
Scalar mish_derivative(Scalar x) {
  const Scalar t = std::tanh(softplus(x));
  const Scalar w = std::exp(-std::abs(x));
  const Scalar sigmoid = x >= 0 ? Scalar(1) / (Scalar(1) + w) : w / (Scalar(1) + w);
  return t + x * (Scalar(1) - t * t) * sigmoid;
}

/// Elementwise Mish over a dense block, writing the activation and (optionally)
/// its derivative. Uses tanh(softplus(x)) expressed through w = exp(-|x|) so a
/// single vectorized exp serves both branches:
///   x >= 0: (1 + 2w) / (1 + 2w + 2w^2)      x < 0: (w^2 + 2w) / (w^2 + 2w + 2)
template <typename In, typename Out, typename Deriv>
void mish_inplace(const Eigen::ArrayBase<In>& x, Eigen::ArrayBase<Out>& out,
                  Eigen::ArrayBase<Deriv>* deriv) {
  using Scalar = typename In::Scalar;
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Arr w = (-x.abs()).exp();
  const Arr w2 = w.square();
  const auto pos = x >= Scalar(0);
  const Arr num = pos.select(Scalar(1) + Scalar(2) * w, w2 + Scalar(2) * w);
  const Arr den = pos.select(Scalar(1) + Scalar(2) * w + Scalar(2) * w2, w2 + Scalar(2) * w + Scalar(2));
  const Arr t = num / den;
  out.derived() = x * t;
  if (deriv != nullptr) {
    const Arr sig = pos.select(Scalar(1) / (Scalar(1) + w), w / (Scalar(1) + w));
    deriv->derived() = t + x * (Scalar(1) - t.square()) * sig;
  }
}

}  // namespace cpql
