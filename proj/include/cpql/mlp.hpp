#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpql/activation.hpp"
#include "cpql/errors.hpp"
#include "cpql/rng.hpp"

namespace cpql {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Copyable call counter; used to assert how many network evaluations an
/// operation performs.
class CallCounter {
 public:
  CallCounter() = default;
  CallCounter(const CallCounter& other) : n_(other.get()) {}
  CallCounter& operator=(const CallCounter& other) {
    n_.store(other.get(), std::memory_order_relaxed);
    return *this;
  }
  void bump() const { n_.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t get() const { return n_.load(std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> n_{0};
};

inline constexpr double kLayerNormEps = 1e-5;

/// Activations recorded by a forward pass, consumed by `Mlp::backward`.
/// Batches are column-major: one sample per column.
template <typename Scalar>
struct MlpTape {
  struct Layer {
    MatrixX<Scalar> input;       // in x B
    MatrixX<Scalar> normalized;  // LN: (z - mu) / sigma, out x B
    RowVectorX<Scalar> inv_std;  // LN: per-sample 1/sigma
    MatrixX<Scalar> act_deriv;   // mish'(y), hidden layers only
  };
  std::vector<Layer> layers;
  bool empty() const { return layers.empty(); }
};

/// Fully connected network: Linear -> [LayerNorm] -> Mish on hidden layers,
/// Linear on the output layer.
///
/// Parameters live in one flat vector ordered layer by layer as
/// W (column-major, out x in), b, then LayerNorm scale and shift when enabled.
template <typename Scalar>
class Mlp {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  Mlp() = default;

  Mlp(std::vector<int> widths, bool layernorm) : widths_(std::move(widths)), layernorm_(layernorm) {
    if (widths_.size() < 2) throw UsageError("Mlp needs at least input and output widths");
    for (int w : widths_) {
      if (w <= 0) throw UsageError("Mlp widths must be positive");
    }
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      LayerOffsets o;
      o.in = widths_[l];
      o.out = widths_[l + 1];
      o.weight = offset;
      offset += Eigen::Index(o.in) * o.out;
      o.bias = offset;
      offset += o.out;
      o.hidden = l + 2 < widths_.size();
      if (layernorm_ && o.hidden) {
        o.scale = offset;
        offset += o.out;
        o.shift = offset;
        offset += o.out;
      }
      layers_.push_back(o);
    }
    params_ = Vector::Zero(offset);
    for (const auto& o : layers_) {
      if (o.scale >= 0) params_.segment(o.scale, o.out).setOnes();
    }
  }

  /// Shorthand for the (in, hidden, hidden, out) shape used throughout.
  static Mlp three_layer(int input_dim, int hidden, int output_dim, bool layernorm) {
    return Mlp({input_dim, hidden, hidden, output_dim}, layernorm);
  }

  static Eigen::Index param_count_for(const std::vector<int>& widths, bool layernorm) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      n += Eigen::Index(widths[l]) * widths[l + 1] + widths[l + 1];
      if (layernorm && l + 2 < widths.size()) n += 2 * widths[l + 1];
    }
    return n;
  }

  /// Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit LayerNorm scale.
  void init_uniform(Rng& rng) {
    for (const auto& o : layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(o.in));
      for (Eigen::Index i = 0; i < Eigen::Index(o.in) * o.out; ++i)
        params_[o.weight + i] = static_cast<Scalar>(rng.uniform(-bound, bound));
      params_.segment(o.bias, o.out).setZero();
      if (o.scale >= 0) {
        params_.segment(o.scale, o.out).setOnes();
        params_.segment(o.shift, o.out).setZero();
      }
    }
  }

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  bool layernorm() const { return layernorm_; }
  Eigen::Index param_count() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  void set_params(const Eigen::Ref<const Vector>& p) {
    if (p.size() != params_.size()) throw UsageError("Mlp::set_params: length mismatch");
    params_ = p;
  }

  std::uint64_t forward_count() const { return forward_calls_.get(); }

  Matrix forward(const Eigen::Ref<const Matrix>& x) const { return run(x, nullptr); }
  Matrix forward(const Eigen::Ref<const Matrix>& x, MlpTape<Scalar>& tape) const {
    return run(x, &tape);
  }

  /// Back-propagates `out_grad` (output_dim x B) through the taped pass.
  /// Parameter gradients are accumulated into `param_grad` when non-null.
  /// Returns the gradient with respect to the network input.
  Matrix backward(const MlpTape<Scalar>& tape, const Eigen::Ref<const Matrix>& out_grad,
                  Vector* param_grad) const {
    if (tape.layers.size() != layers_.size())
      throw UsageError("Mlp::backward called without a matching forward tape");
    if (out_grad.rows() != output_dim() || out_grad.cols() != tape.layers.front().input.cols())
      throw UsageError("Mlp::backward: output gradient has wrong shape");
    if (param_grad != nullptr && param_grad->size() != params_.size())
      throw UsageError("Mlp::backward: parameter gradient has wrong length");

    Matrix grad = out_grad;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const auto& o = layers_[li];
      const auto& rec = tape.layers[li];
      if (o.hidden) {
        grad.array() *= rec.act_deriv.array();  // through Mish
        if (o.scale >= 0) {
          const auto scale = params_.segment(o.scale, o.out);
          if (param_grad != nullptr) {
            param_grad->segment(o.scale, o.out) +=
                (grad.array() * rec.normalized.array()).rowwise().sum().matrix();
            param_grad->segment(o.shift, o.out) += grad.rowwise().sum();
          }
          Matrix dxhat = grad.array().colwise() * scale.array();
          const RowVectorX<Scalar> mean_d = dxhat.colwise().mean();
          const RowVectorX<Scalar> mean_dx =
              (dxhat.array() * rec.normalized.array()).colwise().mean().matrix();
          grad = ((dxhat.rowwise() - mean_d).array() -
                  rec.normalized.array().rowwise() * mean_dx.array())
                     .rowwise() *
                 rec.inv_std.array();
        }
      }
      const Eigen::Map<const Matrix> weight(params_.data() + o.weight, o.out, o.in);
      if (param_grad != nullptr) {
        Eigen::Map<Matrix> dw(param_grad->data() + o.weight, o.out, o.in);
        dw.noalias() += grad * rec.input.transpose();
        param_grad->segment(o.bias, o.out) += grad.rowwise().sum();
      }
      Matrix next = weight.transpose() * grad;
      grad = std::move(next);
    }
    return grad;
  }

 private:
  struct LayerOffsets {
    int in = 0;
    int out = 0;
    Eigen::Index weight = 0;
    Eigen::Index bias = 0;
    Eigen::Index scale = -1;
    Eigen::Index shift = -1;
    bool hidden = false;
  };

  Matrix run(const Eigen::Ref<const Matrix>& x, MlpTape<Scalar>* tape) const {
    if (layers_.empty()) throw UsageError("Mlp::forward on an empty network");
    if (x.rows() != input_dim())
      throw UsageError("Mlp::forward: expected input dimension " + std::to_string(input_dim()) +
                       ", got " + std::to_string(x.rows()));
    forward_calls_.bump();
    if (tape != nullptr) tape->layers.resize(layers_.size());

    Matrix h = x;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      const auto& o = layers_[li];
      const Eigen::Map<const Matrix> weight(params_.data() + o.weight, o.out, o.in);
      Matrix z = weight * h;
      z.colwise() += params_.segment(o.bias, o.out);
      if (tape != nullptr) tape->layers[li].input = std::move(h);
      if (!o.hidden) {
        h = std::move(z);
        continue;
      }
      if (o.scale >= 0) {
        const RowVectorX<Scalar> mu = z.colwise().mean();
        z.rowwise() -= mu;
        const RowVectorX<Scalar> inv_std =
            ((z.array().square().colwise().mean()) + Scalar(kLayerNormEps)).rsqrt().matrix();
        z.array().rowwise() *= inv_std.array();
        if (tape != nullptr) {
          tape->layers[li].normalized = z;
          tape->layers[li].inv_std = inv_std;
        }
        z.array().colwise() *= params_.segment(o.scale, o.out).array();
        z.colwise() += params_.segment(o.shift, o.out);
      }
      Matrix a(z.rows(), z.cols());
      auto a_arr = a.array();
      if (tape != nullptr) {
        auto& deriv = tape->layers[li].act_deriv;
        deriv.resize(z.rows(), z.cols());
        auto d_arr = deriv.array();
        mish_inplace(z.array(), a_arr, &d_arr);
      } else {
        mish_inplace(z.array(), a_arr, static_cast<decltype(a_arr)*>(nullptr));
      }
      h = std::move(a);
    }
    return h;
  }

  std::vector<int> widths_;
  bool layernorm_ = false;
  std::vector<LayerOffsets> layers_;
  Vector params_;
  CallCounter forward_calls_;
};

}  // namespace cpql
