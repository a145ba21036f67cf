#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace cpql {

/// Seedable random stream. All randomness in the engine flows through one of these.
///
/// `split()` derives a child stream from (seed, split index); children are
/// reproducible and do not perturb the parent's own draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return counter_; }

  double normal();
  double uniform();                                  // [0, 1)
  double uniform(double lo, double hi);              // [lo, hi)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive

  template <typename Scalar>
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> normal_matrix(Eigen::Index rows,
                                                                      Eigen::Index cols) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<Scalar>(normal());
    return out;
  }

  Rng split();

  friend bool operator==(const Rng& a, const Rng& b);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::uint64_t splits_ = 0;
  std::mt19937_64 engine_;
  std::normal_distribution<double> gauss_;
};

/// SplitMix64 finalizer; used for seed derivation.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace cpql
