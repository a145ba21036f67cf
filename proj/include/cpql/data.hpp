#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpql/errors.hpp"
#include "cpql/mlp.hpp"
#include "cpql/rng.hpp"

namespace cpql {

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool done = false;
};

/// A training minibatch; one transition per column.
template <typename Scalar>
struct Batch {
  MatrixX<Scalar> states;
  MatrixX<Scalar> actions;
  VectorX<Scalar> rewards;
  MatrixX<Scalar> next_states;
  VectorX<Scalar> dones;

  Eigen::Index size() const { return states.cols(); }
};

/// Struct-of-arrays transition storage. Each record's state, action and next
/// state are contiguous, so a column gather maps straight onto Eigen matrices.
class TransitionTable {
 public:
  TransitionTable() = default;
  TransitionTable(int state_dim, int action_dim);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  std::size_t size() const { return rewards_.size(); }
  bool empty() const { return rewards_.empty(); }

  void reserve(std::size_t n);
  void push_back(const Transition& t);
  void set(std::size_t index, const Transition& t);
  Transition at(std::size_t index) const;

  template <typename Scalar>
  Batch<Scalar> gather(const std::vector<std::size_t>& indices) const;

  Eigen::Map<const Eigen::MatrixXd> states() const;
  Eigen::Map<const Eigen::MatrixXd> actions() const;
  Eigen::Map<const Eigen::VectorXd> rewards() const;

 private:
  void check(const Transition& t) const;

  int state_dim_ = 0;
  int action_dim_ = 0;
  std::vector<double> states_;
  std::vector<double> actions_;
  std::vector<double> rewards_;
  std::vector<double> next_states_;
  std::vector<double> dones_;
};

/// Fixed offline dataset.
class Dataset {
 public:
  Dataset() = default;
  Dataset(int state_dim, int action_dim) : table_(state_dim, action_dim) {}

  int state_dim() const { return table_.state_dim(); }
  int action_dim() const { return table_.action_dim(); }
  std::size_t size() const { return table_.size(); }

  void push_back(const Transition& t) { table_.push_back(t); }
  Transition at(std::size_t i) const { return table_.at(i); }
  const TransitionTable& table() const { return table_; }
  TransitionTable& table() { return table_; }

  /// Uniform with replacement.
  template <typename Scalar>
  Batch<Scalar> sample(std::size_t batch_size, Rng& rng) const;

 private:
  TransitionTable table_;
};

/// Ring buffer replay memory; the oldest record is overwritten at capacity.
class ReplayBuffer {
 public:
  ReplayBuffer(int state_dim, int action_dim, std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return table_.size(); }
  std::size_t cursor() const { return cursor_; }

  void push(const Transition& t);
  /// Record at logical position `i`, 0 = oldest.
  Transition at(std::size_t i) const;

  /// Uniform with replacement over current contents.
  template <typename Scalar>
  Batch<Scalar> sample(std::size_t batch_size, Rng& rng) const;

 private:
  TransitionTable table_;
  std::size_t capacity_;
  std::size_t cursor_ = 0;
};

// Binary dataset format ("CPD1", little-endian):
//   magic[4] | u32 version=1 | u32 state_dim | u32 action_dim | u64 count
//   then count records of f32: state | action | reward | next_state | done
inline constexpr char kDatasetMagic[4] = {'C', 'P', 'D', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);

/// Hand-authored fixtures: header row s0..s{n-1},a0..a{m-1},r,ns0..ns{n-1},done.
Dataset read_dataset_csv(const std::string& path);

/// Rollout-based dataset collection. Behaviors:
///   "bimodal"     (bimodal-reach) a ~ 1/2 N(0.8, 0.05^2) + 1/2 N(-0.8, 0.05^2), clipped
///   "random"      uniform over the action box
///   "scripted-pd" point-mass: a = clip(2 (goal - p) - v); pendulum: energy-shaping swing-up
Dataset generate_dataset(const std::string& env_name, const std::string& behavior, std::size_t n,
                         Rng& rng);

}  // namespace cpql
