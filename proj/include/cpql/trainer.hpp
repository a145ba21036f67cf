#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cpql/checkpoint.hpp"
#include "cpql/config.hpp"
#include "cpql/critic.hpp"
#include "cpql/data.hpp"
#include "cpql/envs.hpp"
#include "cpql/objective.hpp"
#include "cpql/optim.hpp"
#include "cpql/policy.hpp"

namespace cpql {

/// Online policy, its EMA target, the critics, and one Adam state per net.
template <typename Scalar>
struct Agent {
  ConsistencyPolicy<Scalar> policy;
  ConsistencyPolicy<Scalar> policy_target;
  CriticSet<Scalar> critics;
  AdamState<Scalar> policy_opt, q1_opt, q2_opt, v_opt;
};

template <typename Scalar>
DiffusionSchedule<Scalar> schedule_from(const TrainConfig& cfg);

template <typename Scalar>
Agent<Scalar> make_agent(const TrainConfig& cfg, const EnvSpec& spec, Rng& rng);

enum class Phase { Critic, Policy, Targets };

struct IterationStats {
  double policy_loss = 0;
  double bc_part = 0;
  double guidance_part = 0;
  double q_loss = 0;
  double v_loss = std::numeric_limits<double>::quiet_NaN();  // CPIQL only
  double mean_q_batch = 0;
  /// Forward passes of either policy network during the critic phase.
  std::uint64_t critic_phase_policy_forwards = 0;
};

struct TrainHooks {
  std::function<void(long iter, Phase phase)> on_phase;
  /// Online only: called right before each gradient step with the replay size.
  std::function<void(long iter, std::size_t replay_size)> before_update;
  std::function<void(long iter, const IterationStats& stats)> after_update;
  /// Progress lines `iter=N policy_loss=... eval=...` go here when set.
  std::ostream* progress = nullptr;
};

/// One iteration: critic update, policy update, then EMA of all targets.
template <typename Scalar>
IterationStats update_agent(Agent<Scalar>& agent, const Batch<Scalar>& batch, const TrainConfig& cfg,
                            Rng& rng, long iter = 0, const TrainHooks* hooks = nullptr);

struct EvalResult {
  double mean = 0;
  double std = 0;
  std::vector<double> returns;
};

/// Maps a (state_dim x n) batch of states to (action_dim x n) actions.
using ActionFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& states, Rng& rng)>;

/// Undiscounted returns over `episodes` runs stepped in lockstep, each run to
/// termination or the horizon. Actions are clipped to the env bounds.
EvalResult evaluate(const ActionFn& act, const Environment& env, int episodes, Rng& rng);

template <typename Scalar>
EvalResult evaluate(const ConsistencyPolicy<Scalar>& policy, const Environment& env, int episodes,
                    Rng& rng);

struct MetricsRow {
  long iter = 0;
  double policy_loss = 0;
  double bc_loss_part = 0;
  double guidance_part = 0;
  double q_loss = 0;
  double v_loss = std::numeric_limits<double>::quiet_NaN();
  double mean_q_batch = 0;
  double eval_return_mean = 0;
  double eval_return_std = 0;
  double wallclock_s = 0;
};

/// CSV with `# key=value` config echo lines, a header row, then one row per
/// logged iteration. v_loss is left empty outside CPIQL.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(std::vector<std::pair<std::string, std::string>> echo) : echo_(std::move(echo)) {}

  void add(const MetricsRow& row);
  const std::vector<MetricsRow>& rows() const { return rows_; }
  std::string csv() const;
  void write(const std::string& path) const;

  static const char* header();

 private:
  std::vector<std::pair<std::string, std::string>> echo_;
  std::vector<MetricsRow> rows_;
};

template <typename Scalar>
struct TrainResult {
  Agent<Scalar> agent;
  MetricsLog metrics;
  long iterations = 0;
  double best_eval = -std::numeric_limits<double>::infinity();
  double final_eval = 0;
  /// Steps taken on the training environment; stays 0 offline.
  std::uint64_t training_env_steps = 0;
  std::size_t replay_size = 0;
};

/// Fixed-dataset training. The environment is used for evaluation only.
template <typename Scalar>
TrainResult<Scalar> train_offline(const TrainConfig& cfg, const Dataset& data,
                                  const TrainHooks& hooks = {});

/// Replay-buffer training with `cfg.warmup` exploration steps first.
template <typename Scalar>
TrainResult<Scalar> train_online(const TrainConfig& cfg, const TrainHooks& hooks = {});

template <typename Scalar>
Checkpoint make_checkpoint(const TrainConfig& cfg, const Agent<Scalar>& agent);

/// Rebuilds the config and the online policy stored in a checkpoint.
TrainConfig config_from_checkpoint(const Checkpoint& ckpt);
template <typename Scalar>
ConsistencyPolicy<Scalar> policy_from_checkpoint(const Checkpoint& ckpt, const EnvSpec& spec);

struct RunSummary {
  long iterations = 0;
  double best_eval = 0;
  double final_eval = 0;
  MetricsLog metrics;
};

/// Validates cfg, loads the dataset when offline, dispatches on precision and
/// setting, and writes metrics / checkpoint files when paths are set.
RunSummary run_training(const TrainConfig& cfg, const TrainHooks& hooks = {});

struct BenchConfig {
  std::string env_name = "pendulum-swingup";
  std::vector<int> euler_steps = {5, 15};
  long train_iters = 5000;
  long sample_steps = 50000;
  int hidden = 256;
  int batch_size = 256;
  std::uint64_t seed = 0;
};

struct SamplerTiming {
  std::string sampler;
  int steps_per_action = 1;
  long env_steps = 0;
  double seconds = 0;
  double sps = 0;
  double forwards_per_action = 0;
};

struct BenchResult {
  long train_iters = 0;
  double train_seconds = 0;
  double ips_consistency = 0;
  SamplerTiming consistency;
  std::vector<SamplerTiming> euler;

  double speedup_over(int n) const;
};

/// Single-threaded timing of CPQL training iterations and of env stepping
/// with the one-step sampler versus Euler samplers of equal net size.
BenchResult benchmark(const BenchConfig& cfg, std::ostream* progress = nullptr);

}  // namespace cpql
