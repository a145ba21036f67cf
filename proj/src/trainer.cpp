#include "cpql/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "cpql/errors.hpp"

namespace cpql {

template <typename Scalar>
DiffusionSchedule<Scalar> schedule_from(const TrainConfig& cfg) {
  return DiffusionSchedule<Scalar>(cfg.M, cfg.eps, cfg.K, cfg.rho_karras, cfg.sigma_data);
}

template <typename Scalar>
Agent<Scalar> make_agent(const TrainConfig& cfg, const EnvSpec& spec, Rng& rng) {
  Agent<Scalar> a;
  a.policy = ConsistencyPolicy<Scalar>(spec.state_dim, spec.action_dim, cfg.hidden, schedule_from<Scalar>(cfg),
                                       spec.action_low, spec.action_high);
  a.policy.net().init_uniform(rng);
  a.policy_target = a.policy;
  a.critics = CriticSet<Scalar>(spec.state_dim, spec.action_dim, cfg.hidden, cfg.mode == Algorithm::Cpiql,
                                cfg.gamma, cfg.tau, rng);
  a.policy_opt = AdamState<Scalar>(a.policy.net().param_count());
  a.q1_opt = AdamState<Scalar>(a.critics.q1.param_count());
  a.q2_opt = AdamState<Scalar>(a.critics.q2.param_count());
  if (a.critics.v) a.v_opt = AdamState<Scalar>(a.critics.v->param_count());
  return a;
}

template <typename Scalar>
IterationStats update_agent(Agent<Scalar>& agent, const Batch<Scalar>& batch, const TrainConfig& cfg, Rng& rng,
                            long iter, const TrainHooks* hooks) {
  auto phase = [&](Phase p) {
    if (hooks != nullptr && hooks->on_phase) hooks->on_phase(iter, p);
  };
  auto& critics = agent.critics;
  IterationStats st;

  const auto forwards_before = agent.policy.forward_count() + agent.policy_target.forward_count();
  CriticLoss<Scalar> cl;
  if (cfg.mode == Algorithm::Cpql) {
    cl = q_loss_cpql(critics, agent.policy_target, batch, rng);
  } else {
    const LossAndGrad<Scalar> vl = v_loss_cpiql(critics, batch);
    st.v_loss = double(vl.value);
    adam_step<Scalar>(critics.v->params(), vl.grad, agent.v_opt, cfg.lr_critic);
    cl = q_loss_cpiql(critics, batch);
  }
  st.q_loss = double(cl.value);
  adam_step<Scalar>(critics.q1.params(), cl.grad_q1, agent.q1_opt, cfg.lr_critic);
  adam_step<Scalar>(critics.q2.params(), cl.grad_q2, agent.q2_opt, cfg.lr_critic);
  st.critic_phase_policy_forwards =
      agent.policy.forward_count() + agent.policy_target.forward_count() - forwards_before;
  phase(Phase::Critic);

  const PolicyLoss<Scalar> pl =
      policy_loss_total(agent.policy, agent.policy_target, critics, batch.states, batch.actions, cfg.weights(), rng);
  st.policy_loss = double(pl.value);
  st.bc_part = double(pl.bc_part);
  st.guidance_part = double(pl.guidance_part);
  st.mean_q_batch = double(pl.mean_q_data);
  adam_step<Scalar>(agent.policy.net().params(), pl.grad, agent.policy_opt, cfg.lr_policy);
  phase(Phase::Policy);

  ema_update<Scalar>(agent.policy_target.net().params(), agent.policy.net().params(), cfg.rho_polyak);
  critics.polyak_update(cfg.rho_polyak);
  phase(Phase::Targets);
  return st;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(const ActionFn& act, const Environment& env, int episodes, Rng& rng) {
  if (episodes < 1) throw UsageError("evaluate: episodes must be >= 1");
  const auto& spec = env.spec();
  Eigen::MatrixXd states(spec.state_dim, episodes);
  for (int e = 0; e < episodes; ++e) states.col(e) = env.reset(&rng);
  EvalResult out;
  out.returns.assign(std::size_t(episodes), 0.0);
  std::vector<char> alive(std::size_t(episodes), 1);
  int remaining = episodes;
  for (int t = 0; t < spec.horizon && remaining > 0; ++t) {
    const Eigen::MatrixXd actions = act(states, rng);
    if (actions.rows() != spec.action_dim || actions.cols() != episodes)
      throw UsageError("evaluate: action batch has the wrong shape");
    for (int e = 0; e < episodes; ++e) {
      if (!alive[std::size_t(e)]) continue;
      const StepResult r = env.step(states.col(e), env.clip_action(actions.col(e)));
      out.returns[std::size_t(e)] += r.reward;
      states.col(e) = r.next_state;
      if (r.done) {
        alive[std::size_t(e)] = 0;
        --remaining;
      }
    }
  }
  double sum = 0;
  for (double x : out.returns) sum += x;
  out.mean = sum / episodes;
  double sq = 0;
  for (double x : out.returns) sq += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(sq / episodes);
  return out;
}

template <typename Scalar>
EvalResult evaluate(const ConsistencyPolicy<Scalar>& policy, const Environment& env, int episodes, Rng& rng) {
  const ActionFn act = [&policy](const Eigen::MatrixXd& states, Rng& r) -> Eigen::MatrixXd {
    return policy.sample_actions(states.cast<Scalar>(), r).template cast<double>();
  };
  return evaluate(act, env, episodes, rng);
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

std::string cell(double x) {
  if (std::isnan(x)) return {};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace

const char* MetricsLog::header() {
  return "iter,policy_loss,bc_loss_part,guidance_part,q_loss,v_loss,mean_q_batch,eval_return_mean,"
         "eval_return_std,wallclock_s";
}

void MetricsLog::add(const MetricsRow& row) {
  if (!rows_.empty() && row.iter < rows_.back().iter)
    throw UsageError("metrics rows must have nondecreasing iter");
  rows_.push_back(row);
}

std::string MetricsLog::csv() const {
  std::string out;
  for (const auto& [k, v] : echo_) out += "# " + k + "=" + v + "\n";
  out += header();
  out += "\n";
  for (const auto& r : rows_) {
    out += std::to_string(r.iter);
    for (double x : {r.policy_loss, r.bc_loss_part, r.guidance_part, r.q_loss, r.v_loss, r.mean_q_batch,
                     r.eval_return_mean, r.eval_return_std, r.wallclock_s})
      out += "," + cell(x);
    out += "\n";
  }
  return out;
}

void MetricsLog::write(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << csv();
  if (!f) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

template <typename Scalar>
NetRecord record(const std::string& name, const Mlp<Scalar>& net) {
  return {name, net.widths(), net.layernorm(), net.params().template cast<float>()};
}

}  // namespace

template <typename Scalar>
Checkpoint make_checkpoint(const TrainConfig& cfg, const Agent<Scalar>& agent) {
  Checkpoint c;
  c.config = cfg.entries();
  c.nets.push_back(record("policy", agent.policy.net()));
  c.nets.push_back(record("policy_target", agent.policy_target.net()));
  c.nets.push_back(record("q1", agent.critics.q1));
  c.nets.push_back(record("q2", agent.critics.q2));
  c.nets.push_back(record("q1_target", agent.critics.q1_target));
  c.nets.push_back(record("q2_target", agent.critics.q2_target));
  if (agent.critics.v) c.nets.push_back(record("v", *agent.critics.v));
  return c;
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) {
  TrainConfig cfg;
  try {
    for (const auto& [k, v] : ckpt.config) cfg.set(k, v);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config echo is invalid: ") + e.what());
  }
  return cfg;
}

template <typename Scalar>
ConsistencyPolicy<Scalar> policy_from_checkpoint(const Checkpoint& ckpt, const EnvSpec& spec) {
  const TrainConfig cfg = config_from_checkpoint(ckpt);
  ConsistencyPolicy<Scalar> policy(spec.state_dim, spec.action_dim, cfg.hidden, schedule_from<Scalar>(cfg),
                                   spec.action_low, spec.action_high);
  const NetRecord& rec = ckpt.net("policy");
  if (rec.widths != policy.net().widths() || rec.layernorm != policy.net().layernorm())
    throw ConfigError("checkpoint policy shape does not fit environment '" + spec.name + "'");
  policy.net().set_params(rec.params.cast<Scalar>());
  return policy;
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

using Clock = std::chrono::steady_clock;

bool finite(const IterationStats& s) {
  return std::isfinite(s.policy_loss) && std::isfinite(s.bc_part) && std::isfinite(s.guidance_part) &&
         std::isfinite(s.q_loss) && (std::isnan(s.v_loss) || std::isfinite(s.v_loss)) &&
         std::isfinite(s.mean_q_batch);
}

// Shared bookkeeping for both settings: periodic evaluation, metrics rows,
// file flushing, progress lines and the nonfinite abort path.
template <typename Scalar>
class Recorder {
 public:
  Recorder(const TrainConfig& cfg, const TrainHooks& hooks, TrainResult<Scalar>& res, Rng eval_rng)
      : cfg_(cfg), hooks_(hooks), res_(res), eval_env_(make_env(cfg.env_name)), eval_rng_(eval_rng),
        start_(Clock::now()) {}

  // Returns true when the early-stop target is reached.
  bool log(long iter, const IterationStats& st) {
    const EvalResult ev = evaluate(res_.agent.policy, eval_env_, cfg_.eval_episodes, eval_rng_);
    MetricsRow row = row_from(iter, st);
    row.eval_return_mean = ev.mean;
    row.eval_return_std = ev.std;
    res_.metrics.add(row);
    res_.final_eval = ev.mean;
    res_.best_eval = std::max(res_.best_eval, ev.mean);
    flush();
    if (!cfg_.checkpoint_path.empty()) write_checkpoint(cfg_.checkpoint_path, make_checkpoint(cfg_, res_.agent));
    if (hooks_.progress != nullptr) {
      *hooks_.progress << "iter=" << iter << " policy_loss=" << cell(st.policy_loss) << " q_loss=" << cell(st.q_loss)
                       << " eval=" << cell(ev.mean) << std::endl;
    }
    return cfg_.target_return && ev.mean >= *cfg_.target_return;
  }

  [[noreturn]] void abort(long iter, const IterationStats& st, const std::string& why) {
    MetricsRow row = row_from(iter, st);
    row.eval_return_mean = std::numeric_limits<double>::quiet_NaN();
    row.eval_return_std = std::numeric_limits<double>::quiet_NaN();
    res_.metrics.add(row);
    flush();
    throw TrainingError("training aborted at iteration " + std::to_string(iter) + ": " + why);
  }

 private:
  MetricsRow row_from(long iter, const IterationStats& st) const {
    MetricsRow row;
    row.iter = iter;
    row.policy_loss = st.policy_loss;
    row.bc_loss_part = st.bc_part;
    row.guidance_part = st.guidance_part;
    row.q_loss = st.q_loss;
    row.v_loss = st.v_loss;
    row.mean_q_batch = st.mean_q_batch;
    row.wallclock_s =
        cfg_.log_wallclock ? std::chrono::duration<double>(Clock::now() - start_).count() : 0.0;
    return row;
  }

  void flush() const {
    if (!cfg_.metrics_path.empty()) res_.metrics.write(cfg_.metrics_path);
  }

  const TrainConfig& cfg_;
  const TrainHooks& hooks_;
  TrainResult<Scalar>& res_;
  Environment eval_env_;
  Rng eval_rng_;
  Clock::time_point start_;
};

IterationStats untrained_stats(const TrainConfig& cfg) {
  IterationStats st;
  if (cfg.mode == Algorithm::Cpiql) st.v_loss = 0;
  return st;
}

// Runs one update, turning nonfinite losses and gradients into an abort row.
template <typename Scalar>
IterationStats guarded_update(Recorder<Scalar>& rec, Agent<Scalar>& agent, const Batch<Scalar>& batch,
                              const TrainConfig& cfg, Rng& rng, long iter, const TrainHooks& hooks) {
  IterationStats st;
  try {
    st = update_agent(agent, batch, cfg, rng, iter, &hooks);
  } catch (const TrainingError& e) {
    IterationStats bad;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    bad.policy_loss = bad.bc_part = bad.guidance_part = bad.q_loss = bad.mean_q_batch = nan;
    rec.abort(iter, bad, e.what());
  }
  if (!finite(st)) rec.abort(iter, st, "nonfinite loss");
  if (hooks.after_update) hooks.after_update(iter, st);
  return st;
}

struct Streams {
  Rng init, batches, noise, eval, env;
  explicit Streams(std::uint64_t seed) {
    Rng master(seed);
    init = master.split();
    batches = master.split();
    noise = master.split();
    eval = master.split();
    env = master.split();
  }
};

}  // namespace

template <typename Scalar>
TrainResult<Scalar> train_offline(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.setting != Setting::Offline) throw ConfigError("train_offline needs setting=offline");
  const Environment env = make_env(cfg.env_name);
  const EnvSpec& spec = env.spec();
  if (data.state_dim() != spec.state_dim || data.action_dim() != spec.action_dim)
    throw ConfigError("dataset dimensions (" + std::to_string(data.state_dim()) + ", " +
                      std::to_string(data.action_dim()) + ") do not match environment '" + spec.name + "'");
  if (data.size() == 0) throw ConfigError("offline dataset is empty");

  Streams rs(cfg.seed);
  TrainResult<Scalar> res;
  res.agent = make_agent<Scalar>(cfg, spec, rs.init);
  res.metrics = MetricsLog(cfg.entries());
  Recorder<Scalar> rec(cfg, hooks, res, rs.eval);

  if (cfg.total_iters == 0) rec.log(0, untrained_stats(cfg));
  for (long it = 1; it <= cfg.total_iters; ++it) {
    const Batch<Scalar> batch = data.sample<Scalar>(std::size_t(cfg.batch_size), rs.batches);
    const IterationStats st = guarded_update(rec, res.agent, batch, cfg, rs.noise, it, hooks);
    res.iterations = it;
    if (it % cfg.eval_every == 0 || it == cfg.total_iters) {
      if (rec.log(it, st)) break;
    }
  }
  res.training_env_steps = env.step_count();
  return res;
}

template <typename Scalar>
TrainResult<Scalar> train_online(const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.setting != Setting::Online) throw ConfigError("train_online needs setting=online");
  const Environment env = make_env(cfg.env_name);
  const EnvSpec& spec = env.spec();

  Streams rs(cfg.seed);
  TrainResult<Scalar> res;
  res.agent = make_agent<Scalar>(cfg, spec, rs.init);
  res.metrics = MetricsLog(cfg.entries());
  Recorder<Scalar> rec(cfg, hooks, res, rs.eval);
  ReplayBuffer replay(spec.state_dim, spec.action_dim, std::size_t(cfg.buffer_capacity));

  Eigen::VectorXd state = env.reset(&rs.env);
  int t = 0;
  auto env_step = [&] {
    const Eigen::VectorXd action =
        res.agent.policy.sample_action(state.cast<Scalar>(), rs.env).template cast<double>();
    const StepResult r = env.step(state, action);
    replay.push({state, action, r.reward, r.next_state, r.done});
    if (r.done || ++t >= spec.horizon) {
      state = env.reset(&rs.env);
      t = 0;
    } else {
      state = r.next_state;
    }
  };

  for (long w = 0; w < cfg.warmup; ++w) env_step();
  if (cfg.total_iters == 0) rec.log(0, untrained_stats(cfg));
  for (long it = 1; it <= cfg.total_iters; ++it) {
    env_step();
    if (hooks.before_update) hooks.before_update(it, replay.size());
    const Batch<Scalar> batch = replay.sample<Scalar>(std::size_t(cfg.batch_size), rs.batches);
    const IterationStats st = guarded_update(rec, res.agent, batch, cfg, rs.noise, it, hooks);
    res.iterations = it;
    if (it % cfg.eval_every == 0 || it == cfg.total_iters) {
      if (rec.log(it, st)) break;
    }
  }
  res.training_env_steps = env.step_count();
  res.replay_size = replay.size();
  return res;
}

RunSummary run_training(const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.setting == Setting::Offline && cfg.dataset_path.empty())
    throw ConfigError("offline training needs dataset_path");
  auto run = [&]<typename Scalar>() {
    TrainResult<Scalar> res = cfg.setting == Setting::Offline
                                  ? train_offline<Scalar>(cfg, read_dataset(cfg.dataset_path), hooks)
                                  : train_online<Scalar>(cfg, hooks);
    return RunSummary{res.iterations, res.best_eval, res.final_eval, std::move(res.metrics)};
  };
  return cfg.precision == Precision::F32 ? run.template operator()<float>() : run.template operator()<double>();
}

// ---------------------------------------------------------------------------
// Benchmark

double BenchResult::speedup_over(int n) const {
  for (const auto& e : euler)
    if (e.steps_per_action == n) return consistency.sps / e.sps;
  throw UsageError("no Euler timing for n=" + std::to_string(n));
}

namespace {

using ActOne = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

SamplerTiming time_sampler(const std::string& name, int n, const Environment& env, long steps, const ActOne& act,
                           const std::function<std::uint64_t()>& forwards) {
  SamplerTiming out;
  out.sampler = name;
  out.steps_per_action = n;
  out.env_steps = steps;
  Eigen::VectorXd state = env.reset();
  int t = 0;
  const std::uint64_t f0 = forwards();
  const auto start = Clock::now();
  for (long i = 0; i < steps; ++i) {
    const StepResult r = env.step(state, act(state));
    if (r.done || ++t >= env.spec().horizon) {
      state = env.reset();
      t = 0;
    } else {
      state = r.next_state;
    }
  }
  out.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  out.sps = double(steps) / out.seconds;
  out.forwards_per_action = double(forwards() - f0) / double(steps);
  return out;
}

}  // namespace

BenchResult benchmark(const BenchConfig& bc, std::ostream* progress) {
  if (bc.sample_steps < 1) throw ConfigError("benchmark needs at least one sampling step");
  const Environment env = make_env(bc.env_name);
  const EnvSpec& spec = env.spec();
  TrainConfig cfg;
  cfg.env_name = bc.env_name;
  cfg.hidden = bc.hidden;
  cfg.batch_size = bc.batch_size;
  cfg.seed = bc.seed;
  cfg.validate();

  Streams rs(bc.seed);
  Agent<double> agent = make_agent<double>(cfg, spec, rs.init);
  BenchResult out;
  if (bc.train_iters > 0) {
    const Dataset data = generate_dataset(bc.env_name, "random", 10000, rs.env);
    const auto start = Clock::now();
    for (long it = 1; it <= bc.train_iters; ++it)
      update_agent(agent, data.sample<double>(std::size_t(bc.batch_size), rs.batches), cfg, rs.noise, it);
    out.train_iters = bc.train_iters;
    out.train_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    out.ips_consistency = double(bc.train_iters) / out.train_seconds;
    if (progress != nullptr)
      *progress << "bench training iters=" << bc.train_iters << " ips=" << cell(out.ips_consistency) << std::endl;
  }

  const ConsistencyPolicy<double>& policy = agent.policy;
  Rng sample_rng = rs.eval;
  out.consistency = time_sampler(
      "consistency", 1, env, bc.sample_steps,
      [&](const Eigen::VectorXd& s) { return policy.sample_action(s, sample_rng); },
      [&] { return policy.forward_count(); });
  if (progress != nullptr)
    *progress << "bench sampler=consistency sps=" << cell(out.consistency.sps)
              << " forwards_per_action=" << cell(out.consistency.forwards_per_action) << std::endl;

  for (int n : bc.euler_steps) {
    DenoiserPolicy<double> denoiser(spec.state_dim, spec.action_dim, bc.hidden, schedule_from<double>(cfg),
                                    spec.action_low, spec.action_high, n);
    denoiser.net().init_uniform(rs.init);
    SamplerTiming timing = time_sampler(
        "euler", n, env, bc.sample_steps,
        [&](const Eigen::VectorXd& s) { return denoiser.euler_sample(s, sample_rng); },
        [&] { return denoiser.forward_count(); });
    if (progress != nullptr)
      *progress << "bench sampler=euler-" << n << " sps=" << cell(timing.sps)
                << " forwards_per_action=" << cell(timing.forwards_per_action)
                << " speedup=" << cell(out.consistency.sps / timing.sps) << std::endl;
    out.euler.push_back(std::move(timing));
  }
  return out;
}

// ---------------------------------------------------------------------------

#define CPQL_INSTANTIATE(S)                                                                              \
  template DiffusionSchedule<S> schedule_from<S>(const TrainConfig&);                                     \
  template Agent<S> make_agent<S>(const TrainConfig&, const EnvSpec&, Rng&);                              \
  template IterationStats update_agent<S>(Agent<S>&, const Batch<S>&, const TrainConfig&, Rng&, long,     \
                                          const TrainHooks*);                                             \
  template EvalResult evaluate<S>(const ConsistencyPolicy<S>&, const Environment&, int, Rng&);            \
  template Checkpoint make_checkpoint<S>(const TrainConfig&, const Agent<S>&);                            \
  template ConsistencyPolicy<S> policy_from_checkpoint<S>(const Checkpoint&, const EnvSpec&);             \
  template TrainResult<S> train_offline<S>(const TrainConfig&, const Dataset&, const TrainHooks&);        \
  template TrainResult<S> train_online<S>(const TrainConfig&, const TrainHooks&);

CPQL_INSTANTIATE(float)
CPQL_INSTANTIATE(double)

#undef CPQL_INSTANTIATE

}  // namespace cpql
