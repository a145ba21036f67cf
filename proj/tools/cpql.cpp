// Command-line front end: gen-data, train, eval, bench.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpql/config.hpp"
#include "cpql/data.hpp"
#include "cpql/errors.hpp"
#include "cpql/runtime.hpp"
#include "cpql/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

int run(int argc, char** argv) {
  CLI::App app{"Consistency policy with Q-learning: data generation, training, evaluation, benchmarks"};
  app.require_subcommand(1);

  std::string env_name, behavior, out_path;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Roll out a behavior policy and write a dataset file");
  gen->add_option("--env", env_name, "Environment name")->required();
  gen->add_option("--behavior", behavior, "bimodal | random | scripted-pd")->required();
  gen->add_option("--n", n, "Number of transitions")->required();
  gen->add_option("--out", out_path, "Output path")->required();
  gen->add_option("--seed", seed, "Random seed");

  std::string config_path;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "Train from a key = value config file");
  train->add_option("--config", config_path, "Config file")->required();
  train->add_option("--override", overrides, "key=value, repeatable; applied after the file");

  std::string ckpt_path;
  int episodes = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate the policy stored in a checkpoint");
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--env", env_name, "Environment name")->required();
  eval->add_option("--episodes", episodes, "Episodes")->required()->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed, "Random seed");

  cpql::BenchConfig bc;
  auto* bench = app.add_subcommand("bench", "Time training iterations and one-step vs Euler sampling");
  bench->add_option("--env", bc.env_name, "Environment name")->required();
  bench->add_option("--euler-steps", bc.euler_steps, "Euler step counts")->delimiter(',');
  bench->add_option("--iters", bc.train_iters, "Training iterations to time");
  bench->add_option("--steps", bc.sample_steps, "Environment steps per sampler");
  bench->add_option("--hidden", bc.hidden, "Hidden width");
  bench->add_option("--batch", bc.batch_size, "Batch size");
  bench->add_option("--seed", bc.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      cpql::Rng rng(seed);
      const cpql::Dataset data = cpql::generate_dataset(env_name, behavior, n, rng);
      cpql::write_dataset(out_path, data);
      std::cout << "wrote " << data.size() << " transitions to " << out_path << "\n";
    } else if (train->parsed()) {
      cpql::TrainConfig cfg = cpql::load_config(config_path);
      for (const auto& o : overrides) cpql::apply_override(cfg, o);
      cpql::TrainHooks hooks;
      hooks.progress = &std::cout;
      const cpql::RunSummary s = cpql::run_training(cfg, hooks);
      std::cout << "done iters=" << s.iterations << " final_eval=" << s.final_eval
                << " best_eval=" << s.best_eval << "\n";
    } else if (eval->parsed()) {
      const cpql::Checkpoint ckpt = cpql::read_checkpoint(ckpt_path);
      const cpql::Environment env = cpql::make_env(env_name);
      const auto policy = cpql::policy_from_checkpoint<double>(ckpt, env.spec());
      cpql::Rng rng(seed);
      const cpql::EvalResult r = cpql::evaluate(policy, env, episodes, rng);
      std::cout << "eval_return_mean=" << r.mean << " eval_return_std=" << r.std << "\n";
    } else if (bench->parsed()) {
      cpql::benchmark(bc, &std::cout);
    }
  } catch (const cpql::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cpql::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  cpql::tune_allocator();
  return run(argc, argv);
}
