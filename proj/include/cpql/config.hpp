#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpql/objective.hpp"

namespace cpql {

enum class Algorithm { Cpql, Cpiql };
enum class Setting { Offline, Online };
enum class Precision { F64, F32 };

/// Every knob of the offline and online training loops. Keys accepted by
/// `set` and emitted by `entries` are the field names below.
struct TrainConfig {
  Algorithm mode = Algorithm::Cpql;
  Setting setting = Setting::Offline;
  double alpha = 1.0;
  double eta = 1.0;
  double tau = 0.7;
  double gamma = 0.99;
  double lr_policy = 3e-4;
  double lr_critic = 3e-4;
  double rho_polyak = 0.995;
  int batch_size = 256;
  LossMode loss_mode = LossMode::Reconstruction;
  int M = 40;
  double eps = 0.002;
  double K = 80.0;
  double rho_karras = 7.0;
  double sigma_data = 0.5;
  int hidden = 256;
  long warmup = 1000;
  long total_iters = 10000;
  long eval_every = 1000;
  int eval_episodes = 10;
  std::uint64_t seed = 0;
  std::string dataset_path;
  std::string env_name = "bimodal-reach";
  std::string metrics_path;
  std::string checkpoint_path;
  long buffer_capacity = 1000000;
  Precision precision = Precision::F64;
  bool log_wallclock = true;
  /// Stop early once an evaluation reaches this mean return.
  std::optional<double> target_return;

  /// Throws ConfigError naming the key on unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Ordered key/value echo; `set` over these reproduces the config exactly.
  std::vector<std::pair<std::string, std::string>> entries() const;
  /// Cross-field checks (cpiql requires offline, ranges, ...).
  void validate() const;

  GuidanceWeights weights() const { return {alpha, eta, loss_mode}; }
};

/// `key = value` per line, `#` starts a comment.
TrainConfig parse_config(std::istream& in, const std::string& source = "<config>");
/// Missing or unreadable files raise UsageError naming the path.
TrainConfig load_config(const std::string& path);
/// Applies a `key=value` override string.
void apply_override(TrainConfig& cfg, const std::string& assignment);

std::string format_double(double x);

}  // namespace cpql
