#include "cpql/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>

#include "cpql/errors.hpp"

namespace cpql {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

long to_long(const std::string& key, const std::string& v) {
  long x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

template <typename E>
E pick(const std::string& key, const std::string& v, const std::map<std::string, E>& options) {
  const auto it = options.find(v);
  if (it != options.end()) return it->second;
  std::string valid;
  for (const auto& [name, _] : options) valid += (valid.empty() ? "" : ", ") + name;
  throw ConfigError("config key '" + key + "': '" + v + "' is not one of " + valid);
}

template <typename E>
std::string name_of(E value, const std::map<std::string, E>& options) {
  for (const auto& [name, e] : options)
    if (e == value) return name;
  return "?";
}

const std::map<std::string, Algorithm> kModes = {{"cpql", Algorithm::Cpql}, {"cpiql", Algorithm::Cpiql}};
const std::map<std::string, Setting> kSettings = {{"offline", Setting::Offline},
                                                  {"online", Setting::Online}};
const std::map<std::string, LossMode> kLossModes = {{"reconstruction", LossMode::Reconstruction},
                                                    {"consistency", LossMode::Consistency}};
const std::map<std::string, Precision> kPrecisions = {{"f64", Precision::F64}, {"f32", Precision::F32}};

}  // namespace

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  using Setter = std::function<void(TrainConfig&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"mode", [](TrainConfig& c, const std::string& x) { c.mode = pick("mode", x, kModes); }},
      {"setting", [](TrainConfig& c, const std::string& x) { c.setting = pick("setting", x, kSettings); }},
      {"alpha", [](TrainConfig& c, const std::string& x) { c.alpha = to_double("alpha", x); }},
      {"eta", [](TrainConfig& c, const std::string& x) { c.eta = to_double("eta", x); }},
      {"tau", [](TrainConfig& c, const std::string& x) { c.tau = to_double("tau", x); }},
      {"gamma", [](TrainConfig& c, const std::string& x) { c.gamma = to_double("gamma", x); }},
      {"lr_policy", [](TrainConfig& c, const std::string& x) { c.lr_policy = to_double("lr_policy", x); }},
      {"lr_critic", [](TrainConfig& c, const std::string& x) { c.lr_critic = to_double("lr_critic", x); }},
      {"rho_polyak", [](TrainConfig& c, const std::string& x) { c.rho_polyak = to_double("rho_polyak", x); }},
      {"batch_size", [](TrainConfig& c, const std::string& x) { c.batch_size = int(to_long("batch_size", x)); }},
      {"loss_mode", [](TrainConfig& c, const std::string& x) { c.loss_mode = pick("loss_mode", x, kLossModes); }},
      {"M", [](TrainConfig& c, const std::string& x) { c.M = int(to_long("M", x)); }},
      {"eps", [](TrainConfig& c, const std::string& x) { c.eps = to_double("eps", x); }},
      {"K", [](TrainConfig& c, const std::string& x) { c.K = to_double("K", x); }},
      {"rho_karras", [](TrainConfig& c, const std::string& x) { c.rho_karras = to_double("rho_karras", x); }},
      {"sigma_data", [](TrainConfig& c, const std::string& x) { c.sigma_data = to_double("sigma_data", x); }},
      {"hidden", [](TrainConfig& c, const std::string& x) { c.hidden = int(to_long("hidden", x)); }},
      {"warmup", [](TrainConfig& c, const std::string& x) { c.warmup = to_long("warmup", x); }},
      {"total_iters", [](TrainConfig& c, const std::string& x) { c.total_iters = to_long("total_iters", x); }},
      {"eval_every", [](TrainConfig& c, const std::string& x) { c.eval_every = to_long("eval_every", x); }},
      {"eval_episodes", [](TrainConfig& c, const std::string& x) { c.eval_episodes = int(to_long("eval_episodes", x)); }},
      {"seed", [](TrainConfig& c, const std::string& x) { c.seed = to_u64("seed", x); }},
      {"dataset_path", [](TrainConfig& c, const std::string& x) { c.dataset_path = x; }},
      {"env_name", [](TrainConfig& c, const std::string& x) { c.env_name = x; }},
      {"metrics_path", [](TrainConfig& c, const std::string& x) { c.metrics_path = x; }},
      {"checkpoint_path", [](TrainConfig& c, const std::string& x) { c.checkpoint_path = x; }},
      {"buffer_capacity", [](TrainConfig& c, const std::string& x) { c.buffer_capacity = to_long("buffer_capacity", x); }},
      {"precision", [](TrainConfig& c, const std::string& x) { c.precision = pick("precision", x, kPrecisions); }},
      {"log_wallclock", [](TrainConfig& c, const std::string& x) { c.log_wallclock = to_bool("log_wallclock", x); }},
      {"target_return",
       [](TrainConfig& c, const std::string& x) {
         if (x.empty() || x == "none") c.target_return.reset();
         else c.target_return = to_double("target_return", x);
       }},
  };
  const auto it = setters.find(trim(key));
  if (it == setters.end()) throw ConfigError("unknown config key '" + trim(key) + "'");
  it->second(*this, v);
}

std::vector<std::pair<std::string, std::string>> TrainConfig::entries() const {
  return {
      {"mode", name_of(mode, kModes)},
      {"setting", name_of(setting, kSettings)},
      {"alpha", format_double(alpha)},
      {"eta", format_double(eta)},
      {"tau", format_double(tau)},
      {"gamma", format_double(gamma)},
      {"lr_policy", format_double(lr_policy)},
      {"lr_critic", format_double(lr_critic)},
      {"rho_polyak", format_double(rho_polyak)},
      {"batch_size", std::to_string(batch_size)},
      {"loss_mode", name_of(loss_mode, kLossModes)},
      {"M", std::to_string(M)},
      {"eps", format_double(eps)},
      {"K", format_double(K)},
      {"rho_karras", format_double(rho_karras)},
      {"sigma_data", format_double(sigma_data)},
      {"hidden", std::to_string(hidden)},
      {"warmup", std::to_string(warmup)},
      {"total_iters", std::to_string(total_iters)},
      {"eval_every", std::to_string(eval_every)},
      {"eval_episodes", std::to_string(eval_episodes)},
      {"seed", std::to_string(seed)},
      {"dataset_path", dataset_path},
      {"env_name", env_name},
      {"metrics_path", metrics_path},
      {"checkpoint_path", checkpoint_path},
      {"buffer_capacity", std::to_string(buffer_capacity)},
      {"precision", name_of(precision, kPrecisions)},
      {"log_wallclock", log_wallclock ? "true" : "false"},
      {"target_return", target_return ? format_double(*target_return) : "none"},
  };
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (mode == Algorithm::Cpiql && setting != Setting::Offline) fail("cpiql is defined for the offline setting only");
  if (!(alpha >= 0.0)) fail("alpha must be >= 0");
  if (!(eta >= 0.0)) fail("eta must be >= 0");
  if (!(tau > 0.0 && tau < 1.0)) fail("tau must lie in (0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
  if (!(lr_policy > 0.0) || !(lr_critic > 0.0)) fail("learning rates must be positive");
  if (!(rho_polyak >= 0.0 && rho_polyak <= 1.0)) fail("rho_polyak must lie in [0, 1]");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (M < 2) fail("M must be >= 2");
  if (!(eps > 0.0 && eps < K)) fail("schedule requires 0 < eps < K");
  if (!(rho_karras > 0.0)) fail("rho_karras must be positive");
  if (!(sigma_data > 0.0)) fail("sigma_data must be positive");
  if (hidden < 1) fail("hidden must be >= 1");
  if (warmup < 0 || total_iters < 0) fail("warmup and total_iters must be >= 0");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (eval_episodes < 1) fail("eval_episodes must be >= 1");
  if (buffer_capacity < 1) fail("buffer_capacity must be >= 1");
}

TrainConfig parse_config(std::istream& in, const std::string& source) {
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      cfg.set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  return parse_config(in, path);
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  cfg.set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

}  // namespace cpql
