#include "cpql/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cpql/envs.hpp"
#include "byteio.hpp"

namespace cpql {

// ---------------------------------------------------------------------------
// TransitionTable

TransitionTable::TransitionTable(int state_dim, int action_dim)
    : state_dim_(state_dim), action_dim_(action_dim) {
  if (state_dim <= 0 || action_dim <= 0)
    throw UsageError("transition dimensions must be positive");
}

void TransitionTable::reserve(std::size_t n) {
  states_.reserve(n * state_dim_);
  actions_.reserve(n * action_dim_);
  rewards_.reserve(n);
  next_states_.reserve(n * state_dim_);
  dones_.reserve(n);
}

void TransitionTable::check(const Transition& t) const {
  if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ ||
      t.action.size() != action_dim_)
    throw UsageError("transition dimensions do not match the table (" +
                     std::to_string(state_dim_) + ", " + std::to_string(action_dim_) + ")");
}

void TransitionTable::push_back(const Transition& t) {
  check(t);
  states_.insert(states_.end(), t.state.data(), t.state.data() + state_dim_);
  actions_.insert(actions_.end(), t.action.data(), t.action.data() + action_dim_);
  rewards_.push_back(t.reward);
  next_states_.insert(next_states_.end(), t.next_state.data(), t.next_state.data() + state_dim_);
  dones_.push_back(t.done ? 1.0 : 0.0);
}

void TransitionTable::set(std::size_t i, const Transition& t) {
  check(t);
  if (i >= size()) throw UsageError("transition index out of range");
  std::copy_n(t.state.data(), state_dim_, states_.begin() + std::ptrdiff_t(i * state_dim_));
  std::copy_n(t.action.data(), action_dim_, actions_.begin() + std::ptrdiff_t(i * action_dim_));
  rewards_[i] = t.reward;
  std::copy_n(t.next_state.data(), state_dim_,
              next_states_.begin() + std::ptrdiff_t(i * state_dim_));
  dones_[i] = t.done ? 1.0 : 0.0;
}

Transition TransitionTable::at(std::size_t i) const {
  if (i >= size()) throw UsageError("transition index out of range");
  Transition t;
  t.state = Eigen::Map<const Eigen::VectorXd>(states_.data() + i * state_dim_, state_dim_);
  t.action = Eigen::Map<const Eigen::VectorXd>(actions_.data() + i * action_dim_, action_dim_);
  t.reward = rewards_[i];
  t.next_state = Eigen::Map<const Eigen::VectorXd>(next_states_.data() + i * state_dim_, state_dim_);
  t.done = dones_[i] != 0.0;
  return t;
}

template <typename Scalar>
Batch<Scalar> TransitionTable::gather(const std::vector<std::size_t>& indices) const {
  const auto n = Eigen::Index(indices.size());
  Batch<Scalar> b;
  b.states.resize(state_dim_, n);
  b.actions.resize(action_dim_, n);
  b.rewards.resize(n);
  b.next_states.resize(state_dim_, n);
  b.dones.resize(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const std::size_t i = indices[std::size_t(c)];
    for (int r = 0; r < state_dim_; ++r) {
      b.states(r, c) = Scalar(states_[i * state_dim_ + r]);
      b.next_states(r, c) = Scalar(next_states_[i * state_dim_ + r]);
    }
    for (int r = 0; r < action_dim_; ++r) b.actions(r, c) = Scalar(actions_[i * action_dim_ + r]);
    b.rewards[c] = Scalar(rewards_[i]);
    b.dones[c] = Scalar(dones_[i]);
  }
  return b;
}

template Batch<float> TransitionTable::gather<float>(const std::vector<std::size_t>&) const;
template Batch<double> TransitionTable::gather<double>(const std::vector<std::size_t>&) const;

Eigen::Map<const Eigen::MatrixXd> TransitionTable::states() const {
  return {states_.data(), state_dim_, Eigen::Index(size())};
}
Eigen::Map<const Eigen::MatrixXd> TransitionTable::actions() const {
  return {actions_.data(), action_dim_, Eigen::Index(size())};
}
Eigen::Map<const Eigen::VectorXd> TransitionTable::rewards() const {
  return {rewards_.data(), Eigen::Index(size())};
}

namespace {

std::vector<std::size_t> uniform_indices(std::size_t population, std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = std::size_t(rng.uniform_int(0, std::int64_t(population) - 1));
  return idx;
}

}  // namespace

template <typename Scalar>
Batch<Scalar> Dataset::sample(std::size_t batch_size, Rng& rng) const {
  if (table_.empty()) throw UsageError("cannot sample from an empty dataset");
  return table_.gather<Scalar>(uniform_indices(size(), batch_size, rng));
}

template Batch<float> Dataset::sample<float>(std::size_t, Rng&) const;
template Batch<double> Dataset::sample<double>(std::size_t, Rng&) const;

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(int state_dim, int action_dim, std::size_t capacity)
    : table_(state_dim, action_dim), capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
  table_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(const Transition& t) {
  if (table_.size() < capacity_) {
    table_.push_back(t);
  } else {
    table_.set(cursor_, t);
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

Transition ReplayBuffer::at(std::size_t i) const {
  if (i >= size()) throw UsageError("replay index out of range");
  const std::size_t oldest = size() < capacity_ ? 0 : cursor_;
  return table_.at((oldest + i) % capacity_);
}

template <typename Scalar>
Batch<Scalar> ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  if (table_.empty()) throw UsageError("cannot sample from an empty replay buffer");
  return table_.gather<Scalar>(uniform_indices(size(), batch_size, rng));
}

template Batch<float> ReplayBuffer::sample<float>(std::size_t, Rng&) const;
template Batch<double> ReplayBuffer::sample<double>(std::size_t, Rng&) const;

// ---------------------------------------------------------------------------
// Binary format

namespace {

using byteio::get_f32;
using byteio::get_le;
using byteio::put_f32;
using byteio::put_le;

constexpr std::size_t kDatasetHeaderBytes = 4 + 4 + 4 + 4 + 8;

}  // namespace

void write_dataset(const std::string& path, const Dataset& data) {
  const int sd = data.state_dim();
  const int ad = data.action_dim();
  if (sd <= 0 || ad <= 0) throw UsageError("write_dataset: dataset has no dimensions");
  std::string buf;
  buf.reserve(kDatasetHeaderBytes + data.size() * 4 * std::size_t(2 * sd + ad + 2));
  buf.append(kDatasetMagic, 4);
  put_le<std::uint32_t>(buf, kDatasetVersion);
  put_le<std::uint32_t>(buf, std::uint32_t(sd));
  put_le<std::uint32_t>(buf, std::uint32_t(ad));
  put_le<std::uint64_t>(buf, std::uint64_t(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Transition t = data.at(i);
    for (double x : t.state) put_f32(buf, x);
    for (double x : t.action) put_f32(buf, x);
    put_f32(buf, t.reward);
    for (double x : t.next_state) put_f32(buf, x);
    put_f32(buf, t.done ? 1.0 : 0.0);
  }
  byteio::spit(path, buf);
}

Dataset read_dataset(const std::string& path) {
  const std::string bytes = byteio::slurp(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(p, kDatasetMagic, 4) != 0)
    throw BadMagicError("'" + path + "' is not a dataset file (bad magic)");
  if (bytes.size() < kDatasetHeaderBytes)
    throw TruncatedFileError("'" + path + "' is truncated inside the header");
  const auto version = get_le<std::uint32_t>(p + 4);
  if (version != kDatasetVersion)
    throw VersionMismatchError("'" + path + "' has dataset version " + std::to_string(version) +
                               ", expected " + std::to_string(kDatasetVersion));
  const auto sd = get_le<std::uint32_t>(p + 8);
  const auto ad = get_le<std::uint32_t>(p + 12);
  const auto count = get_le<std::uint64_t>(p + 16);
  if (sd == 0 || ad == 0 || sd > (1u << 20) || ad > (1u << 20))
    throw FormatError("'" + path + "' declares invalid dimensions");
  const std::uint64_t record = 4ull * (2ull * sd + ad + 2ull);
  const std::uint64_t payload = bytes.size() - kDatasetHeaderBytes;
  if (count > payload / record)
    throw TruncatedFileError("'" + path + "' is truncated: header promises " +
                             std::to_string(count) + " records");
  if (payload != count * record)
    throw FormatError("'" + path + "' has trailing bytes after " + std::to_string(count) +
                      " records");

  Dataset data{int(sd), int(ad)};
  data.table().reserve(std::size_t(count));
  const unsigned char* q = p + kDatasetHeaderBytes;
  Transition t;
  t.state.resize(sd);
  t.action.resize(ad);
  t.next_state.resize(sd);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (std::uint32_t j = 0; j < sd; ++j, q += 4) t.state[j] = get_f32(q);
    for (std::uint32_t j = 0; j < ad; ++j, q += 4) t.action[j] = get_f32(q);
    t.reward = get_f32(q);
    q += 4;
    for (std::uint32_t j = 0; j < sd; ++j, q += 4) t.next_state[j] = get_f32(q);
    const double done = get_f32(q);
    q += 4;
    if (done != 0.0 && done != 1.0)
      throw FormatError("'" + path + "' record " + std::to_string(i) + " has done flag not in {0,1}");
    t.done = done == 1.0;
    data.push_back(t);
  }
  return data;
}

// ---------------------------------------------------------------------------
// CSV import

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return cells;
}

}  // namespace

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("'" + path + "' is empty");
  const auto header = split_csv_line(line);
  int sd = 0, ad = 0, nsd = 0;
  std::size_t col = 0;
  while (col < header.size() && header[col] == "s" + std::to_string(sd)) ++sd, ++col;
  while (col < header.size() && header[col] == "a" + std::to_string(ad)) ++ad, ++col;
  if (col >= header.size() || header[col] != "r")
    throw FormatError("'" + path + "': expected column 'r' after state and action columns");
  ++col;
  while (col < header.size() && header[col] == "ns" + std::to_string(nsd)) ++nsd, ++col;
  if (col + 1 != header.size() || header[col] != "done")
    throw FormatError("'" + path + "': expected final column 'done'");
  if (sd == 0 || ad == 0 || nsd != sd)
    throw FormatError("'" + path + "': header needs s0.., a0.. and matching ns0.. columns");

  Dataset data(sd, ad);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " fields");
    std::vector<double> v(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        std::size_t used = 0;
        v[i] = std::stod(cells[i], &used);
        if (used != cells[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": bad number '" +
                          cells[i] + "'");
      }
    }
    Transition t;
    t.state = Eigen::Map<Eigen::VectorXd>(v.data(), sd);
    t.action = Eigen::Map<Eigen::VectorXd>(v.data() + sd, ad);
    t.reward = v[std::size_t(sd + ad)];
    t.next_state = Eigen::Map<Eigen::VectorXd>(v.data() + sd + ad + 1, sd);
    const double done = v.back();
    if (done != 0.0 && done != 1.0)
      throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": done must be 0 or 1");
    t.done = done == 1.0;
    data.push_back(t);
  }
  return data;
}

// ---------------------------------------------------------------------------
// Scripted collection

namespace {

Eigen::VectorXd scripted_pd(const Environment& env, const Eigen::VectorXd& s) {
  if (env.kind() == Environment::Kind::PointMass2d) {
    const Eigen::Vector2d p = s.head<2>();
    const Eigen::Vector2d v = s.tail<2>();
    return env.clip_action(2.0 * (Eigen::Vector2d(1.0, 1.0) - p) - v);
  }
  // Pendulum: pump energy E = 0.5 w^2 + 15 (cos th - 1) toward 0, then
  // balance with PD once near upright.
  const double theta = std::atan2(s[1], s[0]);
  const double speed = s[2];
  Eigen::VectorXd u(1);
  if (std::cos(theta) > 0.85) {
    u[0] = -(10.0 * theta + 2.0 * speed);
  } else if (std::abs(speed) < 1e-3) {
    u[0] = 2.0;
  } else {
    const double energy = 0.5 * speed * speed + 15.0 * (std::cos(theta) - 1.0);
    u[0] = -2.0 * energy * speed;
  }
  return env.clip_action(u);
}

}  // namespace

Dataset generate_dataset(const std::string& env_name, const std::string& behavior, std::size_t n,
                         Rng& rng) {
  const Environment env = make_env(env_name);
  const auto& spec = env.spec();
  const bool bimodal = behavior == "bimodal";
  const bool random = behavior == "random";
  const bool scripted = behavior == "scripted-pd";
  if (!bimodal && !random && !scripted)
    throw ConfigError("unknown behavior '" + behavior + "' (valid: bimodal, random, scripted-pd)");
  if (bimodal && env.kind() != Environment::Kind::BimodalReach)
    throw ConfigError("behavior 'bimodal' only applies to bimodal-reach");
  if (scripted && env.kind() == Environment::Kind::BimodalReach)
    throw ConfigError("behavior 'scripted-pd' applies to point-mass-2d and pendulum-swingup");

  Dataset data(spec.state_dim, spec.action_dim);
  data.table().reserve(n);
  Eigen::VectorXd state = env.reset(&rng);
  int t = 0;
  while (data.size() < n) {
    Eigen::VectorXd action(spec.action_dim);
    if (bimodal) {
      const double center = rng.uniform() < 0.5 ? 0.8 : -0.8;
      action[0] = center + 0.05 * rng.normal();
      action = env.clip_action(action);
    } else if (random) {
      for (int j = 0; j < spec.action_dim; ++j)
        action[j] = rng.uniform(spec.action_low[j], spec.action_high[j]);
    } else {
      action = scripted_pd(env, state);
    }
    StepResult r = env.step(state, action);
    data.push_back({state, action, r.reward, r.next_state, r.done});
    ++t;
    if (r.done || t >= spec.horizon) {
      state = env.reset(&rng);
      t = 0;
    } else {
      state = std::move(r.next_state);
    }
  }
  return data;
}

}  // namespace cpql
