#include "cpql/rng.hpp"

namespace cpql {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed)) {}

double Rng::normal() {
  ++counter_;
  return gauss_(engine_);
}

double Rng::uniform() {
  ++counter_;
  // 53 random bits -> [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  ++counter_;
  std::uniform_int_distribution<std::int64_t> dist(lo, hi);
  return dist(engine_);
}

Rng Rng::split() {
  ++splits_;
  return Rng(mix_seed(seed_ ^ mix_seed(splits_ + 0x5851F42D4C957F2DULL)));
}

bool operator==(const Rng& a, const Rng& b) {
  return a.seed_ == b.seed_ && a.counter_ == b.counter_ && a.splits_ == b.splits_ &&
         a.engine_ == b.engine_ && a.gauss_ == b.gauss_;
}

}  // namespace cpql
