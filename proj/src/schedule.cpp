#include "cpql/schedule.hpp"

namespace cpql {

std::vector<double> karras_boundaries(int count, double eps, double k_max, double rho) {
  if (count < 2) throw ConfigError("schedule needs at least 2 boundaries, got " + std::to_string(count));
  if (!(eps > 0.0 && eps < k_max)) throw ConfigError("schedule requires 0 < eps < K");
  if (!(rho > 0.0)) throw ConfigError("schedule exponent rho must be positive");
  const double lo = std::pow(eps, 1.0 / rho);
  const double hi = std::pow(k_max, 1.0 / rho);
  std::vector<double> k(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(count - 1);
    k[std::size_t(i)] = std::pow(lo + frac * (hi - lo), rho);
  }
  k.front() = eps;
  k.back() = k_max;
  return k;
}

}  // namespace cpql
