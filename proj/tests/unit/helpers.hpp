#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "cpql/mlp.hpp"
#include "cpql/rng.hpp"

namespace testutil {

/// Central differences of `loss` with respect to `params`, which `loss`
/// reads through the reference.
inline Eigen::VectorXd numeric_grad(Eigen::VectorXd& params, const std::function<double()>& loss,
                                    double h = 1e-5) {
  Eigen::VectorXd g(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss();
    params[i] = keep - h;
    const double down = loss();
    params[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_err(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
  return (analytic - numeric).norm() / scale;
}

inline Eigen::MatrixXd random_matrix(cpql::Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  return scale * rng.normal_matrix<double>(r, c);
}

/// Unique scratch path under the system temp directory.
inline std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "cpql_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace testutil
