#pragma once

// Active-set nonnegative least squares (Lawson & Hanson):
//   minimize ||A x - b||_2  subject to  x >= 0.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace faasmeter::linalg {

struct NnlsResult {
  Eigen::VectorXd x;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = true;
};

namespace detail {

// Least-squares solve restricted to the passive columns; minimum-norm when the
// passive submatrix is rank deficient.
inline Eigen::VectorXd solve_passive(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                     const std::vector<Eigen::Index>& passive) {
  Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(passive.size()));
  for (std::size_t k = 0; k < passive.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = a.col(passive[k]);
  Eigen::VectorXd z = sub.completeOrthogonalDecomposition().solve(b);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(a.cols());
  for (std::size_t k = 0; k < passive.size(); ++k) full(passive[k]) = z(static_cast<Eigen::Index>(k));
  return full;
}

}  // namespace detail

inline NnlsResult nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, int max_iterations = 0) {
  const Eigen::Index n = a.cols();
  NnlsResult result;
  result.x = Eigen::VectorXd::Zero(n);
  if (n == 0 || a.rows() == 0) {
    result.residual_norm = b.norm();
    return result;
  }
  if (max_iterations <= 0) max_iterations = static_cast<int>(3 * n + 30);

  const double tol = 10.0 * std::numeric_limits<double>::epsilon() * a.cwiseAbs().colwise().sum().maxCoeff() *
                     static_cast<double>(std::max(a.rows(), n)) * std::max(1.0, b.cwiseAbs().maxCoeff());

  std::vector<bool> in_passive(static_cast<std::size_t>(n), false);
  Eigen::VectorXd& x = result.x;
  Eigen::VectorXd w = a.transpose() * (b - a * x);

  auto passive_set = [&] {
    std::vector<Eigen::Index> p;
    for (Eigen::Index j = 0; j < n; ++j)
      if (in_passive[static_cast<std::size_t>(j)]) p.push_back(j);
    return p;
  };

  while (result.iterations < max_iterations) {
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!in_passive[static_cast<std::size_t>(j)] && w(j) > best_w) {
        best_w = w(j);
        best = j;
      }
    }
    if (best < 0) break;
    in_passive[static_cast<std::size_t>(best)] = true;

    while (true) {
      ++result.iterations;
      auto passive = passive_set();
      Eigen::VectorXd s = detail::solve_passive(a, b, passive);
      bool feasible = true;
      for (auto j : passive) feasible = feasible && s(j) > 0.0;
      if (feasible) {
        x = s;
        break;
      }
      double alpha = std::numeric_limits<double>::infinity();
      for (auto j : passive) {
        if (s(j) <= 0.0) alpha = std::min(alpha, x(j) / (x(j) - s(j)));
      }
      x += alpha * (s - x);
      for (auto j : passive) {
        if (x(j) <= tol) {
          x(j) = 0.0;
          in_passive[static_cast<std::size_t>(j)] = false;
        }
      }
      if (result.iterations >= max_iterations) {
        result.converged = false;
        break;
      }
    }
    w = a.transpose() * (b - a * x);
  }
  if (result.iterations >= max_iterations) result.converged = false;
  x = x.cwiseMax(0.0);
  result.residual_norm = (a * x - b).norm();
  return result;
}

}  // namespace faasmeter::linalg
