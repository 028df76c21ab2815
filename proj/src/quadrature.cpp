#include "fbsde/quadrature.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "fbsde/errors.hpp"
#include "fbsde/stochastic.hpp"

namespace fbsde {

GaussHermiteRule gauss_hermite(std::size_t order) {
  if (order < 1) throw InvalidArgument("gauss_hermite: order must be at least 1");
  const auto n = static_cast<Eigen::Index>(order);
  Mat jacobi = Mat::Zero(n, n);
  for (Eigen::Index k = 1; k < n; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(jacobi);
  GaussHermiteRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  for (Eigen::Index j = 0; j < n; ++j) {
    rule.nodes[j] = eig.eigenvalues()[j];
    const double v0 = eig.eigenvectors()(0, j);
    rule.weights[j] = v0 * v0;
  }
  // symmetrize against round-off so odd moments vanish to machine precision
  for (std::size_t j = 0; j < order / 2; ++j) {
    const std::size_t k = order - 1 - j;
    const double x = 0.5 * (rule.nodes[k] - rule.nodes[j]);
    const double w = 0.5 * (rule.weights[k] + rule.weights[j]);
    rule.nodes[j] = -x;
    rule.nodes[k] = x;
    rule.weights[j] = rule.weights[k] = w;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
  double total = 0.0;
  for (double w : rule.weights) total += w;
  for (double& w : rule.weights) w /= total;
  return rule;
}

}  // namespace fbsde
