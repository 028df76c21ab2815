#pragma once

#include <cstddef>
#include <vector>

namespace fbsde {

/// Gauss-Hermite rule for the standard normal law: sum_j w_j g(x_j)
/// approximates E[g(N(0,1))], exact for polynomials of degree < 2 * order.
/// Nodes ascend and weights sum to one. Built by Golub-Welsch on the
/// Jacobi matrix of the probabilists' Hermite polynomials.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t order() const { return nodes.size(); }
};

GaussHermiteRule gauss_hermite(std::size_t order);

}  // namespace fbsde
