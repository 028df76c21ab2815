#pragma once

// Closed-form reference solutions.

#include <functional>
#include <vector>

#include "fbsde/model.hpp"
#include "fbsde/solver.hpp"
#include "fbsde/stochastic.hpp"

namespace fbsde {

using TimeProfile = std::function<double(double)>;

TimeProfile constant_profile(double v);
/// c0 + c1 t + c2 t^2 + ...
TimeProfile polynomial_profile(std::vector<double> coefficients);

/// The linear example
///
///   dX = b_s Y ds + c_s dB,          X(t0) = xi
///   dY = [a_s X + b_s P_s Y] ds + Z dB,  Y(T) = P_T X(T)
///
/// with P_s the integral of a from t0 to s, whose solution is Y = P X.
struct Example1Params {
  TimeProfile a = constant_profile(0.0);
  TimeProfile b = constant_profile(0.0);
  TimeProfile c = constant_profile(0.0);
  double t0 = 0.0;
  double T = 1.0;
  double xi = 0.0;
};

/// P at the grid nodes by the cumulative trapezoid rule.
std::vector<double> cumulative_trapezoid(const TimeProfile& a, const TimeGrid& grid);

/// Scalar FBSDE for the example: drift b_s y, diffusion c_s and driver
/// f = -(a_s x + b_s P_s y) in the dY = -f ds convention; Phi(x) = P_T x.
/// P is tabulated on grid and interpolated linearly between nodes.
FBSDEProblem example1_problem(const Example1Params& params, const TimeGrid& grid);

/// X by the integrating-factor formula for dX = b P X ds + c dB with
/// trapezoid exponent and left-point Ito sums, Y = P X, Z = P c.
SolutionEnsemble example1_closed_form(const Example1Params& params, const BrownianEnsemble& noise);

/// Per path, max over steps of |Y(k+1) - Y(k) + f(t_k, X_k, Y_k, Z_k) dt - Z_k dB_k|.
std::vector<double> backward_residual(const SolutionEnsemble& solution, const FBSDEProblem& problem,
                                      const BrownianEnsemble& noise);

/// Solution of b = f = 0, sigma = 1, Phi(x) = slope x: X = xi + B,
/// Y = slope X, Z = slope.
SolutionEnsemble gaussian_linear_oracle(double slope, const BrownianEnsemble& noise, double xi);

/// The scalar problem solved by gaussian_linear_oracle.
FBSDEProblem gaussian_linear_problem(double slope, double t0, double T, double xi);

}  // namespace fbsde
