#pragma once

// Stochastic linear-quadratic control through its Hamiltonian FBSDE.
//
// State:  dX = (A X + B u + b) ds + (C X + D u + sigma) dB,  X(t0) = x0
// Cost:   E[ int (<QX,X> + 2<SX,u> + <Ru,u> + 2<q,X> + 2<rho,u>) ds
//            + <H X_T, X_T> + 2<h, X_T> ]
//
// The optimal control is u = -R^-1 (B'Y + D'Z + S X + rho) where (Y, Z)
// solves the adjoint equation; substituting it gives a fully coupled FBSDE
// with n = m.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fbsde/lp_lab.hpp"
#include "fbsde/model.hpp"
#include "fbsde/solver.hpp"

namespace fbsde {

using MatrixProfile = std::function<Mat(double)>;
using VectorProfile = std::function<Vec(double)>;

MatrixProfile constant_matrix(Mat value);
VectorProfile constant_vector(Vec value);
/// Value of node k on [t_k, t_{k+1}); the last value beyond the grid.
MatrixProfile piecewise_constant(std::vector<double> nodes, std::vector<Mat> values);

struct LQSpec {
  int n = 1;    // state dimension
  int m_u = 1;  // control dimension
  double t0 = 0.0;
  double T = 1.0;
  MatrixProfile A, B, C, D, Q, S, R;
  Mat H;
  VectorProfile b, sigma, q, rho;
  Vec h;
  double delta_R = 1e-8;

  /// Every profile zero except R = I; H = 0.
  static LQSpec zero(int n, int m_u, double t0 = 0.0, double T = 1.0);
};

struct LQAssumptionReport {
  double sup_norm_A = 0, sup_norm_B = 0, sup_norm_C = 0, sup_norm_D = 0;
  double min_eig_state_weight = 0;  // min over nodes of lambda_min(Q - S'R^-1 S)
  double min_eig_R = 0;
  double min_eig_H = 0;
  std::vector<double> norm_D;  // sqrt(tr(D D')) per node
};

/// Probes the structural assumptions on the given time nodes; throws
/// InvalidArgument when Q - S'R^-1 S, R - delta_R I or H is indefinite
/// (tolerance 1e-10), naming the node.
LQAssumptionReport check_lq_assumptions(const LQSpec& spec, std::span<const double> times);

/// Hamiltonian FBSDE with initial state x0:
///   b(x,y,z)     = (A - B R^-1 S) x - B R^-1 B' y - B R^-1 D' z - B R^-1 rho + b
///   sigma(x,y,z) = (C - D R^-1 S) x - D R^-1 B' y - D R^-1 D' z - D R^-1 rho + sigma
///   f(x,y,z)     = (Q - S'R^-1 S) x + (A - B R^-1 S)' y + (C - D R^-1 S)' z - S'R^-1 rho + q
///   Phi(x)       = H x + h
/// Declared constants come from sup norms over times; L_sigma = sup |D R^-1 D'|.
FBSDEProblem build_hamiltonian_fbsde(const LQSpec& spec, const Vec& x0, std::span<const double> times);

/// F(s, x, y, z) = (-f, b, sigma) without the affine terms, stacked in R^{3n}.
Vec hamiltonian_map(const LQSpec& spec, double s, const Vec& x, const Vec& y, const Vec& z);

struct MonotonicityCertificate {
  double c1 = 0.0;
  double c2 = 0.0;
  std::size_t n_samples = 0;
  /// max over samples of <F(U), U> + c1 |x|^2 + c2 |B'y + D'z|^2
  double worst_residual = 0.0;
  /// max over samples of |<F(U), U> + <(Q - S'R^-1 S)x, x> + <R^-1 w, w>|
  double identity_residual = 0.0;
};

/// Throws NumericalError when either residual exceeds 1e-8.
MonotonicityCertificate monotonicity_certificate(const LQSpec& spec, std::size_t n_samples, std::uint64_t seed,
                                                 std::span<const double> times);

/// u = -R^-1 (B'Y + D'Z + S X + rho) per path and node.
PathEnsemble optimal_control_from_solution(const LQSpec& spec, const SolutionEnsemble& solution);

/// max |B'Y + D'Z + S X + R u + rho| over paths and nodes.
double stationarity_residual(const LQSpec& spec, const SolutionEnsemble& solution, const PathEnsemble& control);

struct CostEstimate {
  MeanEstimate cost;
  std::vector<double> per_path;
};

/// Euler simulation of the state under an open-loop control table and the
/// left-endpoint Riemann sum of the cost.
CostEstimate simulate_cost(const LQSpec& spec, const PathEnsemble& control, const BrownianEnsemble& noise,
                           const Vec& x0);

struct PerturbationResult {
  double cost_plus = 0.0;
  double cost_minus = 0.0;
  double margin = 0.0;             // J(u + eps v) - J(u)
  double tolerance = 0.0;          // sum of the two half-widths
  double second_difference = 0.0;  // (J+ + J- - 2 J) / eps^2
};

struct OptimalityReport {
  double base_cost = 0.0;
  double base_half_width = 0.0;
  double epsilon = 0.0;
  std::vector<PerturbationResult> perturbations;
  double min_margin = 0.0;
  double mean_margin = 0.0;
  double min_second_difference = 0.0;
};

/// Random piecewise-constant perturbations v (eight pieces, |v| <= 1,
/// shared by all paths) of the base control, evaluated on common noise.
OptimalityReport optimality_test(const LQSpec& spec, const PathEnsemble& base_control, const BrownianEnsemble& noise,
                                 const Vec& x0, int n_perturbations, double epsilon, std::uint64_t seed);

struct PairingResidual {
  double residual = 0.0;  // |mean| of the per-path identity defect
  double half_width = 0.0;
  double terminal_term = 0.0;  // E <dX_T, H dX_T>
  double integral_term = 0.0;  // E int <F(U) - F(U'), U - U'> ds
  double initial_term = 0.0;   // E <dY_0, xi - xi'>
};

/// Defect of E<dX_T, H dX_T> = E int <F(U) - F(U'), U - U'> ds + E<dY_0, xi - xi'>
/// for two solutions on common noise.
PairingResidual ito_pairing_residual(const LQSpec& spec, const SolutionEnsemble& a, const SolutionEnsemble& b);

struct RiccatiTable {
  std::vector<double> times;
  std::vector<Mat> P;
  std::vector<Mat> gain;  // -R^-1 B' P

  double value(const Vec& x0) const { return x0.dot(P.front() * x0); }
};

/// Backward RK4 for -P' = A'P + PA - P B R^-1 B' P + Q, P(T) = H, on the
/// grid nodes with `substeps` RK4 steps per grid step. Requires
/// C = D = S = 0 and zero affine terms on the grid nodes.
RiccatiTable riccati_oracle(const LQSpec& spec, const TimeGrid& grid, int substeps = 4);

}  // namespace fbsde
