#pragma once

// Monte Carlo checks of the L^p moment and stability estimates, the
// constant-growth recursion of the stitching argument, and the K_p gates.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "fbsde/solver.hpp"

namespace fbsde {

/// Per path: sup_k |X_k|^p, sup_k |Y_k|^p and (sum_k |Z_k|^2 dt_k)^(p/2)
/// with the left-endpoint Riemann sum.
struct PathFunctionals {
  std::vector<double> sup_x;
  std::vector<double> sup_y;
  std::vector<double> z_energy;
};

PathFunctionals path_functionals(const SolutionEnsemble& solution, double p);

struct MeanEstimate {
  double mean = 0.0;
  double half_width = 0.0;  // 95% normal-approximation half-width
};

MeanEstimate estimate_mean(std::span<const double> samples);

struct LpReport {
  double p = 2.0;
  double xi_norm = 0.0;
  std::array<MeanEstimate, 3> estimates;  // sup|X|^p, sup|Y|^p, (int |Z|^2)^(p/2)
  double implied_constant = 0.0;          // sum / (1 + |xi|^p)
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  std::uint64_t seed = 0;
};

struct LpLadderReport {
  std::vector<LpReport> entries;
  /// max / min of the positive implied constants (1 if fewer than two).
  double spread = 1.0;
};

/// One report per ladder entry; xi is read from X at t0 of each solution.
LpLadderReport estimate_lp_bound(std::span<const SolutionEnsemble> ladder, double p);

struct StabilityReport {
  double p = 2.0;
  Vec xi, xi_prime;
  std::array<MeanEstimate, 3> estimates;
  double implied_constant = 0.0;  // sum / |xi - xi'|^p
  double kappa = 0.0;             // slope bound used for the pointwise check
  double violation_rate = 0.0;    // fraction of (path, node) with |dY| > kappa |dX|
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  std::uint64_t seed = 0;
};

/// Difference functionals of two solutions driven by the same noise.
/// kappa is the field slope bound; it is inflated by 5% before the
/// pointwise comparison.
StabilityReport estimate_stability(const SolutionEnsemble& a, const SolutionEnsemble& b, double p,
                                   double field_slope_bound);

struct GrowthAudit {
  double value = 0.0;
  bool saturated = false;
};

/// C(1) = C1, C(i+1) = 2 C(i) + C(i)^2, Chat(k) = 2^(p/2) C(k) for k >= 2
/// and Chat(1) = C1. Saturates when the doubly exponential recursion
/// overflows.
GrowthAudit audit_constant_growth(double C1, double p, int k);

struct KpInputs {
  double p = 2.0;
  double bdg_upper = 8.0;
  double bdg_lower = 1.0;

  /// (lower, upper) = (1, 4p)
  static KpInputs with_default_constants(double p) { return {p, 4.0 * p, 1.0}; }
};

/// K_p = Kup^(1/p) (p / (p + 1) + 2 Klow^(-1/p) (2p - 1) / (p - 1)).
double compute_kp(const KpInputs& inputs);

struct GateVerdict {
  double h51_product = 0.0;
  bool h51 = false;
  std::optional<double> theorem51_product;
  std::optional<bool> theorem51;
};

/// Strict checks K_p L_sigma K < 1 and, when sqrt(C1) is given,
/// K_p L_sigma sqrt(C1) < 1.
GateVerdict smallness_gates(double K_p, double L_sigma, double K, std::optional<double> sqrt_C1 = std::nullopt);

}  // namespace fbsde
