#pragma once

// The fully coupled FBSDE
//
//   dX = b(s, X, Y, Z) ds + sigma(s, X, Y, Z) dB,   X(t0) = xi
//   dY = -f(s, X, Y, Z) ds + Z dB,                  Y(T)  = Phi(X(T))
//
// driven by a single Brownian motion B, with X in R^n and Y, Z in R^m.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fbsde/stochastic.hpp"

namespace fbsde {

using CoefficientMap = std::function<Vec(double t, const Vec& x, const Vec& y, const Vec& z)>;
using TerminalMap = std::function<Vec(const Vec& x)>;

struct CoefficientSet {
  CoefficientMap drift;
  CoefficientMap diffusion;
  CoefficientMap driver;
  TerminalMap terminal;
  double L = 0.0;        // growth constant
  double K = 0.0;        // Lipschitz constant
  double L_sigma = 0.0;  // Lipschitz constant of sigma in z
  /// False when sigma ignores z; lets the solvers skip the inner Z pass.
  bool diffusion_depends_on_z = true;
};

struct FBSDEProblem {
  CoefficientSet coefficients;
  int n = 1;
  int m = 1;
  double t0 = 0.0;
  double T = 1.0;
  Vec xi;
  std::string name;

  Vec drift(double t, const Vec& x, const Vec& y, const Vec& z) const { return coefficients.drift(t, x, y, z); }
  Vec diffusion(double t, const Vec& x, const Vec& y, const Vec& z) const {
    return coefficients.diffusion(t, x, y, z);
  }
  Vec driver(double t, const Vec& x, const Vec& y, const Vec& z) const { return coefficients.driver(t, x, y, z); }
  Vec terminal(const Vec& x) const { return coefficients.terminal(x); }
};

/// Checks the constants, horizon and dimensions (probing each map at a
/// few points). Throws InvalidArgument on inconsistency.
void validate(const FBSDEProblem& problem);

/// Copy of the problem with a different initial condition.
FBSDEProblem with_initial(FBSDEProblem problem, Vec xi);

/// The all-zero problem in dimensions (n, m).
FBSDEProblem zero_problem(int n, int m, double t0, double T, Vec xi);

struct ProbeViolation {
  std::string constant;  // "L", "K_b", "K_sigma_xy", "L_sigma_z", "K_f", "K_Phi"
  double probed = 0.0;
  double declared = 0.0;
  double t = 0.0;
  Vec point_a;  // stacked (x, y, z) of the maximizing pair
  Vec point_b;
};

struct AssumptionReport {
  double growth = 0.0;
  double K_b = 0.0;
  double K_sigma_xy = 0.0;
  double L_sigma_z = 0.0;
  double K_f = 0.0;
  double K_Phi = 0.0;
  std::size_t n_probes = 0;
  std::vector<ProbeViolation> violations;

  /// max(K_b, K_sigma_xy, K_f, K_Phi)
  double K() const;
};

/// Empirical growth and Lipschitz constants over uniform samples in the
/// box [-radius, radius]^(n+2m), t uniform on [t0, T]. Difference quotients
/// are taken on block slices (only x, only y or only z varies), which for
/// sum-of-norms Lipschitz bounds recovers the constant exactly.
/// Probe i depends only on (seed, i), so probe sets nest as n_probes grows.
AssumptionReport probe_assumptions(const FBSDEProblem& problem, std::size_t n_probes, double box_radius,
                                   std::uint64_t seed);

struct AffineBlock {
  Mat x, y, z;  // rows = output dimension
  Vec c;
};

struct LinearSnapshot {
  double t = 0.0;
  AffineBlock drift;
  AffineBlock diffusion;
  AffineBlock driver;
  Mat terminal_x;
  Vec terminal_c;
};

struct LinearTable {
  std::vector<LinearSnapshot> snapshots;
};

/// Recovers the affine coefficient matrices at the given times if every
/// map is affine on a probe lattice (second differences below 1e-10);
/// otherwise nullopt. Defaults to times {t0, (t0+T)/2, T}.
std::optional<LinearTable> freeze_linear(const FBSDEProblem& problem, std::vector<double> times = {});

}  // namespace fbsde
