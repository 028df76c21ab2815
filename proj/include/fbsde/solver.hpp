#pragma once

// Decoupling-field solver: backward induction of u(t, x) with Y = u(t, X)
// by local Picard iterations on short sub-intervals, then a forward
// Euler-Maruyama pass that stitches the global solution together.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fbsde/model.hpp"
#include "fbsde/quadrature.hpp"
#include "fbsde/stochastic.hpp"

namespace fbsde {

struct SpatialGrid {
  Vec center;  // empty means "use the problem's xi"
  double half_width = 6.0;
  std::size_t n_nodes = 121;  // per dimension
};

struct SolverParams {
  double delta_scale = 0.25;
  double picard_tol = 1e-10;
  int picard_max_iter = 100;
  SpatialGrid spatial;
  std::size_t quadrature_nodes = 16;
  double contraction_guard = 0.9;
};

void validate(const SolverParams& params);

/// delta = min(horizon, c / (1 + K^2)).
double choose_delta(double K, double L_sigma, const SolverParams& params, double horizon);

/// Uniform tensor grid in up to two dimensions.
class SpatialAxes {
 public:
  SpatialAxes(const Vec& center, double half_width, std::size_t n_nodes);

  int dimension() const { return static_cast<int>(lo_.size()); }
  std::size_t nodes_per_axis() const { return count_; }
  std::size_t n_nodes() const { return total_; }
  double spacing(int d) const { return h_[static_cast<std::size_t>(d)]; }
  double axis_node(int d, std::size_t i) const { return lo_[static_cast<std::size_t>(d)] + h_[static_cast<std::size_t>(d)] * static_cast<double>(i); }
  Vec node(std::size_t flat) const;
  std::size_t flat_index(std::size_t i0, std::size_t i1 = 0) const { return i0 + count_ * i1; }
  bool covers(const Vec& x) const;

 private:
  std::vector<double> lo_, h_;
  std::size_t count_ = 0;
  std::size_t total_ = 0;
};

/// u(t, .) at one time: values at every spatial node, multilinear
/// interpolation inside the grid and linear continuation of the boundary
/// cell outside it.
class FieldSlice {
 public:
  FieldSlice(std::shared_ptr<const SpatialAxes> axes, int m);

  const SpatialAxes& axes() const { return *axes_; }
  int m() const { return m_; }

  Eigen::Map<Vec> at(std::size_t flat) { return {values_.data() + flat * m_, m_}; }
  Eigen::Map<const Vec> at(std::size_t flat) const { return {values_.data() + flat * m_, m_}; }

  Vec value(const Vec& x) const;
  /// Jacobian (m x n) of the interpolant; on an interior node the two
  /// adjacent cell slopes are averaged.
  Mat gradient(const Vec& x) const;

 private:
  std::shared_ptr<const SpatialAxes> axes_;
  int m_;
  std::vector<double> values_;
};

struct FieldDiagnostics {
  double delta_initial = 0.0;
  double delta_final = 0.0;
  int delta_halvings = 0;
  int max_picard_iterations = 0;
  double max_contraction_ratio = 0.0;
  std::size_t grid_escape_events = 0;  // quadrature images outside the grid
  std::vector<std::string> warnings;
};

class DecouplingField {
 public:
  DecouplingField(std::vector<double> times, std::shared_ptr<const SpatialAxes> axes, int m);

  std::span<const double> times() const { return times_; }
  const SpatialAxes& axes() const { return *axes_; }
  std::shared_ptr<const SpatialAxes> shared_axes() const { return axes_; }
  int m() const { return m_; }
  std::size_t n_times() const { return times_.size(); }

  FieldSlice& slice(std::size_t i) { return slices_[i]; }
  const FieldSlice& slice(std::size_t i) const { return slices_[i]; }

  /// u(t, x); t between time nodes is interpolated linearly.
  Vec value(double t, const Vec& x) const;
  Mat gradient(double t, const Vec& x) const;

  /// max over slices of |second difference| / 8, the piecewise-linear
  /// interpolation error bound implied by the tabulated curvature.
  double interpolation_error_bound() const;

  FieldDiagnostics diagnostics;

 private:
  std::pair<std::size_t, double> locate(double t) const;

  std::vector<double> times_;
  std::shared_ptr<const SpatialAxes> axes_;
  int m_;
  std::vector<FieldSlice> slices_;
};

/// Field filled from a closed form u(t, x); used by tests and oracles.
DecouplingField tabulate_field(std::vector<double> times, const SpatialGrid& spatial, int m,
                               const std::function<Vec(double, const Vec&)>& u);

struct LocalPicardResult {
  Vec y;  // u(t1, x0)
  Vec z;
  int iterations = 0;
  double contraction_ratio = 0.0;
  bool converged = false;
  bool escaped = false;  // some quadrature image left the spatial grid
};

/// One-node Picard iteration on [t1, t2] given u(t2, .): one Euler step
/// for X from x0, then Y(t1) = E[u(t2, X(t2))] + f h and
/// Z(t1) = E[u(t2, X(t2)) dB] / h with Gauss-Hermite expectations.
/// Throws PicardDivergence if the iteration does not converge under the
/// contraction guard.
LocalPicardResult solve_local_picard(const FBSDEProblem& problem, double t1, double t2, const FieldSlice& terminal,
                                     const Vec& x0, const SolverParams& params);

/// Backward induction over the time nodes of grid.
DecouplingField build_decoupling_field(const FBSDEProblem& problem, const SolverParams& params, const TimeGrid& grid);

struct Provenance {
  std::string solver;
  std::string params;
  std::uint64_t seed = 0;
  bool antithetic = false;
};

struct SolutionEnsemble {
  PathEnsemble X, Y, Z;
  Provenance provenance;
  std::vector<double> terminal_residual;  // |Y_T - Phi(X_T)| per path
  std::size_t samples_outside_grid = 0;
  std::vector<std::string> warnings;

  const TimeGrid& grid() const { return X.grid(); }
  std::size_t n_paths() const { return X.n_paths(); }
};

/// Forward Euler-Maruyama for X with Y = u(s, X) and Z = grad u * sigma.
SolutionEnsemble solve_global(const FBSDEProblem& problem, const DecouplingField& field,
                              const BrownianEnsemble& noise);

/// Per time node, the largest difference quotient between adjacent nodes.
std::vector<double> field_lipschitz_profile(const DecouplingField& field);

std::string describe(const SolverParams& params);

}  // namespace fbsde
