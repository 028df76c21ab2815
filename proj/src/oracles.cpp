#include "fbsde/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "fbsde/errors.hpp"

namespace fbsde {

TimeProfile constant_profile(double v) {
  return [v](double) { return v; };
}

TimeProfile polynomial_profile(std::vector<double> coefficients) {
  return [c = std::move(coefficients)](double t) {
    double acc = 0.0;
    for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * t + *it;
    return acc;
  };
}

std::vector<double> cumulative_trapezoid(const TimeProfile& a, const TimeGrid& grid) {
  std::vector<double> P(grid.n_points(), 0.0);
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    P[k + 1] = P[k] + 0.5 * grid.dt(k) * (a(grid[k]) + a(grid[k + 1]));
  }
  return P;
}

namespace {

// piecewise-linear interpolation of nodal values, constant beyond the ends
double interpolate(const TimeGrid& grid, const std::vector<double>& v, double t) {
  if (t <= grid.t0()) return v.front();
  if (t >= grid.T()) return v.back();
  auto pts = grid.points();
  auto it = std::upper_bound(pts.begin(), pts.end(), t);
  const auto k = static_cast<std::size_t>(it - pts.begin()) - 1;
  const double w = (t - grid[k]) / grid.dt(k);
  return (1 - w) * v[k] + w * v[k + 1];
}

double sup_abs(const TimeProfile& g, const TimeGrid& grid) {
  double s = 0.0;
  for (double t : grid.points()) s = std::max(s, std::abs(g(t)));
  return s;
}

}  // namespace

FBSDEProblem example1_problem(const Example1Params& params, const TimeGrid& grid) {
  if (!(params.T > params.t0)) throw InvalidArgument("example1_problem: T must exceed t0");
  if (std::abs(grid.t0() - params.t0) > 1e-12 || std::abs(grid.T() - params.T) > 1e-12) {
    throw InvalidArgument("example1_problem: grid does not span [t0, T]");
  }
  for (double t : grid.points()) {
    if (!std::isfinite(params.a(t)) || !std::isfinite(params.b(t)) || !std::isfinite(params.c(t))) {
      throw InvalidArgument("example1_problem: profiles must be finite on the grid");
    }
  }
  auto P = std::make_shared<const std::vector<double>>(cumulative_trapezoid(params.a, grid));
  const double PT = P->back();
  auto a = params.a, b = params.b, c = params.c;

  FBSDEProblem prob;
  prob.n = prob.m = 1;
  prob.t0 = params.t0;
  prob.T = params.T;
  prob.xi = Vec::Constant(1, params.xi);
  prob.name = "example1";
  prob.coefficients.drift = [b](double t, const Vec&, const Vec& y, const Vec&) { return Vec(b(t) * y); };
  prob.coefficients.diffusion = [c](double t, const Vec&, const Vec&, const Vec&) { return Vec::Constant(1, c(t)); };
  prob.coefficients.driver = [a, b, P, grid](double t, const Vec& x, const Vec& y, const Vec&) {
    return Vec(-(a(t) * x + b(t) * interpolate(grid, *P, t) * y));
  };
  prob.coefficients.terminal = [PT](const Vec& x) { return Vec(PT * x); };

  double supP = 0.0;
  for (double p : *P) supP = std::max(supP, std::abs(p));
  const double sa = sup_abs(a, grid), sb = sup_abs(b, grid), sc = sup_abs(c, grid);
  prob.coefficients.K = std::max({sb, sa + sb * supP, std::abs(PT)});
  prob.coefficients.L = sb + sc + sa + sb * supP + std::abs(PT);
  prob.coefficients.L_sigma = 0.0;
  prob.coefficients.diffusion_depends_on_z = false;
  validate(prob);
  return prob;
}

SolutionEnsemble example1_closed_form(const Example1Params& params, const BrownianEnsemble& noise) {
  const TimeGrid& grid = noise.grid();
  if (grid.t0() > params.t0 + 1e-12 || grid.T() < params.T - 1e-12) {
    throw InvalidArgument("example1_closed_form: noise grid does not cover [t0, T]");
  }
  const std::vector<double> P = cumulative_trapezoid(params.a, grid);
  const std::size_t N = grid.n_steps();
  // Gamma_k: trapezoid integral of b P
  std::vector<double> gamma(N + 1, 0.0), cval(N + 1);
  for (std::size_t k = 0; k <= N; ++k) cval[k] = params.c(grid[k]);
  for (std::size_t k = 0; k < N; ++k) {
    gamma[k + 1] = gamma[k] + 0.5 * grid.dt(k) * (params.b(grid[k]) * P[k] + params.b(grid[k + 1]) * P[k + 1]);
  }
  const std::size_t n_paths = noise.n_paths();
  SolutionEnsemble sol{PathEnsemble(grid, n_paths, 1),
                       PathEnsemble(grid, n_paths, 1),
                       PathEnsemble(grid, n_paths, 1),
                       {"example1-closed-form", "", noise.seed(), noise.antithetic()},
                       std::vector<double>(n_paths, 0.0),
                       0,
                       {}};
  Vec v(1);
  for (std::size_t p = 0; p < n_paths; ++p) {
    double ito = 0.0;
    for (std::size_t k = 0; k <= N; ++k) {
      const double x = std::exp(gamma[k]) * (params.xi + ito);
      v[0] = x;
      sol.X.set(p, k, v);
      v[0] = P[k] * x;
      sol.Y.set(p, k, v);
      v[0] = P[k] * cval[k];
      sol.Z.set(p, k, v);
      if (k < N) ito += std::exp(-gamma[k]) * cval[k] * noise.increment(p, k);
    }
  }
  return sol;
}

std::vector<double> backward_residual(const SolutionEnsemble& solution, const FBSDEProblem& problem,
                                      const BrownianEnsemble& noise) {
  const TimeGrid& grid = solution.grid();
  if (!(grid == noise.grid())) throw InvalidArgument("backward_residual: solution and noise grids differ");
  if (solution.n_paths() != noise.n_paths()) throw InvalidArgument("backward_residual: path counts differ");
  std::vector<double> out(solution.n_paths(), 0.0);
  for (std::size_t p = 0; p < solution.n_paths(); ++p) {
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.n_steps(); ++k) {
      const Vec x = solution.X.vec(p, k), y = solution.Y.vec(p, k), z = solution.Z.vec(p, k);
      const Vec r = solution.Y.vec(p, k + 1) - y + problem.driver(grid[k], x, y, z) * grid.dt(k) -
                    z * noise.increment(p, k);
      worst = std::max(worst, r.norm());
    }
    out[p] = worst;
  }
  return out;
}

SolutionEnsemble gaussian_linear_oracle(double slope, const BrownianEnsemble& noise, double xi) {
  const TimeGrid& grid = noise.grid();
  const std::size_t n_paths = noise.n_paths();
  SolutionEnsemble sol{PathEnsemble(grid, n_paths, 1),
                       PathEnsemble(grid, n_paths, 1),
                       PathEnsemble(grid, n_paths, 1),
                       {"gaussian-linear-oracle", "", noise.seed(), noise.antithetic()},
                       std::vector<double>(n_paths, 0.0),
                       0,
                       {}};
  Vec v(1);
  for (std::size_t p = 0; p < n_paths; ++p) {
    double x = xi;
    for (std::size_t k = 0; k <= grid.n_steps(); ++k) {
      v[0] = x;
      sol.X.set(p, k, v);
      v[0] = slope * x;
      sol.Y.set(p, k, v);
      v[0] = slope;
      sol.Z.set(p, k, v);
      if (k < grid.n_steps()) x += noise.increment(p, k);
    }
  }
  return sol;
}

FBSDEProblem gaussian_linear_problem(double slope, double t0, double T, double xi) {
  FBSDEProblem prob;
  prob.n = prob.m = 1;
  prob.t0 = t0;
  prob.T = T;
  prob.xi = Vec::Constant(1, xi);
  prob.name = "gaussian-linear";
  prob.coefficients.drift = [](double, const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
  prob.coefficients.diffusion = [](double, const Vec&, const Vec&, const Vec&) { return Vec(Vec::Ones(1)); };
  prob.coefficients.driver = [](double, const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(1)); };
  prob.coefficients.terminal = [slope](const Vec& x) { return Vec(slope * x); };
  prob.coefficients.K = std::abs(slope);
  prob.coefficients.L = 1.0 + std::abs(slope);
  prob.coefficients.L_sigma = 0.0;
  prob.coefficients.diffusion_depends_on_z = false;
  validate(prob);
  return prob;
}

}  // namespace fbsde
