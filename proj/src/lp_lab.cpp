#include "fbsde/lp_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fbsde/errors.hpp"

namespace fbsde {

PathFunctionals path_functionals(const SolutionEnsemble& sol, double p) {
  if (!(p >= 1.0)) throw InvalidArgument("path_functionals: p must be at least 1");
  const TimeGrid& grid = sol.grid();
  const std::size_t P = sol.n_paths();
  PathFunctionals out{std::vector<double>(P), std::vector<double>(P), std::vector<double>(P)};
  for (std::size_t i = 0; i < P; ++i) {
    double sx = 0.0, sy = 0.0, energy = 0.0;
    for (std::size_t k = 0; k < grid.n_points(); ++k) {
      sx = std::max(sx, sol.X.vec(i, k).norm());
      sy = std::max(sy, sol.Y.vec(i, k).norm());
      if (k < grid.n_steps()) energy += sol.Z.vec(i, k).squaredNorm() * grid.dt(k);
    }
    out.sup_x[i] = std::pow(sx, p);
    out.sup_y[i] = std::pow(sy, p);
    out.z_energy[i] = std::pow(energy, 0.5 * p);
  }
  return out;
}

MeanEstimate estimate_mean(std::span<const double> samples) {
  MeanEstimate e;
  if (samples.empty()) return e;
  const auto n = static_cast<double>(samples.size());
  double sum = 0.0;
  for (double s : samples) sum += s;
  e.mean = sum / n;
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double s : samples) ss += (s - e.mean) * (s - e.mean);
    e.half_width = 1.96 * std::sqrt(ss / (n - 1.0) / n);
  }
  return e;
}

namespace {

std::array<MeanEstimate, 3> summarize(const PathFunctionals& f) {
  return {estimate_mean(f.sup_x), estimate_mean(f.sup_y), estimate_mean(f.z_energy)};
}

double total(const std::array<MeanEstimate, 3>& e) { return e[0].mean + e[1].mean + e[2].mean; }

}  // namespace

LpLadderReport estimate_lp_bound(std::span<const SolutionEnsemble> ladder, double p) {
  if (ladder.empty()) throw InvalidArgument("estimate_lp_bound: the xi-ladder is empty");
  LpLadderReport out;
  const std::size_t n_steps = ladder.front().grid().n_steps();
  for (const auto& sol : ladder) {
    if (sol.grid().n_steps() != n_steps) throw InvalidArgument("estimate_lp_bound: ladder entries use different grids");
    LpReport r;
    r.p = p;
    r.xi_norm = sol.X.vec(0, 0).norm();
    r.estimates = summarize(path_functionals(sol, p));
    r.implied_constant = total(r.estimates) / (1.0 + std::pow(r.xi_norm, p));
    r.n_paths = sol.n_paths();
    r.n_steps = n_steps;
    r.seed = sol.provenance.seed;
    out.entries.push_back(r);
  }
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  std::size_t positive = 0;
  for (const auto& r : out.entries) {
    if (r.implied_constant > 0) {
      lo = std::min(lo, r.implied_constant);
      hi = std::max(hi, r.implied_constant);
      ++positive;
    }
  }
  out.spread = positive >= 2 ? hi / lo : 1.0;
  return out;
}

StabilityReport estimate_stability(const SolutionEnsemble& a, const SolutionEnsemble& b, double p,
                                   double field_slope_bound) {
  if (a.provenance.seed != b.provenance.seed || a.provenance.antithetic != b.provenance.antithetic ||
      a.n_paths() != b.n_paths() || !(a.grid() == b.grid())) {
    throw InvalidArgument("estimate_stability: mismatched noise (both solutions must share the Brownian ensemble)");
  }
  const Vec xi = a.X.vec(0, 0), xi_prime = b.X.vec(0, 0);
  const double gap = (xi - xi_prime).norm();
  if (gap == 0.0) throw InvalidArgument("estimate_stability: xi and xi' must differ");

  const TimeGrid& grid = a.grid();
  const std::size_t P = a.n_paths();
  const double kappa = 1.05 * field_slope_bound;
  PathFunctionals f{std::vector<double>(P), std::vector<double>(P), std::vector<double>(P)};
  std::size_t violations = 0;
  for (std::size_t i = 0; i < P; ++i) {
    double sx = 0.0, sy = 0.0, energy = 0.0;
    for (std::size_t k = 0; k < grid.n_points(); ++k) {
      const double dx = (a.X.vec(i, k) - b.X.vec(i, k)).norm();
      const double dy = (a.Y.vec(i, k) - b.Y.vec(i, k)).norm();
      sx = std::max(sx, dx);
      sy = std::max(sy, dy);
      if (dy > kappa * dx) ++violations;
      if (k < grid.n_steps()) energy += (a.Z.vec(i, k) - b.Z.vec(i, k)).squaredNorm() * grid.dt(k);
    }
    f.sup_x[i] = std::pow(sx, p);
    f.sup_y[i] = std::pow(sy, p);
    f.z_energy[i] = std::pow(energy, 0.5 * p);
  }
  StabilityReport r;
  r.p = p;
  r.xi = xi;
  r.xi_prime = xi_prime;
  r.estimates = summarize(f);
  r.implied_constant = total(r.estimates) / std::pow(gap, p);
  r.kappa = kappa;
  r.violation_rate = static_cast<double>(violations) / static_cast<double>(P * grid.n_points());
  r.n_paths = P;
  r.n_steps = grid.n_steps();
  r.seed = a.provenance.seed;
  return r;
}

GrowthAudit audit_constant_growth(double C1, double p, int k) {
  if (!(C1 > 0)) throw InvalidArgument("audit_constant_growth: C1 must be positive");
  if (k < 1) throw InvalidArgument("audit_constant_growth: k must be at least 1");
  if (k == 1) return {C1, false};
  double c = C1;
  for (int i = 1; i < k; ++i) {
    c = 2.0 * c + c * c;
    if (!std::isfinite(c)) return {std::numeric_limits<double>::infinity(), true};
  }
  const double inflated = std::pow(2.0, 0.5 * p) * c;
  if (!std::isfinite(inflated)) return {std::numeric_limits<double>::infinity(), true};
  return {inflated, false};
}

double compute_kp(const KpInputs& in) {
  if (!(in.p > 1.0)) throw InvalidArgument("compute_kp: p must exceed 1 (pole at p = 1), got " + std::to_string(in.p));
  if (!(in.bdg_upper > 0) || !(in.bdg_lower > 0)) throw InvalidArgument("compute_kp: BDG constants must be positive");
  if (in.bdg_lower > in.bdg_upper) throw InvalidArgument("compute_kp: lower BDG constant exceeds the upper one");
  const double p = in.p;
  return std::pow(in.bdg_upper, 1.0 / p) *
         (p / (p + 1.0) + 2.0 * std::pow(in.bdg_lower, -1.0 / p) * (2.0 * p - 1.0) / (p - 1.0));
}

GateVerdict smallness_gates(double K_p, double L_sigma, double K, std::optional<double> sqrt_C1) {
  if (K_p < 0 || L_sigma < 0 || K < 0 || (sqrt_C1 && *sqrt_C1 < 0)) {
    throw InvalidArgument("smallness_gates: inputs must be non-negative");
  }
  GateVerdict v;
  v.h51_product = K_p * L_sigma * K;
  v.h51 = v.h51_product < 1.0;
  if (sqrt_C1) {
    v.theorem51_product = K_p * L_sigma * *sqrt_C1;
    v.theorem51 = *v.theorem51_product < 1.0;
  }
  return v;
}

}  // namespace fbsde
