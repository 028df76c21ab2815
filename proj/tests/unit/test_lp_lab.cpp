#include <doctest.h>

#include <cmath>

#include "fbsde/errors.hpp"
#include "fbsde/lp_lab.hpp"
#include "fbsde/oracles.hpp"

using namespace fbsde;

namespace {

Example1Params example1(double a, double b, double c, double xi) {
  Example1Params e;
  e.a = constant_profile(a);
  e.b = constant_profile(b);
  e.c = constant_profile(c);
  e.xi = xi;
  return e;
}

// Scalar ensemble with X, Y, Z set by closures of (path, node).
SolutionEnsemble constant_solution(const TimeGrid& g, std::size_t paths, double x, double y, double z,
                                   std::uint64_t seed = 0) {
  SolutionEnsemble s{PathEnsemble(g, paths, 1), PathEnsemble(g, paths, 1), PathEnsemble(g, paths, 1), {}, {}, 0, {}};
  s.provenance.seed = seed;
  for (std::size_t p = 0; p < paths; ++p)
    for (std::size_t k = 0; k < g.n_points(); ++k) {
      s.X.set(p, k, Vec::Constant(1, x));
      s.Y.set(p, k, Vec::Constant(1, y));
      s.Z.set(p, k, Vec::Constant(1, z));
    }
  return s;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

TEST_CASE("path_functionals: constant paths") {
  const auto g = build_grid(0.0, 1.0, 10);
  const auto zero = path_functionals(constant_solution(g, 3, 0.0, 0.0, 0.0), 2.0);
  for (std::size_t p = 0; p < 3; ++p) {
    CHECK(zero.sup_x[p] == 0.0);
    CHECK(zero.sup_y[p] == 0.0);
    CHECK(zero.z_energy[p] == 0.0);
  }
  const auto two = path_functionals(constant_solution(g, 2, 2.0, 0.0, 1.0), 3.0);
  CHECK(two.sup_x[0] == doctest::Approx(8.0));
  const auto unit = path_functionals(constant_solution(g, 2, 0.0, 0.0, 1.0), 4.0);
  CHECK(unit.z_energy[1] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(path_functionals(constant_solution(g, 1, 0, 0, 0), 0.5), InvalidArgument);
}

TEST_CASE("property: path functionals are monotone in p") {
  const auto g = build_grid(0.0, 1.0, 4);
  for (double level : {1.0, 1.5, 3.0}) {
    const auto s = constant_solution(g, 1, level, level, level);
    double prev = 0.0;
    for (double p : {1.0, 2.0, 3.5, 6.0}) {
      const auto f = path_functionals(s, p);
      CHECK(f.sup_x[0] >= prev);
      prev = f.sup_x[0];
    }
  }
  for (double level : {0.2, 0.7, 1.0}) {
    const auto s = constant_solution(g, 1, level, level, level);
    double prev = 2.0;
    for (double p : {1.0, 2.0, 3.5, 6.0}) {
      const auto f = path_functionals(s, p);
      CHECK(f.sup_x[0] <= prev);
      prev = f.sup_x[0];
    }
  }
}

TEST_CASE("estimate_mean: mean and normal half-width") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto e = estimate_mean(v);
  CHECK(e.mean == 2.5);
  CHECK(e.half_width == doctest::Approx(1.96 * std::sqrt(5.0 / 3.0 / 4.0)));
}

TEST_CASE("estimate_lp_bound: zero problem gives zero constants") {
  const auto g = build_grid(0.0, 1.0, 8);
  std::vector<SolutionEnsemble> ladder;
  for (int i = 0; i < 3; ++i) ladder.push_back(constant_solution(g, 5, 0.0, 0.0, 0.0));
  const auto rep = estimate_lp_bound(ladder, 4.0);
  REQUIRE(rep.entries.size() == 3);
  for (const auto& r : rep.entries) {
    CHECK(r.implied_constant == 0.0);
    for (const auto& e : r.estimates) CHECK(e.mean == 0.0);
  }
  CHECK(rep.spread == 1.0);
  CHECK_THROWS_AS(estimate_lp_bound(std::span<const SolutionEnsemble>{}, 2.0), InvalidArgument);
}

TEST_CASE("estimate_lp_bound: identity martingale sits inside the Doob bracket") {
  const auto g = build_grid(0.0, 1.0, 256);
  const auto sol = gaussian_linear_oracle(1.0, sample_brownian(g, 10000, 31), 0.0);
  const auto rep = estimate_lp_bound(std::span<const SolutionEnsemble>(&sol, 1), 2.0);
  const double sup_y = rep.entries[0].estimates[1].mean;
  CHECK(sup_y >= 1.0);
  CHECK(sup_y <= 4.0);
}

TEST_CASE("estimate_lp_bound: Example-1 p = 4 ladder against a direct evaluation") {
  const auto g = build_grid(0.0, 1.0, 64);
  const auto w = sample_brownian(g, 10000, 2);
  std::vector<SolutionEnsemble> ladder;
  std::vector<double> direct;
  for (double xi : {0.0, 1.0, 2.0, 4.0}) {
    ladder.push_back(example1_closed_form(example1(1.0, 0.0, 1.0, xi), w));
    // X = xi + B, Y = s X, Z = s: the three functionals in closed form
    std::vector<double> per(w.n_paths());
    for (std::size_t p = 0; p < w.n_paths(); ++p) {
      double sx = 0.0, sy = 0.0;
      for (std::size_t k = 0; k < g.n_points(); ++k) {
        const double x = xi + w.value(p, k);
        sx = std::max(sx, std::abs(x));
        sy = std::max(sy, std::abs(g[k] * x));
      }
      double energy = 0.0;
      for (std::size_t k = 0; k < g.n_steps(); ++k) energy += g[k] * g[k] * g.dt(k);
      per[p] = std::pow(sx, 4) + std::pow(sy, 4) + energy * energy;
    }
    direct.push_back(mean(per) / (1.0 + std::pow(xi, 4)));
  }
  const auto rep = estimate_lp_bound(ladder, 4.0);
  double lo = 1e300, hi = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rep.entries[i].implied_constant == doctest::Approx(direct[i]).epsilon(1e-10));
    lo = std::min(lo, direct[i]);
    hi = std::max(hi, direct[i]);
  }
  CHECK(rep.spread == doctest::Approx(hi / lo).epsilon(1e-10));
  MESSAGE("Example-1 p=4 implied constants: ", direct[0], " ", direct[1], " ", direct[2], " ", direct[3],
          " spread ", hi / lo);
}

TEST_CASE("ladder spread: Example-1 p = 4 within factor 3") {
  const auto g = build_grid(0.0, 1.0, 64);
  const auto w = sample_brownian(g, 10000, 2);
  std::vector<SolutionEnsemble> ladder;
  for (double xi : {0.0, 1.0, 2.0, 4.0}) ladder.push_back(example1_closed_form(example1(1.0, 0.0, 1.0, xi), w));
  const auto rep = estimate_lp_bound(ladder, 4.0);
  CHECK(rep.spread <= 3.0);
}

TEST_CASE("estimate_stability: preconditions") {
  const auto g = build_grid(0.0, 1.0, 8);
  const auto a = constant_solution(g, 4, 1.0, 1.0, 0.0, 5);
  CHECK_THROWS_AS(estimate_stability(a, a, 2.0, 1.0), InvalidArgument);
  const auto b = constant_solution(g, 4, 2.0, 1.0, 0.0, 6);
  CHECK_THROWS_AS(estimate_stability(a, b, 2.0, 1.0), InvalidArgument);
  const auto c = constant_solution(g, 3, 2.0, 1.0, 0.0, 5);
  CHECK_THROWS_AS(estimate_stability(a, c, 2.0, 1.0), InvalidArgument);
}

TEST_CASE("estimate_stability: Example-1 with b = 0 against the closed-form difference") {
  // X - X' = xi - xi', Y - Y' = s (xi - xi'), Z - Z' = 0 since Z = s does
  // not depend on xi: the p = 2 constant is 1 + sup s^2 = 2.
  const auto g = build_grid(0.0, 1.0, 64);
  const auto w = sample_brownian(g, 1000, 4);
  const auto a = example1_closed_form(example1(1.0, 0.0, 1.0, 1.0), w);
  const auto b = example1_closed_form(example1(1.0, 0.0, 1.0, 0.0), w);
  const auto r = estimate_stability(a, b, 2.0, 1.0);
  CHECK(r.estimates[2].mean == 0.0);
  CHECK(r.implied_constant == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.violation_rate == 0.0);
  CHECK(r.kappa == doctest::Approx(1.05));
}

TEST_CASE("property: stability estimates are homogeneous for linear problems") {
  const auto g = build_grid(0.0, 1.0, 32);
  const auto w = sample_brownian(g, 500, 7);
  for (double b : {0.0, 0.7}) {
    const auto base = example1_closed_form(example1(1.0, b, 1.0, 1.0), w);
    std::vector<double> constants;
    for (double gap : {1.0, 0.1, 0.01}) {
      const auto other = example1_closed_form(example1(1.0, b, 1.0, 1.0 + gap), w);
      for (double p : {2.0, 4.0}) {
        const auto r = estimate_stability(base, other, p, 2.0);
        const double raw = r.estimates[0].mean + r.estimates[1].mean + r.estimates[2].mean;
        CHECK(raw / std::pow(gap, p) == doctest::Approx(r.implied_constant));
        if (p == 2.0) constants.push_back(r.implied_constant);
      }
    }
    for (double c : constants) {
      CHECK(c / constants.front() <= 2.0);
      CHECK(c / constants.front() >= 0.5);
    }
  }
}

TEST_CASE("audit_constant_growth: base case and recursion") {
  CHECK(audit_constant_growth(1.0, 2.0, 1).value == 1.0);
  CHECK(audit_constant_growth(1.0, 2.0, 2).value == 6.0);
  CHECK(audit_constant_growth(2.0, 4.0, 2).value == 32.0);
  const auto big = audit_constant_growth(10.0, 2.0, 40);
  CHECK(big.saturated);
  CHECK(std::isinf(big.value));
  CHECK_THROWS_AS(audit_constant_growth(0.0, 2.0, 2), InvalidArgument);
  CHECK_THROWS_AS(audit_constant_growth(1.0, 2.0, 0), InvalidArgument);
}

TEST_CASE("property: audit is strictly increasing in C1 and k") {
  for (double p : {2.0, 3.0, 4.0}) {
    for (int k = 1; k <= 6; ++k) {
      double prev = 0.0;
      for (double c1 : {0.1, 0.5, 1.0, 2.0, 3.0}) {
        const double v = audit_constant_growth(c1, p, k).value;
        CHECK(v > prev);
        prev = v;
      }
    }
    for (double c1 : {0.5, 1.0, 2.0}) {
      double prev = 0.0;
      for (int k = 1; k <= 7; ++k) {
        const double v = audit_constant_growth(c1, p, k).value;
        CHECK(v > prev);
        prev = v;
      }
    }
  }
}

TEST_CASE("compute_kp: arithmetic") {
  CHECK(compute_kp({2.0, 1.0, 1.0}) == 20.0 / 3.0);
  CHECK(compute_kp({3.0, 1.0, 1.0}) == doctest::Approx(23.0 / 4.0).epsilon(1e-15));
  CHECK_THROWS_AS(compute_kp({1.0, 1.0, 1.0}), InvalidArgument);
  CHECK_THROWS_AS(compute_kp({0.5, 1.0, 1.0}), InvalidArgument);
  const auto d = KpInputs::with_default_constants(3.0);
  CHECK(d.bdg_lower == 1.0);
  CHECK(d.bdg_upper == 12.0);
}

TEST_CASE("property: K_p decreases in the lower and increases in the upper constant") {
  for (double p : {1.5, 2.0, 3.0, 5.0}) {
    for (double lower : {0.5, 1.0, 2.0}) {
      const double upper = 4.0 * p;
      const double base = compute_kp({p, upper, lower});
      const double h = 1e-4;
      CHECK(compute_kp({p, upper, lower + h}) < base);
      CHECK(compute_kp({p, upper + h, lower}) > base);
    }
  }
}

TEST_CASE("smallness_gates: strict boundary and zero product") {
  CHECK(smallness_gates(123.0, 0.0, 7.0).h51);
  const auto boundary = smallness_gates(2.0, 0.5, 1.0);
  CHECK(boundary.h51_product == 1.0);
  CHECK_FALSE(boundary.h51);
  const auto v = smallness_gates(20.0 / 3.0, 0.1, 1.0, 1.2);
  CHECK(v.h51_product == doctest::Approx(2.0 / 3.0));
  CHECK(v.h51);
  REQUIRE(v.theorem51.has_value());
  CHECK(*v.theorem51);
  CHECK(*v.theorem51_product == doctest::Approx(0.8));
  CHECK_FALSE(smallness_gates(1.0, 0.1, 1.0).theorem51.has_value());
  CHECK_THROWS_AS(smallness_gates(1.0, -0.1, 1.0), InvalidArgument);
}
