#include <doctest.h>

#include <cmath>

#include "fbsde/errors.hpp"
#include "fbsde/model.hpp"
#include "fbsde/oracles.hpp"

using namespace fbsde;

namespace {

FBSDEProblem scalar_problem(CoefficientMap b, CoefficientMap s, CoefficientMap f, TerminalMap phi, double K,
                            double L_sigma = 0.0) {
  FBSDEProblem p = zero_problem(1, 1, 0.0, 1.0, Vec::Zero(1));
  p.coefficients.drift = std::move(b);
  p.coefficients.diffusion = std::move(s);
  p.coefficients.driver = std::move(f);
  p.coefficients.terminal = std::move(phi);
  p.coefficients.K = K;
  p.coefficients.L = 10.0;
  p.coefficients.L_sigma = L_sigma;
  return p;
}

Vec scalar(double v) { return Vec::Constant(1, v); }

double op_norm(const Mat& m) { return m.size() == 0 ? 0.0 : Eigen::JacobiSVD<Mat>(m).singularValues()(0); }

// Affine problem in dimension (n, m) with fixed random matrices.
FBSDEProblem random_affine(int n, int m, std::uint64_t seed) {
  auto rnd = [seed](int rows, int cols, std::uint64_t tag) {
    Mat out(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) out(i, j) = 2.0 * uniform01(seed, tag, std::uint64_t(i), std::uint64_t(j)) - 1.0;
    return out;
  };
  const Mat bx = rnd(n, n, 1), by = rnd(n, m, 2), bz = rnd(n, m, 3);
  const Mat sx = rnd(n, n, 4), sy = rnd(n, m, 5), sz = 0.1 * rnd(n, m, 6);
  const Mat fx = rnd(m, n, 7), fy = rnd(m, m, 8), fz = rnd(m, m, 9);
  const Mat hx = rnd(m, n, 10);
  FBSDEProblem p = zero_problem(n, m, 0.0, 1.0, Vec::Zero(n));
  p.coefficients.drift = [=](double, const Vec& x, const Vec& y, const Vec& z) -> Vec { return bx * x + by * y + bz * z; };
  p.coefficients.diffusion = [=](double, const Vec& x, const Vec& y, const Vec& z) -> Vec {
    return sx * x + sy * y + sz * z;
  };
  p.coefficients.driver = [=](double, const Vec& x, const Vec& y, const Vec& z) -> Vec { return fx * x + fy * y + fz * z; };
  p.coefficients.terminal = [=](const Vec& x) -> Vec { return hx * x; };
  p.coefficients.K = 10.0;
  p.coefficients.L = 100.0;
  p.coefficients.L_sigma = 1.0;
  return p;
}

}  // namespace

TEST_CASE("probe_assumptions: zero coefficients give zero constants") {
  const auto rep = probe_assumptions(zero_problem(1, 1, 0.0, 1.0, Vec::Zero(1)), 200, 1.0, 3);
  CHECK(rep.growth == 0.0);
  CHECK(rep.K() == 0.0);
  CHECK(rep.L_sigma_z == 0.0);
  CHECK(rep.violations.empty());
}

TEST_CASE("probe_assumptions: linear drift 2x") {
  const auto zero = [](double, const Vec&, const Vec&, const Vec&) { return scalar(0.0); };
  const auto p = scalar_problem([](double, const Vec& x, const Vec&, const Vec&) -> Vec { return 2.0 * x; }, zero, zero,
                                [](const Vec&) { return scalar(0.0); }, 2.0);
  const auto rep = probe_assumptions(p, 10000, 1.0, 17);
  CHECK(rep.K_b >= 2.0 - 0.05);
  CHECK(rep.K_b <= 2.0 + 1e-12);
  CHECK(rep.violations.empty());
}

TEST_CASE("probe_assumptions: sigma = x + 0.1 z isolates the z slope") {
  const auto zero = [](double, const Vec&, const Vec&, const Vec&) { return scalar(0.0); };
  const auto p = scalar_problem(zero, [](double, const Vec& x, const Vec&, const Vec& z) -> Vec { return x + 0.1 * z; },
                                zero, [](const Vec&) { return scalar(0.0); }, 1.0, 0.1);
  const auto rep = probe_assumptions(p, 10000, 1.0, 5);
  CHECK(rep.L_sigma_z >= 0.1 - 0.05);
  CHECK(rep.L_sigma_z <= 0.1 + 1e-12);
  CHECK(rep.K_sigma_xy == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("probe_assumptions: understated constants are reported with a point") {
  const auto zero = [](double, const Vec&, const Vec&, const Vec&) { return scalar(0.0); };
  const auto p = scalar_problem([](double, const Vec& x, const Vec&, const Vec&) -> Vec { return 3.0 * x; }, zero, zero,
                                [](const Vec&) { return scalar(0.0); }, 1.0);
  const auto rep = probe_assumptions(p, 100, 1.0, 1);
  REQUIRE_FALSE(rep.violations.empty());
  CHECK(rep.violations.front().constant == "K_b");
  CHECK(rep.violations.front().point_a.size() == 3);
}

TEST_CASE("probe_assumptions: non-finite coefficient values name the map") {
  const auto zero = [](double, const Vec&, const Vec&, const Vec&) { return scalar(0.0); };
  const auto p = scalar_problem(zero, zero, [](double, const Vec& x, const Vec&, const Vec&) -> Vec {
    return scalar(1.0 / (x(0) - x(0)));
  }, [](const Vec&) { return scalar(0.0); }, 1.0);
  try {
    probe_assumptions(p, 10, 1.0, 1);
    FAIL("expected an error");
  } catch (const CoefficientEvaluationError& e) {
    CHECK(std::string(e.what()).find("driver") != std::string::npos);
  }
}

TEST_CASE("property: probed constants grow with the nested probe set") {
  const auto p = random_affine(2, 2, 31);
  AssumptionReport prev = probe_assumptions(p, 2, 2.0, 7);
  for (std::size_t n : {10u, 50u, 200u, 1000u}) {
    const auto rep = probe_assumptions(p, n, 2.0, 7);
    CHECK(rep.growth >= prev.growth);
    CHECK(rep.K_b >= prev.K_b);
    CHECK(rep.K_sigma_xy >= prev.K_sigma_xy);
    CHECK(rep.L_sigma_z >= prev.L_sigma_z);
    CHECK(rep.K_f >= prev.K_f);
    CHECK(rep.K_Phi >= prev.K_Phi);
    prev = rep;
  }
}

TEST_CASE("property: affine probes never exceed the extracted operator norms") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const int n = 1 + int(seed % 2), m = 1 + int((seed / 2) % 2);
    const auto p = random_affine(n, m, seed);
    const auto table = freeze_linear(p);
    REQUIRE(table.has_value());
    const auto& s = table->snapshots.front();
    const auto rep = probe_assumptions(p, 3000, 3.0, seed);
    const double kb = std::max({op_norm(s.drift.x), op_norm(s.drift.y), op_norm(s.drift.z)});
    const double ksxy = std::max(op_norm(s.diffusion.x), op_norm(s.diffusion.y));
    const double kf = std::max({op_norm(s.driver.x), op_norm(s.driver.y), op_norm(s.driver.z)});
    CHECK(rep.K_b <= kb + 1e-8);
    CHECK(rep.K_sigma_xy <= ksxy + 1e-8);
    CHECK(rep.L_sigma_z <= op_norm(s.diffusion.z) + 1e-8);
    CHECK(rep.K_f <= kf + 1e-8);
    CHECK(rep.K_Phi <= op_norm(s.terminal_x) + 1e-8);
  }
}

TEST_CASE("freeze_linear: Example-1 coefficients") {
  Example1Params e;
  e.a = polynomial_profile({0.5, 1.0});
  e.b = polynomial_profile({2.0, -1.0});
  e.c = constant_profile(0.7);
  const auto grid = build_grid(0.0, 1.0, 16);
  const auto table = freeze_linear(example1_problem(e, grid), {0.0, 0.5, 1.0});
  REQUIRE(table.has_value());
  REQUIRE(table->snapshots.size() == 3);
  for (const auto& s : table->snapshots) {
    CHECK(s.drift.y(0, 0) == doctest::Approx(e.b(s.t)).epsilon(1e-9));
    CHECK(s.drift.x(0, 0) == doctest::Approx(0.0));
    // f = -(a x + b P y) in the dY = -f ds convention
    CHECK(s.driver.x(0, 0) == doctest::Approx(-e.a(s.t)).epsilon(1e-9));
    CHECK(s.diffusion.c(0) == doctest::Approx(0.7));
  }
  const double PT = 0.5 + 0.5;  // integral of 0.5 + t over [0, 1]
  CHECK(table->snapshots.back().terminal_x(0, 0) == doctest::Approx(PT).epsilon(1e-9));
}

TEST_CASE("freeze_linear: non-affine drift gives no table") {
  const auto zero = [](double, const Vec&, const Vec&, const Vec&) { return scalar(0.0); };
  const auto p = scalar_problem([](double, const Vec& x, const Vec&, const Vec&) { return scalar(std::sin(x(0))); }, zero,
                                zero, [](const Vec&) { return scalar(0.0); }, 1.0);
  CHECK_FALSE(freeze_linear(p).has_value());
}

TEST_CASE("freeze_linear: zero problem gives a zero table") {
  const auto table = freeze_linear(zero_problem(2, 1, 0.0, 1.0, Vec::Zero(2)));
  REQUIRE(table.has_value());
  for (const auto& s : table->snapshots) {
    CHECK(s.drift.x.norm() == 0.0);
    CHECK(s.drift.c.norm() == 0.0);
    CHECK(s.driver.y.norm() == 0.0);
    CHECK(s.terminal_x.norm() == 0.0);
  }
}

TEST_CASE("validate: dimension and constant checks") {
  auto p = zero_problem(2, 1, 0.0, 1.0, Vec::Zero(2));
  CHECK_NOTHROW(validate(p));
  p.coefficients.drift = [](double, const Vec&, const Vec&, const Vec&) { return Vec(Vec::Zero(3)); };
  CHECK_THROWS_AS(validate(p), InvalidArgument);
  p = zero_problem(1, 1, 0.0, 1.0, Vec::Zero(1));
  p.coefficients.K = -1.0;
  CHECK_THROWS_AS(validate(p), InvalidArgument);
  p = zero_problem(1, 1, 0.0, 1.0, Vec::Zero(1));
  p.T = 0.0;
  CHECK_THROWS_AS(validate(p), InvalidArgument);
}

TEST_CASE("with_initial replaces xi only") {
  const auto p = zero_problem(1, 1, 0.0, 1.0, Vec::Zero(1));
  const auto q = with_initial(p, scalar(3.0));
  CHECK(q.xi(0) == 3.0);
  CHECK(q.T == p.T);
  CHECK_THROWS_AS(with_initial(p, Vec::Zero(2)), InvalidArgument);
}
