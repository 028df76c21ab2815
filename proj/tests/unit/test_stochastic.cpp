#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fbsde/errors.hpp"
#include "fbsde/stochastic.hpp"

using namespace fbsde;

namespace {

double sample_mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

double sample_variance(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / double(v.size() - 1);
}

std::vector<double> terminal_values(const BrownianEnsemble& e) {
  std::vector<double> out(e.n_paths());
  for (std::size_t p = 0; p < e.n_paths(); ++p) out[p] = e.value(p, e.grid().n_steps());
  return out;
}

}  // namespace

TEST_CASE("build_grid: uniform points") {
  const auto g = build_grid(0.0, 1.0, 4);
  REQUIRE(g.n_points() == 5);
  const double expected[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  for (std::size_t k = 0; k < 5; ++k) CHECK(g[k] == expected[k]);
  CHECK(g.dt(0) == 0.25);
}

TEST_CASE("build_grid: single step") {
  const auto g = build_grid(0.0, 1.0, 1);
  REQUIRE(g.n_points() == 2);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
}

TEST_CASE("build_grid: degenerate interval and zero steps are rejected") {
  CHECK_THROWS_AS(build_grid(0.5, 0.5, 4), InvalidArgument);
  CHECK_THROWS_AS(build_grid(1.0, 0.5, 4), InvalidArgument);
  CHECK_THROWS_AS(build_grid(0.0, 1.0, 0), InvalidArgument);
}

TEST_CASE("build_grid: last point is exactly T and points increase") {
  for (std::size_t n : {3u, 7u, 64u, 1000u}) {
    const auto g = build_grid(0.1, 2.3, n);
    CHECK(g.T() == 2.3);
    for (std::size_t k = 0; k < n; ++k) CHECK(g[k + 1] > g[k]);
  }
}

TEST_CASE("grid_from_points: rejects non-increasing lists") {
  CHECK_THROWS_AS(grid_from_points({0.0}), InvalidArgument);
  CHECK_THROWS_AS(grid_from_points({0.0, 0.5, 0.5}), InvalidArgument);
  const auto g = grid_from_points({0.0, 0.1, 1.0});
  CHECK(g.find(0.1) == 1);
  CHECK(g.find(0.2) == g.n_points());
}

TEST_CASE("sample_brownian: same inputs give identical increments") {
  const auto g = build_grid(0.0, 1.0, 16);
  const auto a = sample_brownian(g, 100, 42);
  const auto b = sample_brownian(g, 100, 42);
  CHECK(a == b);
  const auto c = sample_brownian(g, 100, 43);
  CHECK_FALSE(a == c);
}

TEST_CASE("sample_brownian: a path does not depend on how many paths are drawn") {
  const auto g = build_grid(0.0, 1.0, 8);
  const auto small = sample_brownian(g, 3, 9);
  const auto big = sample_brownian(g, 50, 9);
  for (std::size_t k = 0; k < 8; ++k) CHECK(small.increment(2, k) == big.increment(2, k));
}

TEST_CASE("sample_brownian: terminal mean and variance at 1e5 paths") {
  const auto g = build_grid(0.0, 1.0, 4);
  for (std::uint64_t seed : {1ull, 2024ull}) {
    const auto e = sample_brownian(g, 100000, seed);
    const auto bt = terminal_values(e);
    CHECK(std::abs(sample_mean(bt)) <= 3.0 / std::sqrt(1e5));
    CHECK(std::abs(sample_variance(bt) - 1.0) <= 3.0 / std::sqrt(1e5) * std::sqrt(2.0));
  }
}

TEST_CASE("property: per-step increment moments match dt") {
  const auto g = grid_from_points({0.0, 0.01, 0.3, 0.31, 1.0});
  const std::size_t n = 40000;
  const auto e = sample_brownian(g, n, 77);
  for (std::size_t k = 0; k < g.n_steps(); ++k) {
    std::vector<double> inc(n);
    for (std::size_t p = 0; p < n; ++p) inc[p] = e.increment(p, k);
    const double dt = g.dt(k);
    CHECK(std::abs(sample_mean(inc)) <= 3.0 * std::sqrt(dt / double(n)));
    CHECK(std::abs(sample_variance(inc) / dt - 1.0) <= 3.0 * std::sqrt(2.0 / double(n)));
  }
}

TEST_CASE("antithetic_pair: sign flip") {
  const auto g = build_grid(0.0, 1.0, 2);
  const BrownianEnsemble e(g, 1, 5, {0.3, -0.1});
  const auto a = antithetic_pair(e);
  CHECK(a.increment(0, 0) == -0.3);
  CHECK(a.increment(0, 1) == 0.1);
  CHECK(a.antithetic());
  CHECK(a.seed() == e.seed());
}

TEST_CASE("antithetic_pair: involution is bit-identical") {
  const auto e = sample_brownian(build_grid(0.0, 2.0, 32), 64, 11);
  CHECK(antithetic_pair(antithetic_pair(e)) == e);
}

TEST_CASE("refine_bridge: fine increments sum to the coarse ones") {
  const auto coarse = sample_brownian(build_grid(0.0, 1.0, 16), 200, 3);
  const auto fine = refine_bridge(coarse, 99);
  REQUIRE(fine.grid().n_steps() == 32);
  for (std::size_t p = 0; p < 200; ++p) {
    for (std::size_t k = 0; k < 16; ++k) {
      CHECK(fine.increment(p, 2 * k) + fine.increment(p, 2 * k + 1) == doctest::Approx(coarse.increment(p, k)).epsilon(1e-13));
    }
  }
  CHECK(refine_bridge(coarse, 99) == fine);
}

TEST_CASE("property: refined increments keep variance dt/2") {
  const auto coarse = sample_brownian(build_grid(0.0, 1.0, 4), 40000, 8);
  const auto fine = refine_bridge(coarse, 1);
  std::vector<double> first(40000);
  for (std::size_t p = 0; p < 40000; ++p) first[p] = fine.increment(p, 0);
  CHECK(std::abs(sample_variance(first) / 0.125 - 1.0) <= 3.0 * std::sqrt(2.0 / 40000.0));
}

TEST_CASE("derive_seed: named streams differ and are stable") {
  CHECK(derive_seed(1, "brownian") == derive_seed(1, "brownian"));
  CHECK(derive_seed(1, "brownian") != derive_seed(1, "probe"));
  CHECK(derive_seed(1, "brownian") != derive_seed(2, "brownian"));
}

TEST_CASE("uniform01 stays in the open unit interval") {
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const double u = uniform01(5, i, i % 7, i % 3);
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("PathEnsemble: non-finite writes are rejected") {
  PathEnsemble e(build_grid(0.0, 1.0, 2), 2, 2);
  Vec v(2);
  v << 1.0, 2.0;
  e.set(1, 2, v);
  CHECK(e.vec(1, 2) == v);
  v(1) = std::nan("");
  CHECK_THROWS_AS(e.set(0, 0, v), NonFiniteState);
  v(1) = INFINITY;
  CHECK_THROWS_AS(e.set(0, 0, v), NonFiniteState);
}
