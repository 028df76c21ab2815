#include "fbsde/stochastic.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fbsde/errors.hpp"

namespace fbsde {

std::size_t TimeGrid::find(double t) const {
  const double tol = 1e-12 * (T() - t0());
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (std::abs(points_[k] - t) <= tol) return k;
  }
  return points_.size();
}

TimeGrid build_grid(double t0, double T, std::size_t n_steps) {
  if (!(T > t0)) {
    throw InvalidArgument("build_grid: horizon end T=" + std::to_string(T) + " must exceed t0=" + std::to_string(t0));
  }
  if (n_steps == 0) throw InvalidArgument("build_grid: n_steps must be at least 1");
  TimeGrid g;
  g.points_.resize(n_steps + 1);
  const double h = (T - t0) / static_cast<double>(n_steps);
  for (std::size_t k = 0; k < n_steps; ++k) g.points_[k] = t0 + h * static_cast<double>(k);
  g.points_[n_steps] = T;
  return g;
}

TimeGrid grid_from_points(std::vector<double> points) {
  if (points.size() < 2) throw InvalidArgument("grid_from_points: need at least two points");
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    if (!(points[k + 1] > points[k])) {
      throw InvalidArgument("grid_from_points: points must be strictly increasing (index " + std::to_string(k) + ")");
    }
  }
  TimeGrid g;
  g.points_ = std::move(points);
  return g;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view consumer) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : consumer) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ h);
}

double uniform01(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t lane) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ path);
  h = splitmix64(h ^ (step * 0xD1B54A32D192ED03ULL + lane));
  // 53 random bits mapped into the open interval (0, 1)
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

double standard_normal(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t lane) {
  const double u1 = uniform01(seed, path, step, 2 * lane);
  const double u2 = uniform01(seed, path, step, 2 * lane + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

BrownianEnsemble::BrownianEnsemble(TimeGrid grid, std::size_t n_paths, std::uint64_t seed,
                                   std::vector<double> increments)
    : grid_(std::move(grid)), n_paths_(n_paths), seed_(seed), increments_(std::move(increments)) {
  if (n_paths_ == 0) throw InvalidArgument("BrownianEnsemble: n_paths must be at least 1");
  if (increments_.size() != n_paths_ * grid_.n_steps()) {
    throw InvalidArgument("BrownianEnsemble: increment count does not match n_paths * n_steps");
  }
}

double BrownianEnsemble::value(std::size_t path, std::size_t node) const {
  double b = 0.0;
  for (std::size_t k = 0; k < node; ++k) b += increment(path, k);
  return b;
}

BrownianEnsemble sample_brownian(const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed) {
  if (n_paths == 0) throw InvalidArgument("sample_brownian: n_paths must be at least 1");
  const std::size_t n = grid.n_steps();
  std::vector<double> inc(n_paths * n);
  for (std::size_t i = 0; i < n_paths; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      inc[i * n + k] = std::sqrt(grid.dt(k)) * standard_normal(seed, i, k);
    }
  }
  return BrownianEnsemble(grid, n_paths, seed, std::move(inc));
}

BrownianEnsemble antithetic_pair(const BrownianEnsemble& ensemble) {
  std::vector<double> inc(ensemble.increments().begin(), ensemble.increments().end());
  for (double& v : inc) v = -v;
  BrownianEnsemble out(ensemble.grid(), ensemble.n_paths(), ensemble.seed(), std::move(inc));
  out.antithetic_ = !ensemble.antithetic_;
  return out;
}

BrownianEnsemble refine_bridge(const BrownianEnsemble& coarse, std::uint64_t seed) {
  const TimeGrid& g = coarse.grid();
  const std::size_t n = g.n_steps();
  std::vector<double> pts;
  pts.reserve(2 * n + 1);
  for (std::size_t k = 0; k < n; ++k) {
    pts.push_back(g[k]);
    pts.push_back(0.5 * (g[k] + g[k + 1]));
  }
  pts.push_back(g.T());
  TimeGrid fine = grid_from_points(std::move(pts));

  std::vector<double> inc(coarse.n_paths() * 2 * n);
  for (std::size_t i = 0; i < coarse.n_paths(); ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      // Bridge midpoint: B(mid) - B(t_k) ~ N(dB/2, dt/4) given the coarse increment dB.
      const double db = coarse.increment(i, k);
      const double first = 0.5 * db + 0.5 * std::sqrt(g.dt(k)) * standard_normal(seed, i, k);
      inc[i * 2 * n + 2 * k] = first;
      inc[i * 2 * n + 2 * k + 1] = db - first;
    }
  }
  return BrownianEnsemble(std::move(fine), coarse.n_paths(), splitmix64(coarse.seed() ^ seed), std::move(inc));
}

PathEnsemble::PathEnsemble(TimeGrid grid, std::size_t n_paths, std::size_t dimension)
    : grid_(std::move(grid)), n_paths_(n_paths), dim_(dimension), values_(n_paths * grid_.n_points() * dimension, 0.0) {
  if (dimension == 0) throw InvalidArgument("PathEnsemble: dimension must be positive");
}

void PathEnsemble::set(std::size_t path, std::size_t node, const Vec& v) {
  auto dst = at(path, node);
  for (std::size_t d = 0; d < dim_; ++d) {
    const double x = v[static_cast<Eigen::Index>(d)];
    if (!std::isfinite(x)) {
      throw NonFiniteState("non-finite state at path " + std::to_string(path) + ", step " + std::to_string(node));
    }
    dst[d] = x;
  }
}

}  // namespace fbsde
