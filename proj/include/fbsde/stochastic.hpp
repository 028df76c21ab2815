#pragma once

// Time grids, seeded Brownian increments and path containers.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace fbsde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class TimeGrid {
 public:
  TimeGrid() = default;

  double t0() const { return points_.front(); }
  double T() const { return points_.back(); }
  std::size_t n_steps() const { return points_.size() - 1; }
  std::size_t n_points() const { return points_.size(); }
  double operator[](std::size_t k) const { return points_[k]; }
  double dt(std::size_t k) const { return points_[k + 1] - points_[k]; }
  std::span<const double> points() const { return points_; }

  /// Index of the node equal to t (within 1e-12 of the horizon length),
  /// or n_points() if there is none.
  std::size_t find(double t) const;

  bool operator==(const TimeGrid& other) const = default;

 private:
  friend TimeGrid build_grid(double, double, std::size_t);
  friend TimeGrid grid_from_points(std::vector<double>);
  std::vector<double> points_;
};

/// Uniform grid with n_steps + 1 points. The last point is exactly T.
TimeGrid build_grid(double t0, double T, std::size_t n_steps);

/// Grid from an explicit strictly increasing list of at least two points.
TimeGrid grid_from_points(std::vector<double> points);

// Counter-based random numbers. Every draw is a pure function of
// (seed, path, step, lane), so path i step k can be produced in any order.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view consumer);
double uniform01(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t lane = 0);
double standard_normal(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t lane = 0);

class BrownianEnsemble {
 public:
  BrownianEnsemble(TimeGrid grid, std::size_t n_paths, std::uint64_t seed, std::vector<double> increments);

  const TimeGrid& grid() const { return grid_; }
  std::size_t n_paths() const { return n_paths_; }
  std::uint64_t seed() const { return seed_; }
  bool antithetic() const { return antithetic_; }

  double increment(std::size_t path, std::size_t step) const { return increments_[path * grid_.n_steps() + step]; }
  std::span<const double> path(std::size_t i) const {
    return {increments_.data() + i * grid_.n_steps(), grid_.n_steps()};
  }
  std::span<const double> increments() const { return increments_; }

  /// B at node k along path i (B at t0 is 0).
  double value(std::size_t path, std::size_t node) const;

  bool operator==(const BrownianEnsemble& other) const = default;

 private:
  friend BrownianEnsemble antithetic_pair(const BrownianEnsemble&);
  TimeGrid grid_;
  std::size_t n_paths_ = 0;
  std::uint64_t seed_ = 0;
  bool antithetic_ = false;
  std::vector<double> increments_;
};

BrownianEnsemble sample_brownian(const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed);

/// All increments negated; same grid, path count and seed.
BrownianEnsemble antithetic_pair(const BrownianEnsemble& ensemble);

/// Halves every step of the ensemble's grid by Brownian-bridge midpoint
/// sampling. Summing the two fine increments of a coarse step reproduces
/// the coarse increment.
BrownianEnsemble refine_bridge(const BrownianEnsemble& coarse, std::uint64_t seed);

class PathEnsemble {
 public:
  PathEnsemble() = default;
  PathEnsemble(TimeGrid grid, std::size_t n_paths, std::size_t dimension);

  const TimeGrid& grid() const { return grid_; }
  std::size_t n_paths() const { return n_paths_; }
  std::size_t dimension() const { return dim_; }

  std::span<double> at(std::size_t path, std::size_t node) {
    return {values_.data() + (path * grid_.n_points() + node) * dim_, dim_};
  }
  std::span<const double> at(std::size_t path, std::size_t node) const {
    return {values_.data() + (path * grid_.n_points() + node) * dim_, dim_};
  }
  Eigen::Map<const Vec> vec(std::size_t path, std::size_t node) const {
    return Eigen::Map<const Vec>(values_.data() + (path * grid_.n_points() + node) * dim_,
                                 static_cast<Eigen::Index>(dim_));
  }
  double scalar(std::size_t path, std::size_t node) const { return at(path, node)[0]; }

  /// Writes v at (path, node); throws NonFiniteState on NaN or Inf.
  void set(std::size_t path, std::size_t node, const Vec& v);

  std::span<const double> values() const { return values_; }

 private:
  TimeGrid grid_;
  std::size_t n_paths_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

}  // namespace fbsde
