#include "fbsde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fbsde/errors.hpp"

namespace fbsde {

void validate(const SolverParams& p) {
  if (!(p.delta_scale > 0)) throw InvalidArgument("SolverParams: delta_scale must be positive");
  if (!(p.picard_tol > 0)) throw InvalidArgument("SolverParams: picard_tol must be positive");
  if (p.picard_max_iter < 1) throw InvalidArgument("SolverParams: picard_max_iter must be positive");
  if (p.spatial.n_nodes < 3) throw InvalidArgument("SolverParams: spatial grid needs at least 3 nodes per axis");
  if (!(p.spatial.half_width > 0)) throw InvalidArgument("SolverParams: spatial half_width must be positive");
  if (p.quadrature_nodes < 2) throw InvalidArgument("SolverParams: quadrature_nodes must be at least 2");
  if (!(p.contraction_guard > 0 && p.contraction_guard < 1)) {
    throw InvalidArgument("SolverParams: contraction_guard must lie in (0, 1)");
  }
}

double choose_delta(double K, double L_sigma, const SolverParams& params, double horizon) {
  if (K < 0 || L_sigma < 0) throw InvalidArgument("choose_delta: constants must be non-negative");
  if (!(horizon > 0)) throw InvalidArgument("choose_delta: horizon must be positive");
  return std::min(horizon, params.delta_scale / (1.0 + K * K));
}

// ---------------------------------------------------------------------------
// spatial grid and interpolation

SpatialAxes::SpatialAxes(const Vec& center, double half_width, std::size_t n_nodes) : count_(n_nodes) {
  if (center.size() < 1 || center.size() > 2) throw InvalidArgument("SpatialAxes: only 1 or 2 dimensions supported");
  if (n_nodes < 2) throw InvalidArgument("SpatialAxes: a spatial grid needs at least two nodes per axis");
  if (!(half_width > 0)) throw InvalidArgument("SpatialAxes: half_width must be positive");
  for (Eigen::Index d = 0; d < center.size(); ++d) {
    lo_.push_back(center[d] - half_width);
    h_.push_back(2.0 * half_width / static_cast<double>(n_nodes - 1));
  }
  total_ = center.size() == 1 ? n_nodes : n_nodes * n_nodes;
}

Vec SpatialAxes::node(std::size_t flat) const {
  Vec x(dimension());
  std::size_t rest = flat;
  for (int d = 0; d < dimension(); ++d) {
    x[d] = axis_node(d, rest % count_);
    rest /= count_;
  }
  return x;
}

bool SpatialAxes::covers(const Vec& x) const {
  const double hi_slack = 1e-12;
  for (int d = 0; d < dimension(); ++d) {
    const double lo = lo_[static_cast<std::size_t>(d)];
    const double hi = axis_node(d, count_ - 1);
    if (x[d] < lo - hi_slack * (1 + std::abs(lo)) || x[d] > hi + hi_slack * (1 + std::abs(hi))) return false;
  }
  return true;
}

FieldSlice::FieldSlice(std::shared_ptr<const SpatialAxes> axes, int m)
    : axes_(std::move(axes)), m_(m), values_(axes_->n_nodes() * static_cast<std::size_t>(m), 0.0) {}

namespace {

struct CellLocation {
  std::size_t cell[2] = {0, 0};
  double frac[2] = {0.0, 0.0};
};

CellLocation locate_cell(const SpatialAxes& axes, const Vec& x) {
  CellLocation loc;
  const auto last = static_cast<double>(axes.nodes_per_axis() - 2);
  for (int d = 0; d < axes.dimension(); ++d) {
    const double s = (x[d] - axes.axis_node(d, 0)) / axes.spacing(d);
    const double c = std::clamp(std::floor(s), 0.0, last);
    loc.cell[d] = static_cast<std::size_t>(c);
    loc.frac[d] = s - c;
  }
  return loc;
}

}  // namespace

Vec FieldSlice::value(const Vec& x) const {
  const auto& ax = *axes_;
  const CellLocation loc = locate_cell(ax, x);
  Vec out = Vec::Zero(m_);
  if (ax.dimension() == 1) {
    const double l = loc.frac[0];
    out = (1.0 - l) * at(loc.cell[0]) + l * at(loc.cell[0] + 1);
    return out;
  }
  const double l0 = loc.frac[0], l1 = loc.frac[1];
  const std::size_t i = loc.cell[0], j = loc.cell[1];
  out = (1 - l0) * (1 - l1) * at(ax.flat_index(i, j)) + l0 * (1 - l1) * at(ax.flat_index(i + 1, j)) +
        (1 - l0) * l1 * at(ax.flat_index(i, j + 1)) + l0 * l1 * at(ax.flat_index(i + 1, j + 1));
  return out;
}

Mat FieldSlice::gradient(const Vec& x) const {
  const auto& ax = *axes_;
  const int n = ax.dimension();
  const CellLocation loc = locate_cell(ax, x);
  Mat g(m_, n);
  const double node_tol = 1e-12;
  if (n == 1) {
    const std::size_t i = loc.cell[0];
    const double h = ax.spacing(0);
    Vec slope = (at(i + 1) - at(i)) / h;
    if (std::abs(loc.frac[0]) < node_tol && i > 0) slope = 0.5 * (slope + (at(i) - at(i - 1)) / h);
    g.col(0) = slope;
    return g;
  }
  const std::size_t i = loc.cell[0], j = loc.cell[1];
  const double l0 = loc.frac[0], l1 = loc.frac[1];
  const double h0 = ax.spacing(0), h1 = ax.spacing(1);
  auto dx0 = [&](std::size_t ci, double w1) {
    return ((1 - w1) * (at(ax.flat_index(ci + 1, j)) - at(ax.flat_index(ci, j))) +
            w1 * (at(ax.flat_index(ci + 1, j + 1)) - at(ax.flat_index(ci, j + 1)))) /
           h0;
  };
  auto dx1 = [&](std::size_t cj, double w0) {
    return ((1 - w0) * (at(ax.flat_index(i, cj + 1)) - at(ax.flat_index(i, cj))) +
            w0 * (at(ax.flat_index(i + 1, cj + 1)) - at(ax.flat_index(i + 1, cj)))) /
           h1;
  };
  Vec s0 = dx0(i, l1);
  if (std::abs(l0) < node_tol && i > 0) s0 = 0.5 * (s0 + dx0(i - 1, l1));
  Vec s1 = dx1(j, l0);
  if (std::abs(l1) < node_tol && j > 0) s1 = 0.5 * (s1 + dx1(j - 1, l0));
  g.col(0) = s0;
  g.col(1) = s1;
  return g;
}

DecouplingField::DecouplingField(std::vector<double> times, std::shared_ptr<const SpatialAxes> axes, int m)
    : times_(std::move(times)), axes_(std::move(axes)), m_(m) {
  if (times_.size() < 2) throw InvalidArgument("DecouplingField: need at least two time nodes");
  slices_.reserve(times_.size());
  for (std::size_t i = 0; i < times_.size(); ++i) slices_.emplace_back(axes_, m_);
}

std::pair<std::size_t, double> DecouplingField::locate(double t) const {
  const double tol = 1e-12 * (times_.back() - times_.front());
  if (t <= times_.front() + tol) return {0, 0.0};
  if (t >= times_.back() - tol) return {times_.size() - 1, 0.0};
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  std::size_t i = static_cast<std::size_t>(it - times_.begin()) - 1;
  if (std::abs(t - times_[i]) <= tol) return {i, 0.0};
  if (std::abs(times_[i + 1] - t) <= tol) return {i + 1, 0.0};
  return {i, (t - times_[i]) / (times_[i + 1] - times_[i])};
}

Vec DecouplingField::value(double t, const Vec& x) const {
  auto [i, w] = locate(t);
  if (w == 0.0) return slices_[i].value(x);
  return (1 - w) * slices_[i].value(x) + w * slices_[i + 1].value(x);
}

Mat DecouplingField::gradient(double t, const Vec& x) const {
  auto [i, w] = locate(t);
  if (w == 0.0) return slices_[i].gradient(x);
  return (1 - w) * slices_[i].gradient(x) + w * slices_[i + 1].gradient(x);
}

double DecouplingField::interpolation_error_bound() const {
  const auto& ax = *axes_;
  const std::size_t c = ax.nodes_per_axis();
  double worst = 0.0;
  for (const auto& s : slices_) {
    if (ax.dimension() == 1) {
      for (std::size_t i = 1; i + 1 < c; ++i) {
        worst = std::max(worst, (s.at(i + 1) - 2 * s.at(i) + s.at(i - 1)).lpNorm<Eigen::Infinity>());
      }
    } else {
      for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t i = 1; i + 1 < c; ++i) {
          worst = std::max(worst, (s.at(ax.flat_index(i + 1, j)) - 2 * s.at(ax.flat_index(i, j)) +
                                   s.at(ax.flat_index(i - 1, j)))
                                      .lpNorm<Eigen::Infinity>());
          worst = std::max(worst, (s.at(ax.flat_index(j, i + 1)) - 2 * s.at(ax.flat_index(j, i)) +
                                   s.at(ax.flat_index(j, i - 1)))
                                      .lpNorm<Eigen::Infinity>());
        }
      }
    }
  }
  return worst / 8.0;
}

namespace {

std::shared_ptr<const SpatialAxes> make_axes(const SpatialGrid& spatial, const Vec& fallback_center) {
  const Vec& center = spatial.center.size() > 0 ? spatial.center : fallback_center;
  return std::make_shared<const SpatialAxes>(center, spatial.half_width, spatial.n_nodes);
}

}  // namespace

DecouplingField tabulate_field(std::vector<double> times, const SpatialGrid& spatial, int m,
                               const std::function<Vec(double, const Vec&)>& u) {
  if (spatial.center.size() == 0) throw InvalidArgument("tabulate_field: spatial center required");
  DecouplingField field(std::move(times), make_axes(spatial, spatial.center), m);
  for (std::size_t i = 0; i < field.n_times(); ++i) {
    for (std::size_t j = 0; j < field.axes().n_nodes(); ++j) {
      field.slice(i).at(j) = u(field.times()[i], field.axes().node(j));
    }
  }
  return field;
}

// ---------------------------------------------------------------------------
// local Picard iteration

namespace {

LocalPicardResult picard_node(const FBSDEProblem& problem, double t1, double t2, const FieldSlice& terminal,
                              const Vec& x, const SolverParams& params, const GaussHermiteRule& rule) {
  const double h = t2 - t1;
  const double sqrt_h = std::sqrt(h);
  const int m = problem.m;

  LocalPicardResult res;
  Vec y = terminal.value(x);
  Vec z = terminal.gradient(x) * problem.diffusion(t1, x, y, Vec::Zero(m));
  double prev_diff = 0.0;

  for (int it = 1; it <= params.picard_max_iter; ++it) {
    const Vec b = problem.drift(t1, x, y, z);
    const Vec s = problem.diffusion(t1, x, y, z);
    const Vec f = problem.driver(t1, x, y, z);
    Vec ey = Vec::Zero(m), ez = Vec::Zero(m);
    const Vec mean = x + b * h;
    for (std::size_t q = 0; q < rule.order(); ++q) {
      const Vec x2 = mean + s * (sqrt_h * rule.nodes[q]);
      if (!terminal.axes().covers(x2)) res.escaped = true;
      const Vec u2 = terminal.value(x2);
      ey += rule.weights[q] * u2;
      ez += (rule.weights[q] * rule.nodes[q]) * u2;
    }
    const Vec y_new = ey + f * h;
    const Vec z_new = ez / sqrt_h;
    if (!y_new.allFinite() || !z_new.allFinite()) {
      res.iterations = it;
      return res;
    }
    const double diff = std::max((y_new - y).lpNorm<Eigen::Infinity>(), sqrt_h * (z_new - z).lpNorm<Eigen::Infinity>());
    // Iterates of large magnitude cannot agree below a few ulps.
    const double floor = 64.0 * std::numeric_limits<double>::epsilon() *
                         std::max(y_new.lpNorm<Eigen::Infinity>(), sqrt_h * z_new.lpNorm<Eigen::Infinity>());
    const bool settled = diff < std::max(params.picard_tol, floor);
    const double ratio = (it == 1 || prev_diff == 0.0 || settled) ? 0.0 : diff / prev_diff;
    y = y_new;
    z = z_new;
    res.iterations = it;
    if (!settled || it == 1) res.contraction_ratio = ratio;
    if (ratio >= params.contraction_guard) break;
    if (settled) {
      res.converged = true;
      break;
    }
    prev_diff = diff;
  }
  res.y = std::move(y);
  res.z = std::move(z);
  return res;
}

}  // namespace

LocalPicardResult solve_local_picard(const FBSDEProblem& problem, double t1, double t2, const FieldSlice& terminal,
                                     const Vec& x0, const SolverParams& params) {
  validate(params);
  if (!(t2 > t1)) throw InvalidArgument("solve_local_picard: t2 must exceed t1");
  const double delta = choose_delta(problem.coefficients.K, problem.coefficients.L_sigma, params, problem.T - problem.t0);
  if (t2 - t1 > delta * (1 + 1e-12)) {
    throw InvalidArgument("solve_local_picard: interval length exceeds delta = " + std::to_string(delta));
  }
  if (terminal.m() != problem.m || terminal.axes().dimension() != problem.n) {
    throw InvalidArgument("solve_local_picard: field slice does not match the problem dimensions");
  }
  const auto rule = gauss_hermite(params.quadrature_nodes);
  auto res = picard_node(problem, t1, t2, terminal, x0, params, rule);
  if (!res.converged) {
    std::ostringstream os;
    os << "picard-divergence on [" << t1 << ", " << t2 << "] after " << res.iterations
       << " iterations (contraction ratio " << res.contraction_ratio << ")";
    throw PicardDivergence(os.str());
  }
  return res;
}

DecouplingField build_decoupling_field(const FBSDEProblem& problem, const SolverParams& params, const TimeGrid& grid) {
  validate(params);
  validate(problem);
  if (problem.n > 2 || problem.m > 2) throw InvalidArgument("build_decoupling_field: dimensions above 2 not supported");
  if (std::abs(grid.t0() - problem.t0) > 1e-12 || std::abs(grid.T() - problem.T) > 1e-12) {
    throw InvalidArgument("build_decoupling_field: grid does not span [t0, T] of the problem");
  }
  const auto rule = gauss_hermite(params.quadrature_nodes);
  auto axes = make_axes(params.spatial, problem.xi);
  if (axes->dimension() != problem.n) throw InvalidArgument("build_decoupling_field: spatial center has wrong dimension");

  std::vector<double> times(grid.points().begin(), grid.points().end());
  DecouplingField field(times, axes, problem.m);
  const std::size_t N = grid.n_steps();
  const std::size_t n_nodes = axes->n_nodes();

  for (std::size_t j = 0; j < n_nodes; ++j) field.slice(N).at(j) = problem.terminal(axes->node(j));

  const double horizon = problem.T - problem.t0;
  double delta = choose_delta(problem.coefficients.K, problem.coefficients.L_sigma, params, horizon);
  auto& diag = field.diagnostics;
  diag.delta_initial = delta;

  for (std::size_t k = N; k-- > 0;) {
    const double dt = grid.dt(k);
    while (true) {
      const auto n_sub = static_cast<std::size_t>(std::max(1.0, std::ceil(dt / delta - 1e-9)));
      const double h = dt / static_cast<double>(n_sub);
      FieldSlice cur = field.slice(k + 1);
      bool failed = false;
      std::size_t escapes = 0;
      int max_it = 0;
      double max_ratio = 0.0;
      for (std::size_t s = n_sub; s-- > 0 && !failed;) {
        const double t1 = s == 0 ? grid[k] : grid[k] + h * static_cast<double>(s);
        const double t2 = s + 1 == n_sub ? grid[k + 1] : grid[k] + h * static_cast<double>(s + 1);
        FieldSlice next(axes, problem.m);
        for (std::size_t j = 0; j < n_nodes; ++j) {
          auto r = picard_node(problem, t1, t2, cur, axes->node(j), params, rule);
          if (!r.converged) {
            failed = true;
            break;
          }
          if (r.escaped) ++escapes;
          max_it = std::max(max_it, r.iterations);
          max_ratio = std::max(max_ratio, r.contraction_ratio);
          next.at(j) = r.y;
        }
        cur = std::move(next);
      }
      if (!failed) {
        field.slice(k) = std::move(cur);
        diag.grid_escape_events += escapes;
        diag.max_picard_iterations = std::max(diag.max_picard_iterations, max_it);
        diag.max_contraction_ratio = std::max(diag.max_contraction_ratio, max_ratio);
        break;
      }
      delta *= 0.5;
      ++diag.delta_halvings;
      if (delta < 1e-6 * horizon) {
        std::ostringstream os;
        os << "picard-divergence: no contraction on [" << grid[k] << ", " << grid[k + 1]
           << "] with delta at its floor (" << delta << ")";
        throw PicardDivergence(os.str());
      }
    }
  }
  diag.delta_final = delta;
  if (diag.grid_escape_events > 0) {
    diag.warnings.push_back("grid-escape: " + std::to_string(diag.grid_escape_events) +
                            " node solves used extrapolated values beyond the spatial grid");
  }
  return field;
}

// ---------------------------------------------------------------------------
// forward pass

SolutionEnsemble solve_global(const FBSDEProblem& problem, const DecouplingField& field,
                              const BrownianEnsemble& noise) {
  validate(problem);
  const TimeGrid& grid = noise.grid();
  for (double t : field.times()) {
    if (grid.find(t) == grid.n_points()) {
      throw InvalidArgument("solve_global: field time node " + std::to_string(t) + " is not on the noise grid");
    }
  }
  if (field.axes().dimension() != problem.n || field.m() != problem.m) {
    throw InvalidArgument("solve_global: field does not match the problem dimensions");
  }
  const std::size_t P = noise.n_paths();
  const std::size_t N = grid.n_steps();
  SolutionEnsemble sol{PathEnsemble(grid, P, static_cast<std::size_t>(problem.n)),
                       PathEnsemble(grid, P, static_cast<std::size_t>(problem.m)),
                       PathEnsemble(grid, P, static_cast<std::size_t>(problem.m)),
                       {"decoupling-field", "", noise.seed(), noise.antithetic()},
                       std::vector<double>(P, 0.0),
                       0,
                       {}};
  const bool inner_pass = problem.coefficients.diffusion_depends_on_z;
  std::size_t outside = 0;

  for (std::size_t p = 0; p < P; ++p) {
    Vec x = problem.xi;
    Vec z_prev = Vec::Zero(problem.m);
    for (std::size_t k = 0; k <= N; ++k) {
      const double t = grid[k];
      if (!field.axes().covers(x)) ++outside;
      const Vec y = field.value(t, x);
      const Mat g = field.gradient(t, x);
      Vec z = g * problem.diffusion(t, x, y, z_prev);
      if (inner_pass) z = g * problem.diffusion(t, x, y, z);
      sol.X.set(p, k, x);
      sol.Y.set(p, k, y);
      sol.Z.set(p, k, z);
      if (k == N) {
        sol.terminal_residual[p] = (y - problem.terminal(x)).norm();
        break;
      }
      const double dt = grid.dt(k);
      x = x + problem.drift(t, x, y, z) * dt + problem.diffusion(t, x, y, z) * noise.increment(p, k);
      if (!x.allFinite()) {
        throw NonFiniteState("non-finite state at path " + std::to_string(p) + ", step " + std::to_string(k + 1));
      }
      z_prev = z;
    }
  }
  sol.samples_outside_grid = outside;
  const double frac = static_cast<double>(outside) / static_cast<double>(P * (N + 1));
  if (frac > 0.01) {
    std::ostringstream os;
    os << "field-coverage: " << 100.0 * frac << "% of X samples fell outside the spatial grid";
    sol.warnings.push_back(os.str());
  }
  return sol;
}

std::vector<double> field_lipschitz_profile(const DecouplingField& field) {
  const auto& ax = field.axes();
  const std::size_t c = ax.nodes_per_axis();
  if (c < 2) throw InvalidArgument("field_lipschitz_profile: need at least two spatial nodes");
  std::vector<double> out;
  out.reserve(field.n_times());
  for (std::size_t i = 0; i < field.n_times(); ++i) {
    const auto& s = field.slice(i);
    double worst = 0.0;
    if (ax.dimension() == 1) {
      for (std::size_t a = 0; a + 1 < c; ++a) worst = std::max(worst, (s.at(a + 1) - s.at(a)).norm() / ax.spacing(0));
    } else {
      for (std::size_t b = 0; b < c; ++b) {
        for (std::size_t a = 0; a + 1 < c; ++a) {
          worst = std::max(worst, (s.at(ax.flat_index(a + 1, b)) - s.at(ax.flat_index(a, b))).norm() / ax.spacing(0));
          worst = std::max(worst, (s.at(ax.flat_index(b, a + 1)) - s.at(ax.flat_index(b, a))).norm() / ax.spacing(1));
        }
      }
    }
    out.push_back(worst);
  }
  return out;
}

std::string describe(const SolverParams& p) {
  std::ostringstream os;
  os.precision(17);
  os << "delta_scale=" << p.delta_scale << ";picard_tol=" << p.picard_tol << ";picard_max_iter=" << p.picard_max_iter
     << ";half_width=" << p.spatial.half_width << ";n_nodes=" << p.spatial.n_nodes
     << ";quadrature_nodes=" << p.quadrature_nodes << ";contraction_guard=" << p.contraction_guard;
  return os.str();
}

}  // namespace fbsde
