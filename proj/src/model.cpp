#include "fbsde/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fbsde/errors.hpp"

namespace fbsde {

namespace {

std::string describe_point(double t, const Vec& x, const Vec& y, const Vec& z) {
  std::ostringstream os;
  os.precision(17);
  os << "t=" << t << " x=[" << x.transpose() << "] y=[" << y.transpose() << "] z=[" << z.transpose() << "]";
  return os.str();
}

Vec checked(const Vec& v, const char* map_name, double t, const Vec& x, const Vec& y, const Vec& z) {
  if (!v.allFinite()) {
    throw CoefficientEvaluationError(std::string("non-finite ") + map_name + " value at " + describe_point(t, x, y, z));
  }
  return v;
}

Vec stack(const Vec& x, const Vec& y, const Vec& z) {
  Vec p(x.size() + y.size() + z.size());
  p << x, y, z;
  return p;
}

}  // namespace

void validate(const FBSDEProblem& p) {
  if (p.n < 1 || p.m < 1) throw InvalidArgument("FBSDEProblem: dimensions must be positive");
  if (!(p.T > p.t0)) throw InvalidArgument("FBSDEProblem: T must exceed t0");
  const auto& c = p.coefficients;
  if (!c.drift || !c.diffusion || !c.driver || !c.terminal) {
    throw InvalidArgument("FBSDEProblem: all four coefficient maps must be set");
  }
  if (c.L < 0 || c.K < 0 || c.L_sigma < 0) throw InvalidArgument("FBSDEProblem: declared constants must be non-negative");
  if (p.xi.size() != p.n) throw InvalidArgument("FBSDEProblem: xi has the wrong dimension");
  const double ts[] = {p.t0, 0.5 * (p.t0 + p.T), p.T};
  for (double t : ts) {
    for (double s : {0.0, 1.0, -0.5}) {
      Vec x = Vec::Constant(p.n, s), y = Vec::Constant(p.m, s), z = Vec::Constant(p.m, -s);
      if (c.drift(t, x, y, z).size() != p.n) throw InvalidArgument("FBSDEProblem: drift must return R^n");
      if (c.diffusion(t, x, y, z).size() != p.n) throw InvalidArgument("FBSDEProblem: diffusion must return R^n");
      if (c.driver(t, x, y, z).size() != p.m) throw InvalidArgument("FBSDEProblem: driver must return R^m");
      if (c.terminal(x).size() != p.m) throw InvalidArgument("FBSDEProblem: terminal map must return R^m");
    }
  }
}

FBSDEProblem with_initial(FBSDEProblem problem, Vec xi) {
  if (xi.size() != problem.n) throw InvalidArgument("with_initial: xi has the wrong dimension");
  problem.xi = std::move(xi);
  return problem;
}

FBSDEProblem zero_problem(int n, int m, double t0, double T, Vec xi) {
  FBSDEProblem p;
  p.n = n;
  p.m = m;
  p.t0 = t0;
  p.T = T;
  p.xi = std::move(xi);
  p.name = "zero";
  p.coefficients.drift = [n](double, const Vec&, const Vec&, const Vec&) { return Vec::Zero(n); };
  p.coefficients.diffusion = [n](double, const Vec&, const Vec&, const Vec&) { return Vec::Zero(n); };
  p.coefficients.driver = [m](double, const Vec&, const Vec&, const Vec&) { return Vec::Zero(m); };
  p.coefficients.terminal = [m](const Vec&) { return Vec::Zero(m); };
  p.coefficients.diffusion_depends_on_z = false;
  validate(p);
  return p;
}

double AssumptionReport::K() const { return std::max({K_b, K_sigma_xy, K_f, K_Phi}); }

AssumptionReport probe_assumptions(const FBSDEProblem& problem, std::size_t n_probes, double box_radius,
                                   std::uint64_t seed) {
  if (n_probes < 2) throw InvalidArgument("probe_assumptions: n_probes must be at least 2");
  if (!(box_radius > 0)) throw InvalidArgument("probe_assumptions: box_radius must be positive");
  const int n = problem.n, m = problem.m;
  const auto& c = problem.coefficients;

  AssumptionReport rep;
  rep.n_probes = n_probes;

  struct Best {
    double value = 0.0;
    double t = 0.0;
    Vec a, b;
  };
  Best growth, kb, ksxy, lsz, kf, kphi;

  auto update = [](Best& best, double q, double t, const Vec& a, const Vec& b) {
    if (q > best.value) best = {q, t, a, b};
  };

  for (std::size_t i = 0; i < n_probes; ++i) {
    std::uint64_t lane = 0;
    auto draw = [&](int dim) {
      Vec v(dim);
      for (int d = 0; d < dim; ++d) v[d] = box_radius * (2.0 * uniform01(seed, i, 0, lane++) - 1.0);
      return v;
    };
    const double t = problem.t0 + (problem.T - problem.t0) * uniform01(seed, i, 0, lane++);
    const Vec x1 = draw(n), y1 = draw(m), z1 = draw(m);
    const Vec x2 = draw(n), y2 = draw(m), z2 = draw(m);

    const Vec b1 = checked(c.drift(t, x1, y1, z1), "drift", t, x1, y1, z1);
    const Vec s1 = checked(c.diffusion(t, x1, y1, z1), "diffusion", t, x1, y1, z1);
    const Vec f1 = checked(c.driver(t, x1, y1, z1), "driver", t, x1, y1, z1);
    const Vec phi1 = checked(c.terminal(x1), "terminal", t, x1, y1, z1);

    const double scale = 1.0 + x1.norm() + y1.norm() + z1.norm();
    const Vec p1 = stack(x1, y1, z1);
    update(growth, (b1.norm() + s1.norm() + f1.norm() + phi1.norm()) / scale, t, p1, p1);

    // block slices: vary x, then y, then z
    const Vec xs[3][3] = {{x2, y1, z1}, {x1, y2, z1}, {x1, y1, z2}};
    const double dist[3] = {(x2 - x1).norm(), (y2 - y1).norm(), (z2 - z1).norm()};
    for (int blk = 0; blk < 3; ++blk) {
      if (dist[blk] == 0.0) continue;
      const Vec& xa = xs[blk][0];
      const Vec& ya = xs[blk][1];
      const Vec& za = xs[blk][2];
      const Vec p2 = stack(xa, ya, za);
      const Vec b2 = checked(c.drift(t, xa, ya, za), "drift", t, xa, ya, za);
      const Vec s2 = checked(c.diffusion(t, xa, ya, za), "diffusion", t, xa, ya, za);
      const Vec f2 = checked(c.driver(t, xa, ya, za), "driver", t, xa, ya, za);
      update(kb, (b2 - b1).norm() / dist[blk], t, p1, p2);
      update(blk == 2 ? lsz : ksxy, (s2 - s1).norm() / dist[blk], t, p1, p2);
      update(kf, (f2 - f1).norm() / dist[blk], t, p1, p2);
      if (blk == 0) {
        const Vec phi2 = checked(c.terminal(x2), "terminal", t, x2, y1, z1);
        update(kphi, (phi2 - phi1).norm() / dist[0], t, p1, p2);
      }
    }
  }

  rep.growth = growth.value;
  rep.K_b = kb.value;
  rep.K_sigma_xy = ksxy.value;
  rep.L_sigma_z = lsz.value;
  rep.K_f = kf.value;
  rep.K_Phi = kphi.value;

  auto flag = [&](const char* name, const Best& best, double declared) {
    if (best.value > declared * (1.0 + 1e-9) + 1e-12) {
      rep.violations.push_back({name, best.value, declared, best.t, best.a, best.b});
    }
  };
  flag("L", growth, c.L);
  flag("K_b", kb, c.K);
  flag("K_sigma_xy", ksxy, c.K);
  flag("L_sigma_z", lsz, c.L_sigma);
  flag("K_f", kf, c.K);
  flag("K_Phi", kphi, c.K);
  return rep;
}

namespace {

struct AffineFit {
  bool ok = true;
  AffineBlock block;
};

// Fits g(x, y, z) = Gx x + Gy y + Gz z + c from unit steps, then checks the
// fit on a lattice.
AffineFit fit_affine(const std::function<Vec(const Vec&, const Vec&, const Vec&)>& g, int n, int m) {
  const int d = n + 2 * m;
  auto split_eval = [&](const Vec& p) { return g(p.head(n), p.segment(n, m), p.tail(m)); };
  const Vec g0 = split_eval(Vec::Zero(d));
  const int out = static_cast<int>(g0.size());
  Mat cols(out, d);
  for (int j = 0; j < d; ++j) {
    Vec e = Vec::Zero(d);
    e[j] = 1.0;
    cols.col(j) = split_eval(e) - g0;
  }

  AffineFit fit;
  auto matches = [&](const Vec& p) {
    const Vec v = split_eval(p);
    const Vec pred = cols * p + g0;
    return (v - pred).norm() <= 1e-10 * (1.0 + v.norm());
  };

  // full {-1, 0, 1}^d lattice
  std::vector<int> idx(d, -1);
  while (true) {
    Vec p(d);
    for (int j = 0; j < d; ++j) p[j] = idx[j];
    if (!matches(p)) {
      fit.ok = false;
      return fit;
    }
    int j = 0;
    while (j < d && idx[j] == 1) idx[j++] = -1;
    if (j == d) break;
    ++idx[j];
  }
  // off-lattice axis points catch odd nonlinearities
  for (int j = 0; j < d; ++j) {
    for (double s : {-2.0, -0.5, 0.5, 2.0, 3.0}) {
      Vec p = Vec::Zero(d);
      p[j] = s;
      if (!matches(p)) {
        fit.ok = false;
        return fit;
      }
    }
  }

  fit.block.x = cols.leftCols(n);
  fit.block.y = cols.middleCols(n, m);
  fit.block.z = cols.rightCols(m);
  fit.block.c = g0;
  return fit;
}

}  // namespace

std::optional<LinearTable> freeze_linear(const FBSDEProblem& problem, std::vector<double> times) {
  if (times.empty()) times = {problem.t0, 0.5 * (problem.t0 + problem.T), problem.T};
  const int n = problem.n, m = problem.m;
  const auto& c = problem.coefficients;
  LinearTable table;
  for (double t : times) {
    LinearSnapshot snap;
    snap.t = t;
    auto drift = fit_affine([&](const Vec& x, const Vec& y, const Vec& z) { return c.drift(t, x, y, z); }, n, m);
    if (!drift.ok) return std::nullopt;
    auto diff = fit_affine([&](const Vec& x, const Vec& y, const Vec& z) { return c.diffusion(t, x, y, z); }, n, m);
    if (!diff.ok) return std::nullopt;
    auto drv = fit_affine([&](const Vec& x, const Vec& y, const Vec& z) { return c.driver(t, x, y, z); }, n, m);
    if (!drv.ok) return std::nullopt;
    // terminal depends on x only; reuse the fitter with ignored y, z
    auto term = fit_affine([&](const Vec& x, const Vec&, const Vec&) { return c.terminal(x); }, n, m);
    if (!term.ok) return std::nullopt;
    snap.drift = std::move(drift.block);
    snap.diffusion = std::move(diff.block);
    snap.driver = std::move(drv.block);
    snap.terminal_x = term.block.x;
    snap.terminal_c = term.block.c;
    table.snapshots.push_back(std::move(snap));
  }
  return table;
}

}  // namespace fbsde
