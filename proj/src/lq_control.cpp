#include "fbsde/lq_control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "fbsde/errors.hpp"

namespace fbsde {

MatrixProfile constant_matrix(Mat value) {
  return [v = std::move(value)](double) { return v; };
}

VectorProfile constant_vector(Vec value) {
  return [v = std::move(value)](double) { return v; };
}

MatrixProfile piecewise_constant(std::vector<double> nodes, std::vector<Mat> values) {
  if (nodes.empty() || nodes.size() != values.size()) {
    throw InvalidArgument("piecewise_constant: need one value per node");
  }
  return [n = std::move(nodes), v = std::move(values)](double t) -> Mat {
    auto it = std::upper_bound(n.begin(), n.end(), t + 1e-14 * (1 + std::abs(t)));
    if (it == n.begin()) return v.front();
    return v[static_cast<std::size_t>(it - n.begin()) - 1];
  };
}

LQSpec LQSpec::zero(int n, int m_u, double t0, double T) {
  LQSpec s;
  s.n = n;
  s.m_u = m_u;
  s.t0 = t0;
  s.T = T;
  s.A = constant_matrix(Mat::Zero(n, n));
  s.B = constant_matrix(Mat::Zero(n, m_u));
  s.C = constant_matrix(Mat::Zero(n, n));
  s.D = constant_matrix(Mat::Zero(n, m_u));
  s.Q = constant_matrix(Mat::Zero(n, n));
  s.S = constant_matrix(Mat::Zero(m_u, n));
  s.R = constant_matrix(Mat::Identity(m_u, m_u));
  s.H = Mat::Zero(n, n);
  s.b = constant_vector(Vec::Zero(n));
  s.sigma = constant_vector(Vec::Zero(n));
  s.q = constant_vector(Vec::Zero(n));
  s.rho = constant_vector(Vec::Zero(m_u));
  s.h = Vec::Zero(n);
  return s;
}

namespace {

double min_eigenvalue(const Mat& m) {
  const Mat sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

void check_shape(const Mat& m, int rows, int cols, const char* name, double t) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << "LQSpec: " << name << " at t=" << t << " is " << m.rows() << "x" << m.cols() << ", expected " << rows << "x"
       << cols;
    throw InvalidArgument(os.str());
  }
}

// All matrices of the Hamiltonian system at one time.
struct Frozen {
  Mat A, B, C, D, Q, S, R, Rinv;
  Vec b, sigma, q, rho;
  Mat Ax, Ay, Az, Sx, Sy, Sz, Fx, Fy, Fz;  // drift, diffusion, driver blocks
  Vec a0, s0, f0;

  Frozen(const LQSpec& spec, double t) {
    A = spec.A(t);
    B = spec.B(t);
    C = spec.C(t);
    D = spec.D(t);
    Q = spec.Q(t);
    S = spec.S(t);
    R = spec.R(t);
    b = spec.b(t);
    sigma = spec.sigma(t);
    q = spec.q(t);
    rho = spec.rho(t);
    Eigen::FullPivLU<Mat> lu(R);
    if (!lu.isInvertible()) {
      std::ostringstream os;
      os << "singular R at t=" << t;
      throw InvalidArgument(os.str());
    }
    Rinv = lu.inverse();
    const Mat At = A - B * Rinv * S;
    const Mat Ct = C - D * Rinv * S;
    Ax = At;
    Ay = -B * Rinv * B.transpose();
    Az = -B * Rinv * D.transpose();
    a0 = -B * Rinv * rho + b;
    Sx = Ct;
    Sy = -D * Rinv * B.transpose();
    Sz = -D * Rinv * D.transpose();
    s0 = -D * Rinv * rho + sigma;
    Fx = Q - S.transpose() * Rinv * S;
    Fy = At.transpose();
    Fz = Ct.transpose();
    f0 = -S.transpose() * Rinv * rho + q;
  }
};

// Matrices per queried time; the solvers revisit the same grid times for
// every path.
struct FrozenCache {
  explicit FrozenCache(LQSpec s) : spec(std::move(s)) {}

  std::shared_ptr<const Frozen> at(double t) {
    std::lock_guard<std::mutex> lock(mu);
    auto it = table.find(t);
    if (it != table.end()) return it->second;
    if (table.size() >= 65536) table.clear();
    auto f = std::make_shared<const Frozen>(spec, t);
    table.emplace(t, f);
    return f;
  }

  const LQSpec spec;
  std::mutex mu;
  std::unordered_map<double, std::shared_ptr<const Frozen>> table;
};

std::vector<double> default_times(const LQSpec& spec, std::span<const double> times) {
  if (!times.empty()) return {times.begin(), times.end()};
  return {spec.t0, 0.5 * (spec.t0 + spec.T), spec.T};
}

}  // namespace

LQAssumptionReport check_lq_assumptions(const LQSpec& spec, std::span<const double> times_in) {
  const auto times = default_times(spec, times_in);
  const int n = spec.n, mu = spec.m_u;
  check_shape(spec.H, n, n, "H", spec.T);
  if (spec.h.size() != n) throw InvalidArgument("LQSpec: h has the wrong dimension");
  if (!(spec.delta_R > 0)) throw InvalidArgument("LQSpec: delta_R must be positive");

  LQAssumptionReport rep;
  rep.min_eig_state_weight = std::numeric_limits<double>::infinity();
  rep.min_eig_R = std::numeric_limits<double>::infinity();
  for (double t : times) {
    const Mat A = spec.A(t), B = spec.B(t), C = spec.C(t), D = spec.D(t), Q = spec.Q(t), S = spec.S(t), R = spec.R(t);
    check_shape(A, n, n, "A", t);
    check_shape(B, n, mu, "B", t);
    check_shape(C, n, n, "C", t);
    check_shape(D, n, mu, "D", t);
    check_shape(Q, n, n, "Q", t);
    check_shape(S, mu, n, "S", t);
    check_shape(R, mu, mu, "R", t);
    if (spec.b(t).size() != n || spec.sigma(t).size() != n || spec.q(t).size() != n || spec.rho(t).size() != mu) {
      throw InvalidArgument("LQSpec: affine term with the wrong dimension");
    }
    if ((Q - Q.transpose()).norm() > 1e-12 * (1 + Q.norm()) || (R - R.transpose()).norm() > 1e-12 * (1 + R.norm())) {
      throw InvalidArgument("LQSpec: Q and R must be symmetric (t=" + std::to_string(t) + ")");
    }
    const double eig_r = min_eigenvalue(R);
    if (eig_r < spec.delta_R - 1e-10) {
      throw InvalidArgument("LQSpec: R is not bounded below by delta_R at t=" + std::to_string(t));
    }
    const Mat W = Q - S.transpose() * R.inverse() * S;
    const double eig_w = min_eigenvalue(W);
    if (eig_w < -1e-10) {
      std::ostringstream os;
      os << "LQSpec: Q - S'R^-1 S has minimum eigenvalue " << eig_w << " at t=" << t;
      throw InvalidArgument(os.str());
    }
    rep.min_eig_state_weight = std::min(rep.min_eig_state_weight, eig_w);
    rep.min_eig_R = std::min(rep.min_eig_R, eig_r);
    rep.sup_norm_A = std::max(rep.sup_norm_A, A.norm());
    rep.sup_norm_B = std::max(rep.sup_norm_B, B.norm());
    rep.sup_norm_C = std::max(rep.sup_norm_C, C.norm());
    rep.sup_norm_D = std::max(rep.sup_norm_D, D.norm());
    rep.norm_D.push_back(std::sqrt((D * D.transpose()).trace()));
  }
  if ((spec.H - spec.H.transpose()).norm() > 1e-12 * (1 + spec.H.norm())) throw InvalidArgument("LQSpec: H must be symmetric");
  rep.min_eig_H = min_eigenvalue(spec.H);
  if (rep.min_eig_H < -1e-10) throw InvalidArgument("LQSpec: H is not positive semidefinite");
  return rep;
}

FBSDEProblem build_hamiltonian_fbsde(const LQSpec& spec, const Vec& x0, std::span<const double> times_in) {
  const auto times = default_times(spec, times_in);
  if (x0.size() != spec.n) throw InvalidArgument("build_hamiltonian_fbsde: x0 has the wrong dimension");
  const int n = spec.n;

  double K = spec.H.norm(), L = spec.H.norm() + spec.h.norm(), L_sigma = 0.0;
  bool z_free = true;
  for (double t : times) {
    const Frozen fz(spec, t);
    K = std::max({K, fz.Ax.norm(), fz.Ay.norm(), fz.Az.norm(), fz.Sx.norm(), fz.Sy.norm(), fz.Fx.norm(), fz.Fy.norm(),
                  fz.Fz.norm()});
    L = std::max(L, fz.Ax.norm() + fz.Ay.norm() + fz.Az.norm() + fz.Sx.norm() + fz.Sy.norm() + fz.Sz.norm() +
                        fz.Fx.norm() + fz.Fy.norm() + fz.Fz.norm() + fz.a0.norm() + fz.s0.norm() + fz.f0.norm());
    L_sigma = std::max(L_sigma, fz.Sz.norm());
    if (fz.Sz.norm() > 0) z_free = false;
  }

  auto cache = std::make_shared<FrozenCache>(spec);
  FBSDEProblem prob;
  prob.n = prob.m = n;
  prob.t0 = spec.t0;
  prob.T = spec.T;
  prob.xi = x0;
  prob.name = "lq-hamiltonian";
  prob.coefficients.drift = [cache](double t, const Vec& x, const Vec& y, const Vec& z) {
    const auto f = cache->at(t);
    return Vec(f->Ax * x + f->Ay * y + f->Az * z + f->a0);
  };
  prob.coefficients.diffusion = [cache](double t, const Vec& x, const Vec& y, const Vec& z) {
    const auto f = cache->at(t);
    return Vec(f->Sx * x + f->Sy * y + f->Sz * z + f->s0);
  };
  prob.coefficients.driver = [cache](double t, const Vec& x, const Vec& y, const Vec& z) {
    const auto f = cache->at(t);
    return Vec(f->Fx * x + f->Fy * y + f->Fz * z + f->f0);
  };
  prob.coefficients.terminal = [cache](const Vec& x) { return Vec(cache->spec.H * x + cache->spec.h); };
  prob.coefficients.K = K;
  prob.coefficients.L = L;
  prob.coefficients.L_sigma = L_sigma;
  prob.coefficients.diffusion_depends_on_z = !z_free;
  validate(prob);
  return prob;
}

namespace {

Vec hamiltonian_map(const Frozen& f, const Vec& x, const Vec& y, const Vec& z) {
  const auto n = x.size();
  Vec out(3 * n);
  out.segment(0, n) = -(f.Fx * x + f.Fy * y + f.Fz * z);
  out.segment(n, n) = f.Ax * x + f.Ay * y + f.Az * z;
  out.segment(2 * n, n) = f.Sx * x + f.Sy * y + f.Sz * z;
  return out;
}

}  // namespace

Vec hamiltonian_map(const LQSpec& spec, double s, const Vec& x, const Vec& y, const Vec& z) {
  return hamiltonian_map(Frozen(spec, s), x, y, z);
}

MonotonicityCertificate monotonicity_certificate(const LQSpec& spec, std::size_t n_samples, std::uint64_t seed,
                                                 std::span<const double> times_in) {
  const auto times = default_times(spec, times_in);
  check_lq_assumptions(spec, times);
  MonotonicityCertificate cert;
  cert.n_samples = n_samples;
  cert.c1 = std::numeric_limits<double>::infinity();
  cert.c2 = std::numeric_limits<double>::infinity();
  std::vector<Frozen> frozen;
  frozen.reserve(times.size());
  for (double t : times) {
    frozen.emplace_back(spec, t);
    const auto& f = frozen.back();
    cert.c1 = std::min(cert.c1, std::max(0.0, min_eigenvalue(f.Fx)));
    cert.c2 = std::min(cert.c2, min_eigenvalue(f.Rinv));
  }
  const int n = spec.n;
  double worst = -std::numeric_limits<double>::infinity();
  double identity = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::size_t node = std::min(times.size() - 1, static_cast<std::size_t>(uniform01(seed, i, 0, 0) * times.size()));
    const auto& f = frozen[node];
    Vec x(n), y(n), z(n);
    for (int d = 0; d < n; ++d) {
      x[d] = standard_normal(seed, i, 1, d);
      y[d] = standard_normal(seed, i, 2, d);
      z[d] = standard_normal(seed, i, 3, d);
    }
    Vec U(3 * n);
    U << x, y, z;
    const Vec F = hamiltonian_map(spec, times[node], x, y, z);
    const double pairing = F.dot(U);
    const Vec w = f.B.transpose() * y + f.D.transpose() * z;
    worst = std::max(worst, pairing + cert.c1 * x.squaredNorm() + cert.c2 * w.squaredNorm());
    identity = std::max(identity, std::abs(pairing + x.dot(f.Fx * x) + w.dot(f.Rinv * w)));
  }
  cert.worst_residual = n_samples > 0 ? worst : 0.0;
  cert.identity_residual = identity;
  if (cert.worst_residual > 1e-8 || cert.identity_residual > 1e-8) {
    std::ostringstream os;
    os << "monotonicity certificate failed: worst residual " << cert.worst_residual << ", identity residual "
       << cert.identity_residual;
    throw NumericalError(os.str());
  }
  return cert;
}

PathEnsemble optimal_control_from_solution(const LQSpec& spec, const SolutionEnsemble& sol) {
  if (static_cast<int>(sol.X.dimension()) != spec.n || static_cast<int>(sol.Y.dimension()) != spec.n) {
    throw InvalidArgument("optimal_control_from_solution: solution dimensions do not match the spec");
  }
  const TimeGrid& grid = sol.grid();
  PathEnsemble u(grid, sol.n_paths(), static_cast<std::size_t>(spec.m_u));
  for (std::size_t k = 0; k < grid.n_points(); ++k) {
    const double t = grid[k];
    const Mat B = spec.B(t), D = spec.D(t), S = spec.S(t), Rinv = spec.R(t).inverse();
    const Vec rho = spec.rho(t);
    for (std::size_t p = 0; p < sol.n_paths(); ++p) {
      u.set(p, k, -Rinv * (B.transpose() * sol.Y.vec(p, k) + D.transpose() * sol.Z.vec(p, k) + S * sol.X.vec(p, k) + rho));
    }
  }
  return u;
}

double stationarity_residual(const LQSpec& spec, const SolutionEnsemble& sol, const PathEnsemble& control) {
  const TimeGrid& grid = sol.grid();
  double worst = 0.0;
  for (std::size_t k = 0; k < grid.n_points(); ++k) {
    const double t = grid[k];
    const Mat B = spec.B(t), D = spec.D(t), S = spec.S(t), R = spec.R(t);
    const Vec rho = spec.rho(t);
    for (std::size_t p = 0; p < sol.n_paths(); ++p) {
      const Vec r = B.transpose() * sol.Y.vec(p, k) + D.transpose() * sol.Z.vec(p, k) + S * sol.X.vec(p, k) +
                    R * control.vec(p, k) + rho;
      worst = std::max(worst, r.lpNorm<Eigen::Infinity>());
    }
  }
  return worst;
}

CostEstimate simulate_cost(const LQSpec& spec, const PathEnsemble& control, const BrownianEnsemble& noise,
                           const Vec& x0) {
  const TimeGrid& grid = noise.grid();
  if (!(control.grid() == grid)) throw InvalidArgument("simulate_cost: control and noise grids differ");
  if (control.n_paths() != noise.n_paths()) throw InvalidArgument("simulate_cost: path counts differ");
  if (static_cast<int>(control.dimension()) != spec.m_u) throw InvalidArgument("simulate_cost: control dimension mismatch");
  if (x0.size() != spec.n) throw InvalidArgument("simulate_cost: x0 dimension mismatch");

  struct Node {
    Mat A, B, C, D, Q, S, R;
    Vec b, sigma, q, rho;
  };
  std::vector<Node> nodes;
  nodes.reserve(grid.n_steps());
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    const double t = grid[k];
    nodes.push_back({spec.A(t), spec.B(t), spec.C(t), spec.D(t), spec.Q(t), spec.S(t), spec.R(t), spec.b(t),
                     spec.sigma(t), spec.q(t), spec.rho(t)});
  }
  CostEstimate out;
  out.per_path.resize(noise.n_paths());
  // work buffers: the inner loop runs allocation-free
  Vec x(spec.n), Qx(spec.n), Sx(spec.m_u), Ru(spec.m_u), drift(spec.n), diff(spec.n);
  for (std::size_t p = 0; p < noise.n_paths(); ++p) {
    x = x0;
    double J = 0.0;
    for (std::size_t k = 0; k < grid.n_steps(); ++k) {
      const Node& c = nodes[k];
      const auto u = control.vec(p, k);
      const double dt = grid.dt(k);
      Qx.noalias() = c.Q * x;
      Sx.noalias() = c.S * x;
      Ru.noalias() = c.R * u;
      J += (x.dot(Qx) + 2.0 * Sx.dot(u) + u.dot(Ru) + 2.0 * c.q.dot(x) + 2.0 * c.rho.dot(u)) * dt;
      drift.noalias() = c.A * x;
      drift.noalias() += c.B * u;
      drift += c.b;
      diff.noalias() = c.C * x;
      diff.noalias() += c.D * u;
      diff += c.sigma;
      x += drift * dt + diff * noise.increment(p, k);
    }
    if (!x.allFinite()) throw NonFiniteState("simulate_cost: non-finite state on path " + std::to_string(p));
    J += x.dot(spec.H * x) + 2.0 * spec.h.dot(x);
    out.per_path[p] = J;
  }
  out.cost = estimate_mean(out.per_path);
  return out;
}

OptimalityReport optimality_test(const LQSpec& spec, const PathEnsemble& base, const BrownianEnsemble& noise,
                                 const Vec& x0, int n_perturbations, double epsilon, std::uint64_t seed) {
  if (epsilon < 0) throw InvalidArgument("optimality_test: epsilon must be non-negative");
  const TimeGrid& grid = base.grid();
  const CostEstimate J0 = simulate_cost(spec, base, noise, x0);
  OptimalityReport rep;
  rep.base_cost = J0.cost.mean;
  rep.base_half_width = J0.cost.half_width;
  rep.epsilon = epsilon;
  const int pieces = 8;
  const auto mu = static_cast<Eigen::Index>(spec.m_u);
  double sum_margin = 0.0;
  rep.min_margin = std::numeric_limits<double>::infinity();
  rep.min_second_difference = std::numeric_limits<double>::infinity();
  for (int j = 0; j < n_perturbations; ++j) {
    std::vector<Vec> v(pieces, Vec(mu));
    for (int piece = 0; piece < pieces; ++piece) {
      for (Eigen::Index d = 0; d < mu; ++d) {
        v[piece][d] = 2.0 * uniform01(seed, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(piece),
                                      static_cast<std::uint64_t>(d)) - 1.0;
      }
      if (v[piece].norm() > 1.0) v[piece] /= v[piece].norm();
    }
    PathEnsemble plus(grid, base.n_paths(), base.dimension()), minus(grid, base.n_paths(), base.dimension());
    for (std::size_t k = 0; k < grid.n_points(); ++k) {
      const auto piece = std::min<std::size_t>(pieces - 1, k * pieces / std::max<std::size_t>(1, grid.n_steps()));
      for (std::size_t p = 0; p < base.n_paths(); ++p) {
        const auto b = base.at(p, k);
        auto up = plus.at(p, k), um = minus.at(p, k);
        for (Eigen::Index d = 0; d < mu; ++d) {
          up[static_cast<std::size_t>(d)] = b[static_cast<std::size_t>(d)] + epsilon * v[piece][d];
          um[static_cast<std::size_t>(d)] = b[static_cast<std::size_t>(d)] - epsilon * v[piece][d];
        }
      }
    }
    const CostEstimate Jp = simulate_cost(spec, plus, noise, x0);
    const CostEstimate Jm = simulate_cost(spec, minus, noise, x0);
    PerturbationResult r;
    r.cost_plus = Jp.cost.mean;
    r.cost_minus = Jm.cost.mean;
    r.margin = Jp.cost.mean - J0.cost.mean;
    r.tolerance = Jp.cost.half_width + J0.cost.half_width;
    r.second_difference = epsilon > 0 ? (Jp.cost.mean + Jm.cost.mean - 2.0 * J0.cost.mean) / (epsilon * epsilon) : 0.0;
    sum_margin += r.margin;
    rep.min_margin = std::min(rep.min_margin, r.margin);
    rep.min_second_difference = std::min(rep.min_second_difference, r.second_difference);
    rep.perturbations.push_back(r);
  }
  rep.mean_margin = n_perturbations > 0 ? sum_margin / n_perturbations : 0.0;
  if (n_perturbations == 0) rep.min_margin = rep.min_second_difference = 0.0;
  return rep;
}

PairingResidual ito_pairing_residual(const LQSpec& spec, const SolutionEnsemble& a, const SolutionEnsemble& b) {
  if (a.provenance.seed != b.provenance.seed || a.provenance.antithetic != b.provenance.antithetic ||
      a.n_paths() != b.n_paths() || !(a.grid() == b.grid())) {
    throw InvalidArgument("ito_pairing_residual: mismatched noise (solutions must share the Brownian ensemble)");
  }
  const Vec dxi = a.X.vec(0, 0) - b.X.vec(0, 0);
  if (dxi.norm() == 0.0) throw InvalidArgument("ito_pairing_residual: xi and xi' must differ");
  const TimeGrid& grid = a.grid();
  const std::size_t N = grid.n_steps();
  const std::size_t P = a.n_paths();
  std::vector<Frozen> frozen;
  frozen.reserve(N);
  for (std::size_t k = 0; k < N; ++k) frozen.emplace_back(spec, grid[k]);
  std::vector<double> defect(P), term_t(P), term_i(P), term_0(P);
  for (std::size_t p = 0; p < P; ++p) {
    const Vec xT = a.X.vec(p, N) - b.X.vec(p, N);
    const double lhs = xT.dot(spec.H * xT);
    double integral = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const Vec dx = a.X.vec(p, k) - b.X.vec(p, k);
      const Vec dy = a.Y.vec(p, k) - b.Y.vec(p, k);
      const Vec dz = a.Z.vec(p, k) - b.Z.vec(p, k);
      Vec dU(3 * spec.n);
      dU << dx, dy, dz;
      // F is linear in U once the affine terms are dropped
      integral += hamiltonian_map(frozen[k], dx, dy, dz).dot(dU) * grid.dt(k);
    }
    const double initial = (a.Y.vec(p, 0) - b.Y.vec(p, 0)).dot(dxi);
    term_t[p] = lhs;
    term_i[p] = integral;
    term_0[p] = initial;
    defect[p] = lhs - integral - initial;
  }
  const MeanEstimate d = estimate_mean(defect);
  PairingResidual r;
  r.residual = std::abs(d.mean);
  r.half_width = d.half_width;
  r.terminal_term = estimate_mean(term_t).mean;
  r.integral_term = estimate_mean(term_i).mean;
  r.initial_term = estimate_mean(term_0).mean;
  return r;
}

RiccatiTable riccati_oracle(const LQSpec& spec, const TimeGrid& grid, int substeps) {
  if (substeps < 1) throw InvalidArgument("riccati_oracle: substeps must be positive");
  for (double t : grid.points()) {
    if (spec.C(t).norm() != 0.0 || spec.D(t).norm() != 0.0 || spec.S(t).norm() != 0.0 || spec.b(t).norm() != 0.0 ||
        spec.sigma(t).norm() != 0.0 || spec.q(t).norm() != 0.0 || spec.rho(t).norm() != 0.0 || spec.h.norm() != 0.0) {
      throw InvalidArgument("riccati_oracle: requires C = D = S = 0 and zero affine terms (violated at t=" +
                            std::to_string(t) + ")");
    }
  }
  // dP/dt = -(A'P + PA - P B R^-1 B' P + Q)
  auto rhs = [&](double t, const Mat& P) -> Mat {
    const Mat A = spec.A(t), B = spec.B(t);
    const Mat G = B * spec.R(t).inverse() * B.transpose();
    return -(A.transpose() * P + P * A - P * G * P + spec.Q(t));
  };
  const std::size_t N = grid.n_steps();
  RiccatiTable tab;
  tab.times.assign(grid.points().begin(), grid.points().end());
  tab.P.assign(N + 1, Mat());
  tab.P[N] = spec.H;
  Mat P = spec.H;
  for (std::size_t k = N; k-- > 0;) {
    const double h = -grid.dt(k) / substeps;
    double t = grid[k + 1];
    for (int s = 0; s < substeps; ++s) {
      const Mat k1 = rhs(t, P);
      const Mat k2 = rhs(t + 0.5 * h, P + 0.5 * h * k1);
      const Mat k3 = rhs(t + 0.5 * h, P + 0.5 * h * k2);
      const Mat k4 = rhs(t + h, P + h * k3);
      P = P + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
      t += h;
    }
    P = 0.5 * (P + P.transpose());
    tab.P[k] = P;
  }
  tab.gain.reserve(N + 1);
  for (std::size_t k = 0; k <= N; ++k) {
    const double t = grid[k];
    tab.gain.push_back(-spec.R(t).inverse() * spec.B(t).transpose() * tab.P[k]);
  }
  return tab;
}

}  // namespace fbsde
