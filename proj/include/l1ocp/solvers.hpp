#pragma once
/// \file solvers.hpp
/// \brief Outer optimization algorithms for the discrete problem:
///        heterogeneous inexact ADMM, Euclidean ADMM, accelerated proximal
///        gradient, primal-dual active set and the two-phase driver.

#include "l1ocp/prox_kkt.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace l1ocp {

enum class SolverKind { ihadmm, classical_admm, apg, pdas, two_phase };

inline std::string to_string(SolverKind k) {
  switch (k) {
    case SolverKind::ihadmm: return "ihadmm";
    case SolverKind::classical_admm: return "classical_admm";
    case SolverKind::apg: return "apg";
    case SolverKind::pdas: return "pdas";
    case SolverKind::two_phase: return "two_phase";
  }
  return "?";
}

inline SolverKind solver_kind_from_string(const std::string& s) {
  for (auto k : {SolverKind::ihadmm, SolverKind::classical_admm, SolverKind::apg, SolverKind::pdas,
                 SolverKind::two_phase})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown solver '" + s + "'");
}

/// Called after every outer iteration with the 1-based iteration count.
using IterationObserver = std::function<void(int, const IterateState&)>;

struct SolverConfig {
  std::optional<double> sigma;  ///< default 0.1 alpha
  std::optional<double> tau;    ///< default 1 (ihADMM), 1.618 (Euclidean ADMM)
  double tol = 1e-6;
  int max_iter = 500;
  double eps0 = 1e-2;
  double eps_decay = 1.2;
  SaddleBackend inner_backend = SaddleBackend::direct;
  SaddleSolverOptions saddle;
  double pdas_c = 1.0;
  double phase1_tol = 1e-3;  ///< two-phase only: ihADMM stopping tolerance
  int two_phase_retries = 3;  ///< two-phase only: phase-1 restarts after a PDAS failure
  int pdas_probe_iter = 10;   ///< two-phase only: PDAS iteration cap while retries remain
  bool record_Rh = true;
  std::string log_path;  ///< per-iteration CSV when non-empty
  IterationObserver observer;

  [[nodiscard]] double sigma_for(const DiscreteProblem& pr) const { return sigma.value_or(0.1 * pr.alpha); }
  [[nodiscard]] double tau_for(SolverKind k) const {
    return tau.value_or(k == SolverKind::classical_admm ? 1.618 : 1.0);
  }
  [[nodiscard]] double eps(int k) const { return eps0 / std::pow(k + 1.0, eps_decay); }

  void validate() const {
    const double golden = 0.5 * (1.0 + std::sqrt(5.0));
    if (sigma && !(*sigma > 0.0)) throw std::invalid_argument("config: sigma must be > 0");
    if (tau && !(*tau > 0.0 && *tau < golden)) throw std::invalid_argument("config: tau must lie in (0, 1.618...)");
    if (!(tol > 0.0)) throw std::invalid_argument("config: tol must be > 0");
    if (max_iter < 1) throw std::invalid_argument("config: max_iter must be >= 1");
    if (!(eps0 > 0.0)) throw std::invalid_argument("config: eps0 must be > 0");
    if (!(eps_decay > 1.0)) throw std::invalid_argument("config: eps_decay must be > 1");
    if (!(pdas_c > 0.0)) throw std::invalid_argument("config: pdas_c must be > 0");
    if (!(phase1_tol > 0.0)) throw std::invalid_argument("config: phase1_tol must be > 0");
    if (two_phase_retries < 0) throw std::invalid_argument("config: two_phase_retries must be >= 0");
    if (pdas_probe_iter < 1) throw std::invalid_argument("config: pdas_probe_iter must be >= 1");
  }
};

struct ConvergenceReport {
  std::string solver;
  int iterations = 0;
  std::vector<KktResidual> eta_history;
  std::vector<double> Rh_history;
  std::vector<InnerSolveStats> inner_stats;
  /// Phase index (0 or 1) per history entry; all zero outside the two-phase driver.
  std::vector<int> phase;
  std::vector<int> phase_iterations;
  double wall_time = 0.0;  ///< seconds, monotonic clock
  bool converged = false;
  std::string failure;  ///< empty unless the run aborted
  IterateState final_state;

  [[nodiscard]] double final_eta() const {
    return eta_history.empty() ? std::numeric_limits<double>::infinity() : eta_history.back().eta;
  }
};

/// Per-iteration CSV: iter,eta1,eta2,eta3,eta4,eta5,eta,Rh,inner_iters.
/// Residuals with fewer than five parts leave the trailing columns empty.
inline void write_convergence_csv(std::ostream& os, const ConvergenceReport& r) {
  os << "iter,eta1,eta2,eta3,eta4,eta5,eta,Rh,inner_iters\n";
  os << std::setprecision(10);
  for (size_t k = 0; k < r.eta_history.size(); ++k) {
    const auto& e = r.eta_history[k];
    os << k + 1;
    for (int i = 0; i < 5; ++i) {
      os << ',';
      if (i < e.count) os << e[i];
    }
    os << ',' << e.eta << ',';
    if (k < r.Rh_history.size() && std::isfinite(r.Rh_history[k])) os << r.Rh_history[k];
    os << ',' << (k < r.inner_stats.size() ? r.inner_stats[k].iterations : 0) << '\n';
  }
}

inline void write_convergence_csv(const std::string& path, const ConvergenceReport& r) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  write_convergence_csv(os, r);
}

namespace detail {

class Stopwatch {
 public:
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void check_warm(const DiscreteProblem& pr, const std::optional<IterateState>& warm) {
  if (warm && !warm->consistent(pr.size()))
    throw std::invalid_argument("warm start has inconsistent dimensions");
}

inline void finish(ConvergenceReport& rep, const SolverConfig& cfg, const Stopwatch& sw) {
  rep.iterations = static_cast<int>(rep.eta_history.size());
  rep.phase.assign(static_cast<size_t>(rep.iterations), 0);
  rep.phase_iterations = {rep.iterations};
  rep.wall_time = sw.seconds();
  if (!cfg.log_path.empty()) write_convergence_csv(cfg.log_path, rep);
}

inline void record(ConvergenceReport& rep, const SolverConfig& cfg, const IterateState& s, const KktResidual& eta,
                   double Rh, InnerSolveStats inner) {
  rep.eta_history.push_back(eta);
  rep.Rh_history.push_back(Rh);
  rep.inner_stats.push_back(std::move(inner));
  if (cfg.observer) cfg.observer(static_cast<int>(rep.eta_history.size()), s);
}

/// [[M, 0, K], [0, D, -B], [K, -B^T, 0]] assembled from triplets, with D and
/// B given per column subset; shared by the Euclidean ADMM (B = M) and the
/// reduced PDAS system (B = M restricted to the inactive columns).
inline SparseMatrix assemble_kkt3(const SparseMatrix& M, const SparseMatrix& K, const SparseMatrix& D,
                                  const SparseMatrix& B) {
  const int n = static_cast<int>(M.rows());
  const int m = static_cast<int>(D.rows());
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<size_t>(2 * M.nonZeros() + 2 * K.nonZeros() + D.nonZeros() + 2 * B.nonZeros()));
  auto add = [&](const SparseMatrix& X, int r0, int c0, double s, bool transpose) {
    for (int r = 0; r < X.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(X, r); it; ++it) {
        const int i = static_cast<int>(it.row()), j = static_cast<int>(it.col());
        if (transpose)
          t.emplace_back(r0 + j, c0 + i, s * it.value());
        else
          t.emplace_back(r0 + i, c0 + j, s * it.value());
      }
  };
  add(M, 0, 0, 1.0, false);
  add(K, 0, n + m, 1.0, false);
  add(D, n, n, 1.0, false);
  add(B, n + m, n, -1.0, false);  // K y - B u
  add(B, n, n + m, -1.0, true);   // D u - B^T p
  add(K, n + m, 0, 1.0, false);
  SparseMatrix A(2 * n + m, 2 * n + m);
  A.setFromTriplets(t.begin(), t.end());
  A.makeCompressed();
  return A;
}

inline double Rh_or_nan(const SolverConfig& cfg, const DiscreteProblem& pr, const Factorization& Kf,
                        const Vector& u, const Vector& z, const Vector& m_lambda) {
  return cfg.record_Rh ? complexity_residual_Rh(pr, Kf, u, z, m_lambda) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// Heterogeneous ADMM: M-weighted augmented term in the u-step, W-weighted
/// in the z-step.  The u-step is the reduced saddle system with
/// gamma = alpha/2 + sigma, solved to the tolerance implied by eps_k.
inline ConvergenceReport solve_ihadmm(const DiscreteProblem& pr, const SolverConfig& cfg,
                                      const std::optional<IterateState>& warm = std::nullopt) {
  cfg.validate();
  pr.validate();
  detail::check_warm(pr, warm);
  detail::Stopwatch sw;
  ConvergenceReport rep;
  rep.solver = to_string(SolverKind::ihadmm);

  const int n = pr.size();
  const double sigma = cfg.sigma_for(pr);
  const double tau = cfg.tau_for(SolverKind::ihadmm);
  const double gamma = 0.5 * pr.alpha + sigma;

  IterateState s = warm ? *warm : IterateState::zeros(n);
  rep.final_state = s;
  try {
    const Factorization Kf(pr.K, Factorization::Kind::ldlt);
    const SaddleSolver saddle(pr.M, pr.K, gamma, cfg.inner_backend, cfg.saddle);
    const Vector Myd = pr.M * pr.yd;
    const Vector bottom = -(pr.M * pr.yc);

    double mk_norm = 0.0;
    double tol_cap = 0.0;
    if (cfg.inner_backend == SaddleBackend::pmhss_gmres) {
      mk_norm = estimate_mk_inverse_norm(pr.M, Kf);
      // r2 is the eta_1 numerator and gamma r1 the eta_3 numerator; keep both
      // an order below the outer tolerance so inexactness never stalls the stop test.
      tol_cap = 0.1 * cfg.tol * std::min(1.0 + (pr.M * pr.yc).norm(), (1.0 + Myd.norm()) / gamma);
    }

    for (int k = 0; k < cfg.max_iter; ++k) {
      const Vector top = (pr.K * (sigma * s.z - s.lambda) + Myd) / gamma;
      double inner_tol = 0.0;
      if (cfg.inner_backend == SaddleBackend::pmhss_gmres)
        inner_tol = std::min(saddle_tolerance_for_error(cfg.eps(k), mk_norm, gamma), tol_cap);
      std::optional<Vector> guess;
      if (cfg.inner_backend == SaddleBackend::pmhss_gmres) {
        Vector g(2 * n);
        g << s.y, s.u;
        guess = std::move(g);
      }
      SaddleSolution sol = saddle.solve(top, bottom, inner_tol, guess);
      if (!sol.stats.converged) {
        rep.final_state = s;
        rep.inner_stats.push_back(sol.stats);
        rep.failure = "inner saddle solve did not converge at iteration " + std::to_string(k + 1);
        break;
      }
      s.p = gamma * sol.u - sigma * s.z + s.lambda;
      s.y = std::move(sol.y);
      s.u = std::move(sol.u);
      s.z = z_update_ihadmm(s.u, s.lambda, pr, sigma);
      s.lambda += tau * sigma * (s.u - s.z);

      const Vector m_lambda = pr.M * s.lambda;
      const KktResidual eta = kkt_residual_admm(pr, s.u, s.z, s.y, s.p, m_lambda);
      detail::record(rep, cfg, s, eta, detail::Rh_or_nan(cfg, pr, Kf, s.u, s.z, m_lambda), sol.stats);
      rep.final_state = s;
      if (!s.finite()) {
        rep.failure = "non-finite iterate";
        break;
      }
      if (eta.eta <= cfg.tol) {
        rep.converged = true;
        break;
      }
    }
  } catch (const std::exception& e) {
    rep.failure = e.what();
  }
  detail::finish(rep, cfg, sw);
  return rep;
}

/// ADMM with Euclidean augmented terms in both subproblems.  The u-step
/// couples (y, u, p) through a constant 3x3 block system, factored once.
/// The stored lambda is converted back to the M-pairing (M^{-1} lambda_E).
inline ConvergenceReport solve_classical_admm(const DiscreteProblem& pr, const SolverConfig& cfg,
                                              const std::optional<IterateState>& warm = std::nullopt) {
  cfg.validate();
  pr.validate();
  detail::check_warm(pr, warm);
  detail::Stopwatch sw;
  ConvergenceReport rep;
  rep.solver = to_string(SolverKind::classical_admm);

  const int n = pr.size();
  const double sigma = cfg.sigma_for(pr);
  const double tau = cfg.tau_for(SolverKind::classical_admm);

  IterateState s = warm ? *warm : IterateState::zeros(n);
  rep.final_state = s;
  try {
    const Factorization Kf(pr.K, Factorization::Kind::ldlt);
    const Factorization Mf(pr.M, Factorization::Kind::ldlt);
    SparseMatrix D = 0.5 * pr.alpha * pr.M + sigma * identity_matrix(n);
    const SparseMatrix A = detail::assemble_kkt3(pr.M, pr.K, D, pr.M);
    const Factorization Af(A, Factorization::Kind::lu);
    const Vector Myd = pr.M * pr.yd;
    const Vector Myc = pr.M * pr.yc;
    Vector lambda_e = pr.M * s.lambda;

    for (int k = 0; k < cfg.max_iter; ++k) {
      Vector rhs(3 * n);
      rhs << Myd, sigma * s.z - lambda_e, Myc;
      const Vector x = solve_refined(A, Af, rhs);
      s.y = x.head(n);
      s.u = x.segment(n, n);
      s.p = x.tail(n);
      s.z = z_update_classical(s.u, lambda_e, pr, sigma);
      lambda_e += tau * sigma * (s.u - s.z);
      s.lambda = Mf.solve(lambda_e);

      const KktResidual eta = kkt_residual_admm(pr, s.u, s.z, s.y, s.p, lambda_e);
      detail::record(rep, cfg, s, eta, detail::Rh_or_nan(cfg, pr, Kf, s.u, s.z, lambda_e), InnerSolveStats{});
      rep.final_state = s;
      if (!s.finite()) {
        rep.failure = "non-finite iterate";
        break;
      }
      if (eta.eta <= cfg.tol) {
        rep.converged = true;
        break;
      }
    }
  } catch (const std::exception& e) {
    rep.failure = e.what();
  }
  detail::finish(rep, cfg, sw);
  return rep;
}

namespace detail {

struct SmoothEval {
  double f = 0.0;
  Vector grad, y, p;
};

inline SmoothEval eval_smooth(const DiscreteProblem& pr, const Factorization& Kf, const Vector& u) {
  SmoothEval e;
  e.y = state_of(pr, Kf, u);
  e.p = adjoint_of(pr, Kf, e.y);
  const Vector d = e.y - pr.yd;
  const Vector Mu = pr.M * u;
  e.f = 0.5 * d.dot(pr.M * d) + 0.25 * pr.alpha * u.dot(Mu);
  e.grad = 0.5 * pr.alpha * Mu - pr.M * e.p;
  return e;
}

}  // namespace detail

/// FISTA with backtracking on min f(u) + g(u).  L starts at the Rayleigh
/// quotient of the Hessian of f on the ones vector, doubles on a failed
/// sufficient-decrease test and is never reduced.  Momentum is reset when
/// the composite objective increases.  lambda is synthesized as
/// p - alpha/2 u, which makes -M lambda the gradient of f.
inline ConvergenceReport solve_apg(const DiscreteProblem& pr, const SolverConfig& cfg,
                                   const std::optional<IterateState>& warm = std::nullopt) {
  cfg.validate();
  pr.validate();
  detail::check_warm(pr, warm);
  detail::Stopwatch sw;
  ConvergenceReport rep;
  rep.solver = to_string(SolverKind::apg);

  const int n = pr.size();
  IterateState s = warm ? *warm : IterateState::zeros(n);
  s.u = project_box(s.u, pr.a, pr.b);
  rep.final_state = s;
  try {
    const Factorization Kf(pr.K, Factorization::Kind::ldlt);
    double L;
    {
      const Vector one = Vector::Ones(n);
      const Vector Mo = pr.M * one;
      const Vector h = 0.5 * pr.alpha * Mo + pr.M * Kf.solve(pr.M * Kf.solve(Mo));
      L = std::max(one.dot(h) / static_cast<double>(n), 1e-300);
    }
    Vector u = s.u;
    Vector v = u;
    double t = 1.0;
    double F_prev = f_value(pr, Kf, u) + g_value(pr, u);

    for (int k = 0; k < cfg.max_iter; ++k) {
      const detail::SmoothEval ev = detail::eval_smooth(pr, Kf, v);
      Vector u_new;
      double f_new = 0.0;
      int doublings = 0;
      for (;;) {
        u_new = prox_g_euclidean(v - ev.grad / L, L, pr);
        const Vector d = u_new - v;
        f_new = f_value(pr, Kf, u_new);
        if (f_new <= ev.f + ev.grad.dot(d) + 0.5 * L * d.squaredNorm() + 1e-12 * std::abs(ev.f)) break;
        if (++doublings > 60) throw std::runtime_error("APG backtracking exceeded 60 doublings");
        L *= 2.0;
      }
      const double F_new = f_new + g_value(pr, u_new);
      const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      if (F_new > F_prev) {
        v = u_new;
        t = 1.0;
      } else {
        v = u_new + ((t - 1.0) / t_new) * (u_new - u);
        t = t_new;
      }
      u = std::move(u_new);
      F_prev = F_new;

      s.u = u;
      s.z = u;
      s.y = state_of(pr, Kf, u);
      s.p = adjoint_of(pr, Kf, s.y);
      s.lambda = s.p - 0.5 * pr.alpha * s.u;
      const KktResidual eta = kkt_residual_pdas(pr, s.u, s.y, s.p);
      InnerSolveStats inner;
      inner.iterations = doublings;
      detail::record(rep, cfg, s, eta, detail::Rh_or_nan(cfg, pr, Kf, s.u, s.z, pr.M * s.lambda), inner);
      rep.final_state = s;
      if (eta.eta <= cfg.tol) {
        rep.converged = true;
        break;
      }
    }
  } catch (const std::exception& e) {
    rep.failure = e.what();
  }
  detail::finish(rep, cfg, sw);
  return rep;
}

enum class ActiveLabel : unsigned char { lower, upper, zero, positive, negative };

/// Active-set classification.  mu is mass-scaled, so c is measured in units
/// of the diagonal of alpha T: with c_i = c / (alpha T_ii) the test quantity
/// d_i = u_i + c_i mu_i is compared against +-c_i w_i beta and the bounds
/// (c = 1 makes d_i independent of u_i, the semismooth Newton choice).
/// Ties fall through to the inactive sets.
inline std::vector<ActiveLabel> classify_active_sets(const DiscreteProblem& pr, const Vector& u, const Vector& mu,
                                                     double c) {
  std::vector<ActiveLabel> out(static_cast<size_t>(u.size()));
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double ci = c / (0.5 * pr.alpha * (pr.M.coeff(i, i) + pr.W[i]));
    const double d = u[i] + ci * mu[i];
    const double thr = ci * pr.W[i] * pr.beta;
    ActiveLabel l;
    if (d + thr < pr.a)
      l = ActiveLabel::lower;
    else if (d - thr > pr.b)
      l = ActiveLabel::upper;
    else if (std::abs(d) < thr)
      l = ActiveLabel::zero;
    else if (d >= thr)
      l = ActiveLabel::positive;
    else
      l = ActiveLabel::negative;
    out[static_cast<size_t>(i)] = l;
  }
  return out;
}

inline constexpr int max_pdas_shrinks = 8;

/// Primal-dual active set method.  Each iteration fixes u on the active sets
/// and mu on the inactive ones, then solves the remaining linear system
///   K y - M u = M yc,  K p + M (y - yd) = 0,  alpha T u - M p + mu = 0,
/// T = (M + W)/2, for (y, p, u_inactive) and recovers mu on the active sets.
/// A revisited active set divides c by 10 and reclassifies, at most
/// max_pdas_shrinks times.
inline ConvergenceReport solve_pdas(const DiscreteProblem& pr, const SolverConfig& cfg,
                                    const std::optional<IterateState>& warm = std::nullopt) {
  cfg.validate();
  pr.validate();
  detail::check_warm(pr, warm);
  detail::Stopwatch sw;
  ConvergenceReport rep;
  rep.solver = to_string(SolverKind::pdas);

  const int n = pr.size();
  IterateState s = warm ? *warm : IterateState::zeros(n);
  const SparseMatrix T = 0.5 * (pr.M + diagonal_matrix(pr.W));
  if (!s.mu) s.mu = Vector(pr.M * s.p - pr.alpha * (T * s.u));
  rep.final_state = s;

  try {
    const Factorization Kf(pr.K, Factorization::Kind::ldlt);
    const Vector Myd = pr.M * pr.yd;
    const Vector Myc = pr.M * pr.yc;
    std::vector<ActiveLabel> prev;
    std::set<std::vector<ActiveLabel>> seen;
    double c = cfg.pdas_c;
    int shrinks = 0;

    for (int k = 0; k < cfg.max_iter; ++k) {
      auto labels = classify_active_sets(pr, s.u, *s.mu, c);
      while (!(k > 0 && labels == prev) && seen.count(labels) && shrinks < max_pdas_shrinks) {
        c *= 0.1;
        ++shrinks;
        seen.clear();
        if (k > 0) seen.insert(prev);
        labels = classify_active_sets(pr, s.u, *s.mu, c);
      }
      if (k > 0 && labels == prev) {
        rep.converged = true;
        break;
      }
      if (!seen.insert(labels).second) {
        rep.failure = "active sets cycled";
        break;
      }

      std::vector<int> inactive;
      Vector u_fixed = Vector::Zero(n);  // u on active dofs, 0 elsewhere
      Vector mu_fixed = Vector::Zero(n);  // mu on inactive dofs, 0 elsewhere
      for (int i = 0; i < n; ++i) {
        switch (labels[static_cast<size_t>(i)]) {
          case ActiveLabel::lower: u_fixed[i] = pr.a; break;
          case ActiveLabel::upper: u_fixed[i] = pr.b; break;
          case ActiveLabel::zero: break;
          case ActiveLabel::positive:
            mu_fixed[i] = pr.W[i] * pr.beta;
            inactive.push_back(i);
            break;
          case ActiveLabel::negative:
            mu_fixed[i] = -pr.W[i] * pr.beta;
            inactive.push_back(i);
            break;
        }
      }
      const int m = static_cast<int>(inactive.size());
      // Selection P (n x m) with P e_j = e_{inactive[j]}.
      SparseMatrix P(n, m);
      {
        std::vector<Eigen::Triplet<double>> t;
        for (int j = 0; j < m; ++j) t.emplace_back(inactive[static_cast<size_t>(j)], j, 1.0);
        P.setFromTriplets(t.begin(), t.end());
      }
      const SparseMatrix PT = P.transpose();
      const SparseMatrix B = pr.M * P;
      const SparseMatrix D = pr.alpha * (PT * T * P);
      const SparseMatrix A = detail::assemble_kkt3(pr.M, pr.K, D, B);
      const Factorization Af(A, Factorization::Kind::lu);

      Vector rhs(2 * n + m);
      rhs << Myd, PT * (-mu_fixed - pr.alpha * (T * u_fixed)), Myc + pr.M * u_fixed;
      const Vector x = solve_refined(A, Af, rhs);
      s.y = x.head(n);
      s.u = u_fixed + P * x.segment(n, m);
      s.p = x.tail(n);
      Vector mu = pr.M * s.p - pr.alpha * (T * s.u);
      for (int j = 0; j < m; ++j) {
        const int i = inactive[static_cast<size_t>(j)];
        mu[i] = mu_fixed[i];
      }
      s.mu = std::move(mu);
      s.z = s.u;
      s.lambda = s.p - 0.5 * pr.alpha * s.u;
      prev = labels;

      const KktResidual eta = kkt_residual_pdas(pr, s.u, s.y, s.p);
      InnerSolveStats inner;
      inner.iterations = 1;
      detail::record(rep, cfg, s, eta, detail::Rh_or_nan(cfg, pr, Kf, s.u, s.z, pr.M * s.lambda), inner);
      rep.final_state = s;
      if (eta.eta <= cfg.tol) {
        rep.converged = true;
        break;
      }
    }
  } catch (const std::exception& e) {
    rep.failure = e.what();
  }
  detail::finish(rep, cfg, sw);
  // Repeated active sets mean the last solve is exact; the residual still decides.
  if (rep.converged && rep.final_eta() > cfg.tol) {
    rep.converged = false;
    if (rep.failure.empty()) rep.failure = "active sets repeated above tolerance";
  }
  return rep;
}

/// ihADMM to cfg.phase1_tol, then PDAS to cfg.tol warm-started from the
/// phase-1 (u, y, p) with mu = M p - alpha T u.  When PDAS fails, ihADMM
/// resumes from its last iterate with a tenfold tighter tolerance and PDAS is
/// retried, at most two_phase_retries times.  Attempts that can still be
/// retried are limited to pdas_probe_iter PDAS iterations.
inline ConvergenceReport solve_two_phase(const DiscreteProblem& pr, const SolverConfig& cfg) {
  cfg.validate();
  detail::Stopwatch sw;
  if (cfg.phase1_tol < cfg.tol) throw std::invalid_argument("two-phase: phase1_tol must be >= tol");

  ConvergenceReport rep;
  rep.solver = to_string(SolverKind::two_phase);
  rep.phase_iterations = {0, 0};
  auto append = [&rep](const ConvergenceReport& r, int phase) {
    for (size_t k = 0; k < r.eta_history.size(); ++k) {
      rep.eta_history.push_back(r.eta_history[k]);
      rep.Rh_history.push_back(r.Rh_history[k]);
      rep.inner_stats.push_back(r.inner_stats[k]);
      rep.phase.push_back(phase);
    }
    rep.iterations = static_cast<int>(rep.eta_history.size());
    rep.phase_iterations[static_cast<size_t>(phase)] += r.iterations;
    rep.final_state = r.final_state;
    rep.failure = r.failure;
  };
  auto shifted = [&cfg, &rep]() -> IterationObserver {
    if (!cfg.observer) return {};
    return [offset = rep.iterations, obs = cfg.observer](int k, const IterateState& st) { obs(offset + k, st); };
  };

  std::optional<IterateState> admm_state;
  double tol1 = cfg.phase1_tol;
  for (int attempt = 0; attempt <= cfg.two_phase_retries; ++attempt, tol1 = std::max(0.1 * tol1, cfg.tol)) {
    SolverConfig c1 = cfg;
    c1.tol = tol1;
    c1.max_iter = cfg.max_iter - rep.phase_iterations[0];
    c1.log_path.clear();
    c1.observer = shifted();
    if (c1.max_iter < 1) break;
    const ConvergenceReport r1 = solve_ihadmm(pr, c1, admm_state);
    append(r1, 0);
    admm_state = r1.final_state;
    if (!r1.converged) {
      if (rep.failure.empty()) rep.failure = "phase 1 did not reach its tolerance";
      break;
    }

    IterateState w = r1.final_state;
    const SparseMatrix T = 0.5 * (pr.M + diagonal_matrix(pr.W));
    w.mu = Vector(pr.M * w.p - pr.alpha * (T * w.u));
    SolverConfig c2 = cfg;
    if (attempt < cfg.two_phase_retries) c2.max_iter = std::min(cfg.max_iter, cfg.pdas_probe_iter);
    c2.log_path.clear();
    c2.observer = shifted();
    const ConvergenceReport r2 = solve_pdas(pr, c2, w);
    append(r2, 1);
    if (r2.converged) {
      rep.converged = true;
      break;
    }
  }
  rep.wall_time = sw.seconds();
  if (!cfg.log_path.empty()) write_convergence_csv(cfg.log_path, rep);
  return rep;
}

inline ConvergenceReport run_solver(SolverKind kind, const DiscreteProblem& pr, const SolverConfig& cfg,
                                    const std::optional<IterateState>& warm = std::nullopt) {
  switch (kind) {
    case SolverKind::ihadmm: return solve_ihadmm(pr, cfg, warm);
    case SolverKind::classical_admm: return solve_classical_admm(pr, cfg, warm);
    case SolverKind::apg: return solve_apg(pr, cfg, warm);
    case SolverKind::pdas: return solve_pdas(pr, cfg, warm);
    case SolverKind::two_phase: return solve_two_phase(pr, cfg);
  }
  throw std::invalid_argument("run_solver: unknown solver");
}

}  // namespace l1ocp
