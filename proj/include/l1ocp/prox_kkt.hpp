#pragma once
/// \file prox_kkt.hpp
/// \brief Proximal maps of the nonsmooth part g, the smooth reduced cost f
///        and the KKT residual measures shared by all solvers.
///
/// With S = K^{-1} M the discrete control-to-state map,
///   f(u) = 1/2 |S (u + yc) - yd|_M^2 + alpha/4 |u|_M^2
///   g(z) = alpha/4 |z|_W^2 + beta |W z|_1 + indicator([a, b]^n).
/// The adjoint is p = K^{-1} M (yd - y), so grad f(u) = alpha/2 M u - M p.

#include "l1ocp/mesh_fem.hpp"
#include "l1ocp/sparse_linalg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

namespace l1ocp {

inline double soft(double v, double t) {
  if (t < 0.0) throw std::invalid_argument("soft: threshold must be >= 0");
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

inline Vector soft(const Vector& v, double t) {
  if (t < 0.0) throw std::invalid_argument("soft: threshold must be >= 0");
  return v.unaryExpr([t](double x) { return x > t ? x - t : (x < -t ? x + t : 0.0); });
}

inline Vector soft(const Vector& v, const Vector& t) {
  if (v.size() != t.size()) throw std::invalid_argument("soft: dimension mismatch");
  if ((t.array() < 0.0).any()) throw std::invalid_argument("soft: threshold must be >= 0");
  return v.binaryExpr(t, [](double x, double s) { return x > s ? x - s : (x < -s ? x + s : 0.0); });
}

inline double project_box(double v, double a, double b) { return std::max(a, std::min(v, b)); }

inline Vector project_box(const Vector& v, double a, double b) {
  if (a > b) throw std::invalid_argument("project_box: a must be <= b");
  return v.cwiseMax(a).cwiseMin(b);
}

/// (u, z, lambda, y, p[, mu]).  lambda is always the multiplier in the
/// M-weighted pairing, i.e. the optimality system reads -M lambda = grad f(u)
/// and M lambda in dg(z).
struct IterateState {
  Vector u, z, lambda, y, p;
  std::optional<Vector> mu;

  static IterateState zeros(int n) {
    IterateState s;
    s.u = s.z = s.lambda = s.y = s.p = Vector::Zero(n);
    return s;
  }

  [[nodiscard]] bool consistent(int n) const {
    return u.size() == n && z.size() == n && lambda.size() == n && y.size() == n && p.size() == n &&
           (!mu || mu->size() == n);
  }

  [[nodiscard]] bool finite() const {
    return u.allFinite() && z.allFinite() && lambda.allFinite() && y.allFinite() && p.allFinite() &&
           (!mu || mu->allFinite());
  }
};

/// y = K^{-1} M (u + yc)
inline Vector state_of(const DiscreteProblem& pr, const Factorization& K_factor, const Vector& u) {
  return K_factor.solve(pr.M * (u + pr.yc));
}

/// p = K^{-1} M (yd - y)
inline Vector adjoint_of(const DiscreteProblem& pr, const Factorization& K_factor, const Vector& y) {
  return K_factor.solve(pr.M * (pr.yd - y));
}

inline double f_value(const DiscreteProblem& pr, const Factorization& K_factor, const Vector& u) {
  const Vector e = state_of(pr, K_factor, u) - pr.yd;
  return 0.5 * e.dot(pr.M * e) + 0.25 * pr.alpha * u.dot(pr.M * u);
}

/// +inf outside the box.
inline double g_value(const DiscreteProblem& pr, const Vector& z) {
  if ((z.array() < pr.a).any() || (z.array() > pr.b).any()) return std::numeric_limits<double>::infinity();
  return 0.25 * pr.alpha * z.dot(pr.W.cwiseProduct(z)) + pr.beta * pr.W.dot(z.cwiseAbs());
}

inline double objective(const DiscreteProblem& pr, const Factorization& K_factor, const Vector& u) {
  return f_value(pr, K_factor, u) + g_value(pr, u);
}

/// alpha/2 M u + M K^{-1} M (K^{-1} M (u + yc) - yd)
inline Vector grad_f(const DiscreteProblem& pr, const Factorization& K_factor, const Vector& u) {
  const Vector y = state_of(pr, K_factor, u);
  return 0.5 * pr.alpha * (pr.M * u) + pr.M * K_factor.solve(pr.M * (y - pr.yd));
}

/// argmin_z g(z) + <lambda, M (u - z)> + sigma/2 |u - z|_W^2
///   = P_[a,b]( soft(sigma u + W^{-1} M lambda, beta) / (sigma + alpha/2) )
inline Vector z_update_ihadmm(const Vector& u, const Vector& lambda, const DiscreteProblem& pr, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("z_update_ihadmm: sigma must be > 0");
  const Vector v = sigma * u + (pr.M * lambda).cwiseQuotient(pr.W);
  return project_box(soft(v, pr.beta) / (sigma + 0.5 * pr.alpha), pr.a, pr.b);
}

/// Euclidean pairing: argmin_z g(z) + <lambda, u - z> + sigma/2 |u - z|^2
///   = P_[a,b]( (alpha/2 W + sigma I)^{-1} W soft(W^{-1}(sigma u + lambda), beta) )
inline Vector z_update_classical(const Vector& u, const Vector& lambda, const DiscreteProblem& pr, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("z_update_classical: sigma must be > 0");
  const Vector v = (sigma * u + lambda).cwiseQuotient(pr.W);
  const Vector denom = (0.5 * pr.alpha * pr.W).array() + sigma;
  return project_box(pr.W.cwiseProduct(soft(v, pr.beta)).cwiseQuotient(denom), pr.a, pr.b);
}

/// argmin_z g(z) + L/2 |z - v|^2, componentwise
///   P_[a,b]( soft(L v_i, beta w_i) / (L + alpha w_i / 2) ).
inline Vector prox_g_euclidean(const Vector& v, double L, const DiscreteProblem& pr) {
  if (!(L > 0.0)) throw std::invalid_argument("prox_g_euclidean: L must be > 0");
  const Vector num = soft(L * v, pr.beta * pr.W);
  const Vector denom = (0.5 * pr.alpha * pr.W).array() + L;
  return project_box(num.cwiseQuotient(denom), pr.a, pr.b);
}

struct KktResidual {
  std::array<double, 5> parts{};  ///< eta_1 .. eta_5 (unused entries are 0)
  int count = 5;                  ///< 5 for the ADMM residual, 3 for the PDAS residual
  double eta = 0.0;

  [[nodiscard]] double operator[](int i) const { return parts[static_cast<size_t>(i)]; }
};

inline KktResidual make_residual(std::initializer_list<double> parts) {
  KktResidual r;
  r.count = static_cast<int>(parts.size());
  int i = 0;
  for (double v : parts) r.parts[static_cast<size_t>(i++)] = v;
  r.eta = *std::max_element(r.parts.begin(), r.parts.begin() + r.count);
  return r;
}

/// Fixed point map of the z-optimality condition M lambda in dg(z):
///   z = P_[a,b]( (2/alpha) soft(W^{-1} M lambda, beta) ).
inline Vector z_fixed_point(const DiscreteProblem& pr, const Vector& m_lambda) {
  return project_box((2.0 / pr.alpha) * soft(m_lambda.cwiseQuotient(pr.W), pr.beta), pr.a, pr.b);
}

/// ADMM termination residual (eta_1 .. eta_5).  `m_lambda` is the action
/// M lambda; the Euclidean-pairing ADMM passes its multiplier here directly.
inline KktResidual kkt_residual_admm(const DiscreteProblem& pr, const Vector& u, const Vector& z, const Vector& y,
                                     const Vector& p, const Vector& m_lambda) {
  const Vector Myc = pr.M * pr.yc;
  const Vector Myd = pr.M * pr.yd;
  const double nu = 1.0 + u.norm();
  const Vector Mu = pr.M * u;
  const Vector Mp = pr.M * p;
  const double e1 = (pr.K * y - Mu - Myc).norm() / (1.0 + Myc.norm());
  const double e2 = (Mu - pr.M * z).norm() / nu;
  const double e3 = (pr.M * (y - pr.yd) + pr.K * p).norm() / (1.0 + Myd.norm());
  const double e4 = (0.5 * pr.alpha * Mu - Mp + m_lambda).norm() / nu;
  const double e5 = (z - z_fixed_point(pr, m_lambda)).norm() / nu;
  return make_residual({e1, e2, e3, e4, e5});
}

inline KktResidual kkt_residual_admm(const IterateState& s, const DiscreteProblem& pr) {
  return kkt_residual_admm(pr, s.u, s.z, s.y, s.p, pr.M * s.lambda);
}

/// PDAS termination residual: state and adjoint equations plus the fixed
/// point form u = P_[a,b]((2/alpha) soft(W^{-1} M (p - alpha/2 u), beta)),
/// which vanishes exactly at minimizers of the reduced problem in u alone.
inline KktResidual kkt_residual_pdas(const DiscreteProblem& pr, const Vector& u, const Vector& y, const Vector& p) {
  const Vector Myc = pr.M * pr.yc;
  const Vector Myd = pr.M * pr.yd;
  const double e1 = (pr.K * y - pr.M * u - Myc).norm() / (1.0 + Myc.norm());
  const double e2 = (pr.M * (y - pr.yd) + pr.K * p).norm() / (1.0 + Myd.norm());
  const Vector m_lambda = pr.M * (p - 0.5 * pr.alpha * u);
  const double e3 = (u - z_fixed_point(pr, m_lambda)).norm() / (1.0 + u.norm());
  return make_residual({e1, e2, e3});
}

inline KktResidual kkt_residual_pdas(const IterateState& s, const DiscreteProblem& pr) {
  return kkt_residual_pdas(pr, s.u, s.y, s.p);
}

/// Distance from 0 to the interval-valued set -q_i + dg(z)_i, where
///   dg(z)_i = w_i (alpha/2 z_i + beta d|z_i|) + N_[a,b](z_i).
inline double dist_to_subdifferential(const DiscreteProblem& pr, const Vector& z, const Vector& q) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    if (zi < pr.a || zi > pr.b) return inf;
    const double w = pr.W[i];
    const double base = w * 0.5 * pr.alpha * zi;
    double lo, hi;
    if (zi > 0.0) {
      lo = hi = base + w * pr.beta;
    } else if (zi < 0.0) {
      lo = hi = base - w * pr.beta;
    } else {
      lo = base - w * pr.beta;
      hi = base + w * pr.beta;
    }
    if (zi == pr.a) lo = -inf;
    if (zi == pr.b) hi = inf;
    lo -= q[i];
    hi -= q[i];
    const double d = lo > 0.0 ? lo : (hi < 0.0 ? -hi : 0.0);
    sum += d * d;
  }
  return std::sqrt(sum);
}

/// R_h(u, z, lambda) = |M lambda + grad f(u)|^2 + dist^2(0, -M lambda + dg(z)) + |u - z|^2.
inline double complexity_residual_Rh(const DiscreteProblem& pr, const Factorization& K_factor, const Vector& u,
                                     const Vector& z, const Vector& m_lambda) {
  const double stat = (m_lambda + grad_f(pr, K_factor, u)).squaredNorm();
  const double d = dist_to_subdifferential(pr, z, m_lambda);
  return stat + d * d + (u - z).squaredNorm();
}

inline double complexity_residual_Rh(const IterateState& s, const DiscreteProblem& pr, const Factorization& K_factor) {
  return complexity_residual_Rh(pr, K_factor, s.u, s.z, pr.M * s.lambda);
}

}  // namespace l1ocp
