#pragma once
/// \file oracle.hpp
/// \brief Brute-force reference solver for tiny instances.
///
/// The reduced problem min 1/2 u'Hu + q'u + beta sum w_i |u_i| over [a,b]^n
/// is piecewise quadratic; each coordinate sits in one of five regimes
/// (at a, in (a,0), at 0, in (0,b), at b).  Enumerating all 5^n regime
/// patterns and solving the stationarity equations on the free coordinates
/// yields the exact minimizer.  Everything here is dense and self-contained.

#include "l1ocp/mesh_fem.hpp"
#include "l1ocp/prox_kkt.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace l1ocp::oracle {

using Dense = Eigen::MatrixXd;

struct OracleInconsistency : std::logic_error {
  using std::logic_error::logic_error;
};

enum class Regime : unsigned char { at_lower, negative_interior, at_zero, positive_interior, at_upper };

using RegimePattern = std::vector<Regime>;

constexpr int max_size = 6;

struct DenseData {
  Dense K, M, H;
  Eigen::VectorXd W, q;
};

inline DenseData dense_data(const DiscreteProblem& pr) {
  DenseData d;
  d.K = Dense(pr.K);
  d.M = Dense(pr.M);
  d.W = pr.W;
  const Eigen::LDLT<Dense> Kf(d.K);
  const Dense S = Kf.solve(d.M);  // control-to-state map K^{-1} M
  d.H = 0.5 * pr.alpha * d.M + S.transpose() * d.M * S + 0.5 * pr.alpha * Dense(pr.W.asDiagonal());
  d.H = 0.5 * (d.H + d.H.transpose());
  d.q = S.transpose() * d.M * (S * pr.yc - pr.yd);
  return d;
}

struct OracleSolution {
  Eigen::VectorXd u;
  KktResidual certificate;
  RegimePattern pattern;
  int accepted_patterns = 0;
  double objective = 0.0;
};

/// Dense evaluation of the ADMM residual at (u, z = u) with the state,
/// adjoint and multiplier reconstructed from u.
inline KktResidual dense_kkt_residual(const DiscreteProblem& pr, const Eigen::VectorXd& u) {
  const Dense K(pr.K), M(pr.M);
  const Eigen::LDLT<Dense> Kf(K);
  const Eigen::VectorXd y = Kf.solve(M * (u + pr.yc));
  const Eigen::VectorXd p = Kf.solve(M * (pr.yd - y));
  const Eigen::VectorXd lam = p - 0.5 * pr.alpha * u;
  const Eigen::VectorXd Mlam = M * lam;
  const Eigen::VectorXd Myc = M * pr.yc, Myd = M * pr.yd;
  const double nu = 1.0 + u.norm();

  Eigen::VectorXd zfix(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double t = Mlam[i] / pr.W[i];
    const double st = std::copysign(std::max(std::abs(t) - pr.beta, 0.0), t);
    zfix[i] = std::clamp(2.0 / pr.alpha * st, pr.a, pr.b);
  }
  KktResidual r;
  r.count = 5;
  r.parts[0] = (K * y - M * u - Myc).norm() / (1.0 + Myc.norm());
  r.parts[1] = 0.0;  // z = u
  r.parts[2] = (M * (y - pr.yd) + K * p).norm() / (1.0 + Myd.norm());
  r.parts[3] = (0.5 * pr.alpha * M * u - M * p + Mlam).norm() / nu;
  r.parts[4] = (u - zfix).norm() / nu;
  r.eta = *std::max_element(r.parts.begin(), r.parts.end());
  return r;
}

/// Throws OracleInconsistency when the reconstructed residual exceeds 1e-9.
inline KktResidual certify_kkt(const Eigen::VectorXd& u, const DiscreteProblem& pr) {
  const KktResidual r = dense_kkt_residual(pr, u);
  if (!(r.eta <= 1e-9))
    throw OracleInconsistency("oracle: KKT certificate failed, eta = " + std::to_string(r.eta));
  return r;
}

inline double dense_objective(const DiscreteProblem& pr, const DenseData& d, const Eigen::VectorXd& u) {
  return 0.5 * u.dot(d.H * u) + d.q.dot(u) + pr.beta * d.W.dot(u.cwiseAbs());
}

inline OracleSolution brute_force_solve(const DiscreteProblem& pr) {
  pr.validate();
  const int n = pr.size();
  if (n > max_size) throw std::invalid_argument("oracle: refusing problems with more than 6 unknowns");
  const DenseData d = dense_data(pr);
  const double scale = 1.0 + d.H.cwiseAbs().maxCoeff() * std::max(-pr.a, pr.b) + d.q.cwiseAbs().maxCoeff();
  const double gtol = 1e-11 * scale;
  const double utol = 1e-11 * (1.0 + std::max(-pr.a, pr.b));

  long total = 1;
  for (int i = 0; i < n; ++i) total *= 5;

  OracleSolution best;
  best.objective = std::numeric_limits<double>::infinity();
  RegimePattern pat(static_cast<size_t>(n));
  for (long code = 0; code < total; ++code) {
    long c = code;
    std::vector<int> free_idx;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sgn = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i, c /= 5) {
      pat[static_cast<size_t>(i)] = static_cast<Regime>(c % 5);
      switch (pat[static_cast<size_t>(i)]) {
        case Regime::at_lower: u[i] = pr.a; break;
        case Regime::at_upper: u[i] = pr.b; break;
        case Regime::at_zero: break;
        case Regime::negative_interior: sgn[i] = -1.0; free_idx.push_back(i); break;
        case Regime::positive_interior: sgn[i] = 1.0; free_idx.push_back(i); break;
      }
    }
    const int m = static_cast<int>(free_idx.size());
    if (m > 0) {
      Dense Hff(m, m);
      Eigen::VectorXd rhs(m);
      for (int r = 0; r < m; ++r) {
        const int i = free_idx[static_cast<size_t>(r)];
        for (int s = 0; s < m; ++s) Hff(r, s) = d.H(i, free_idx[static_cast<size_t>(s)]);
        rhs[r] = -d.q[i] - pr.beta * d.W[i] * sgn[i] - d.H.row(i).dot(u);  // u is zero on free entries
      }
      const Eigen::VectorXd uf = Hff.llt().solve(rhs);
      for (int r = 0; r < m; ++r) u[free_idx[static_cast<size_t>(r)]] = uf[r];
    }

    const Eigen::VectorXd g = d.H * u + d.q;
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      const double bw = pr.beta * d.W[i];
      switch (pat[static_cast<size_t>(i)]) {
        case Regime::negative_interior: ok = u[i] >= pr.a - utol && u[i] <= utol; break;
        case Regime::positive_interior: ok = u[i] >= -utol && u[i] <= pr.b + utol; break;
        case Regime::at_zero: ok = std::abs(g[i]) <= bw + gtol; break;
        case Regime::at_lower: ok = g[i] >= bw - gtol; break;
        case Regime::at_upper: ok = g[i] <= -bw + gtol; break;
      }
    }
    if (!ok) continue;
    ++best.accepted_patterns;
    const Eigen::VectorXd uc = u.cwiseMax(pr.a).cwiseMin(pr.b);
    const double obj = dense_objective(pr, d, uc);
    if (obj < best.objective) {
      best.objective = obj;
      best.u = uc;
      best.pattern = pat;
    }
  }
  if (best.accepted_patterns == 0) throw OracleInconsistency("oracle: no regime pattern accepted");
  best.certificate = certify_kkt(best.u, pr);
  return best;
}

/// Random instance with n <= 6 unknowns: M symmetric positive definite with
/// nonnegative entries and W its row sums (so M <= W), K a symmetric
/// diagonally dominant M-matrix, alpha and beta log-uniform in [1e-3, 1].
inline DiscreteProblem random_tiny_problem(std::uint64_t seed, int n) {
  if (n < 1 || n > max_size) throw std::invalid_argument("random_tiny_problem: n must lie in [1, 6]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);

  Dense M = Dense::Zero(n, n), K = Dense::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    M(i, i) = 0.5 + U(rng);
    K(i, i) = 1.0 + U(rng);
    for (int j = 0; j < i; ++j) {
      M(i, j) = M(j, i) = 0.15 * U(rng);
      K(i, j) = K(j, i) = -0.25 * U(rng);
    }
  }
  for (int i = 0; i < n; ++i) {
    K(i, i) += K.row(i).cwiseAbs().sum() - std::abs(K(i, i));
    M(i, i) += M.row(i).sum() - M(i, i);
  }

  DiscreteProblem pr;
  pr.K = K.sparseView();
  pr.M = M.sparseView();
  pr.K.makeCompressed();
  pr.M.makeCompressed();
  pr.W = M.rowwise().sum();
  pr.alpha = std::pow(10.0, -3.0 * U(rng));
  pr.beta = std::pow(10.0, -3.0 * U(rng));
  pr.a = -(0.05 + U(rng));
  pr.b = 0.05 + U(rng);
  pr.h = 1.0;
  pr.yd = Vector(n);
  pr.yc = Vector(n);
  const double amp = 2.0 * U(rng) + 0.1;
  for (int i = 0; i < n; ++i) {
    pr.yd[i] = amp * N(rng);
    pr.yc[i] = 0.3 * amp * N(rng);
  }
  pr.validate();
  return pr;
}

}  // namespace l1ocp::oracle
