#pragma once
/// \file sparse_linalg.hpp
/// \brief Sparse kernels, factorizations, Chebyshev semi-iteration, GMRES and
///        the PMHSS block preconditioner for the reduced optimality system
///
///   [ (1/gamma) M   K ] [y]   [top   ]
///   [    -K         M ] [u] = [bottom]
///
/// that appears in every u-step of the heterogeneous ADMM.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace l1ocp {

using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;
/// CSR storage: row offsets, sorted column indices, values.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;
using LinearOperator = std::function<Vector(const Vector&)>;

struct FactorizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// y = A x
inline Vector spmv(const SparseMatrix& A, const Vector& x) {
  if (A.cols() != x.size()) {
    throw std::invalid_argument("spmv: dimension mismatch (" +
                                std::to_string(A.cols()) + " columns vs vector of length " +
                                std::to_string(x.size()) + ")");
  }
  return A * x;
}

/// Removes stored entries with |a_ij| <= drop and leaves column indices sorted.
inline void compress(SparseMatrix& A, double drop = 0.0) {
  A.prune([drop](int, int, double v) { return std::abs(v) > drop; });
  A.makeCompressed();
}

inline bool is_symmetric(const SparseMatrix& A, double tol = 0.0) {
  if (A.rows() != A.cols()) return false;
  SparseMatrix diff = SparseMatrix(A.transpose()) - A;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(diff, k); it; ++it)
      if (std::abs(it.value()) > tol) return false;
  return true;
}

inline SparseMatrix identity_matrix(int n) {
  SparseMatrix I(n, n);
  I.setIdentity();
  return I;
}

inline SparseMatrix diagonal_matrix(const Vector& d) {
  SparseMatrix D(d.size(), d.size());
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(d.size());
  for (int i = 0; i < d.size(); ++i) t.emplace_back(i, i, d[i]);
  D.setFromTriplets(t.begin(), t.end());
  return D;
}

/// Builds the 2x2 block matrix [[A, B], [C, D]] from equally sized square blocks.
inline SparseMatrix block2x2(const SparseMatrix& A, const SparseMatrix& B, const SparseMatrix& C,
                             const SparseMatrix& D) {
  const int n = static_cast<int>(A.rows());
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(A.nonZeros() + B.nonZeros() + C.nonZeros() + D.nonZeros());
  auto add = [&](const SparseMatrix& X, int r0, int c0) {
    for (int k = 0; k < X.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(X, k); it; ++it)
        t.emplace_back(r0 + it.row(), c0 + it.col(), it.value());
  };
  add(A, 0, 0);
  add(B, 0, n);
  add(C, n, 0);
  add(D, n, n);
  SparseMatrix out(2 * n, 2 * n);
  out.setFromTriplets(t.begin(), t.end());
  out.makeCompressed();
  return out;
}

/// Direct solver for a sparse matrix.  Symmetric input is factored by
/// LDL^T with AMD ordering (covers SPD and symmetric quasi-definite
/// matrices); everything else goes through supernodal LU.
class Factorization {
 public:
  enum class Kind { ldlt, lu };

  Factorization() = default;

  explicit Factorization(const SparseMatrix& A, std::optional<Kind> kind = std::nullopt) {
    if (A.rows() != A.cols()) throw std::invalid_argument("factorize: matrix is not square");
    n_ = static_cast<int>(A.rows());
    const Kind k = kind.value_or(is_symmetric(A) ? Kind::ldlt : Kind::lu);
    const Eigen::SparseMatrix<double> colmajor = A;
    if (k == Kind::ldlt) {
      auto ldlt = std::make_shared<Ldlt>();
      ldlt->compute(colmajor);
      if (ldlt->info() != Eigen::Success) throw FactorizationError("factorize: LDL^T failed");
      const Vector d = ldlt->vectorD();
      const double scale = std::max(d.cwiseAbs().maxCoeff(), 1e-300);
      if (!d.allFinite() || d.cwiseAbs().minCoeff() <= 1e-14 * scale)
        throw FactorizationError("factorize: numerically singular matrix (LDL^T pivot)");
      impl_ = std::move(ldlt);
    } else {
      auto lu = std::make_shared<Lu>();
      lu->analyzePattern(colmajor);
      lu->factorize(colmajor);
      if (lu->info() != Eigen::Success)
        throw FactorizationError("factorize: LU failed: " + lu->lastErrorMessage());
      impl_ = std::move(lu);
    }
    kind_ = k;
  }

  [[nodiscard]] Vector solve(const Vector& rhs) const {
    if (rhs.size() != n_) throw std::invalid_argument("Factorization::solve: dimension mismatch");
    Vector x;
    if (kind_ == Kind::ldlt)
      x = std::get<std::shared_ptr<Ldlt>>(impl_)->solve(rhs);
    else
      x = std::get<std::shared_ptr<Lu>>(impl_)->solve(rhs);
    if (!x.allFinite()) throw FactorizationError("Factorization::solve: non-finite solution");
    return x;
  }

  [[nodiscard]] int size() const { return n_; }
  [[nodiscard]] Kind kind() const { return kind_; }
  [[nodiscard]] bool valid() const { return n_ > 0; }

 private:
  using Ldlt = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>>;
  using Lu = Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>;

  int n_ = 0;
  Kind kind_ = Kind::ldlt;
  // shared_ptr keeps the object cheaply copyable; factors are never mutated after construction.
  std::variant<std::shared_ptr<Ldlt>, std::shared_ptr<Lu>> impl_;
};

inline Factorization factorize(const SparseMatrix& A) { return Factorization(A); }

/// Factored solve followed by `steps` rounds of iterative refinement.
inline Vector solve_refined(const SparseMatrix& A, const Factorization& F, const Vector& rhs, int steps = 2) {
  Vector x = F.solve(rhs);
  for (int k = 0; k < steps; ++k) x += F.solve(rhs - A * x);
  return x;
}

struct EigenBounds {
  double lower;
  double upper;
};

/// Chebyshev semi-iteration for G x = rhs, accelerated Jacobi: `bounds` must
/// bracket the spectrum of diag(G)^{-1} G.  Starts from x = 0; one step is a
/// damped Jacobi step with damping 2/(lower+upper).
inline Vector chebyshev_semi_iteration(const SparseMatrix& G, const Vector& rhs, int steps,
                                       EigenBounds bounds) {
  if (bounds.lower <= 0.0 || bounds.upper <= 0.0 || bounds.upper < bounds.lower)
    throw std::invalid_argument("chebyshev_semi_iteration: bounds must satisfy 0 < lower <= upper");
  if (steps < 1) throw std::invalid_argument("chebyshev_semi_iteration: steps must be >= 1");
  if (G.rows() != rhs.size()) throw std::invalid_argument("chebyshev_semi_iteration: dimension mismatch");

  const Vector inv_diag = G.diagonal().cwiseInverse();
  const double theta = 0.5 * (bounds.upper + bounds.lower);
  const double delta = 0.5 * (bounds.upper - bounds.lower);

  Vector r = rhs;
  Vector d = inv_diag.cwiseProduct(r) / theta;
  Vector x = d;
  if (delta == 0.0) return x;  // exact for a scaled identity

  const double sigma1 = theta / delta;
  double rho_old = 1.0 / sigma1;
  for (int k = 1; k < steps; ++k) {
    r -= G * d;
    const double rho = 1.0 / (2.0 * sigma1 - rho_old);
    d = (rho * rho_old) * d + (2.0 * rho / delta) * inv_diag.cwiseProduct(r);
    x += d;
    rho_old = rho;
  }
  return x;
}

/// Largest eigenvalue of diag(A)^{-1} A for symmetric positive definite A,
/// by power iteration on the symmetrically scaled matrix.
inline double jacobi_spectral_radius(const SparseMatrix& A, int steps = 100) {
  const Vector s = A.diagonal().cwiseSqrt().cwiseInverse();
  Vector v = Vector::Ones(A.rows()) + Vector::LinSpaced(A.rows(), 0.0, 1.0);
  v.normalize();
  double lambda = 0.0;
  for (int k = 0; k < steps; ++k) {
    Vector w = s.cwiseProduct(A * s.cwiseProduct(v));
    lambda = v.dot(w);
    const double nw = w.norm();
    if (nw == 0.0) break;
    v = w / nw;
  }
  return lambda;
}

struct InnerSolveStats {
  int iterations = 0;
  double final_relative_residual = 0.0;
  int preconditioner_applications = 0;
  bool converged = true;
  /// Residual norm after every iteration, starting with the initial residual.
  std::vector<double> residual_history;
};

struct GmresResult {
  Vector x;
  InnerSolveStats stats;
};

/// Restarted, right-preconditioned GMRES (modified Gram-Schmidt, Givens
/// rotations).  Right preconditioning means the minimized quantity is the
/// true residual ||rhs - A x||.  Stops when ||rhs - A x|| <= tol * ||rhs||;
/// hitting max_iter clears stats.converged instead of throwing.
inline GmresResult gmres(const LinearOperator& A_apply, const LinearOperator& P_apply, const Vector& rhs,
                         double tol, int max_iter, int restart = 50,
                         const std::optional<Vector>& x0 = std::nullopt) {
  if (!(tol > 0.0)) throw std::invalid_argument("gmres: tol must be positive");
  if (restart < 1 || max_iter < 0) throw std::invalid_argument("gmres: bad restart/max_iter");

  const Eigen::Index n = rhs.size();
  GmresResult out;
  out.x = x0 ? *x0 : Vector::Zero(n);
  auto& st = out.stats;

  const double bnorm = rhs.norm();
  if (bnorm == 0.0) {
    out.x.setZero();
    st.residual_history.push_back(0.0);
    return out;
  }
  const double target = tol * bnorm;

  Vector r = x0 ? Vector(rhs - A_apply(out.x)) : rhs;
  double beta = r.norm();
  st.residual_history.push_back(beta);

  while (beta > target && st.iterations < max_iter) {
    const int m = std::min<int>(restart, max_iter - st.iterations);
    DenseMatrix V(n, m + 1);
    DenseMatrix Z(n, m);
    DenseMatrix H = DenseMatrix::Zero(m + 1, m);
    Vector cs = Vector::Zero(m), sn = Vector::Zero(m), g = Vector::Zero(m + 1);
    V.col(0) = r / beta;
    g[0] = beta;

    int j = 0;
    bool broke_down = false;
    for (; j < m; ++j) {
      Z.col(j) = P_apply(V.col(j));
      ++st.preconditioner_applications;
      Vector w = A_apply(Z.col(j));
      for (int i = 0; i <= j; ++i) {
        H(i, j) = w.dot(V.col(i));
        w -= H(i, j) * V.col(i);
      }
      H(j + 1, j) = w.norm();
      const bool breakdown = H(j + 1, j) <= 1e-14 * std::abs(H(j, j)) || H(j + 1, j) == 0.0;
      if (!breakdown) V.col(j + 1) = w / H(j + 1, j);

      for (int i = 0; i < j; ++i) {
        const double tmp = cs[i] * H(i, j) + sn[i] * H(i + 1, j);
        H(i + 1, j) = -sn[i] * H(i, j) + cs[i] * H(i + 1, j);
        H(i, j) = tmp;
      }
      const double denom = std::hypot(H(j, j), H(j + 1, j));
      cs[j] = denom == 0.0 ? 1.0 : H(j, j) / denom;
      sn[j] = denom == 0.0 ? 0.0 : H(j + 1, j) / denom;
      H(j, j) = denom;
      H(j + 1, j) = 0.0;
      g[j + 1] = -sn[j] * g[j];
      g[j] = cs[j] * g[j];

      ++st.iterations;
      st.residual_history.push_back(std::abs(g[j + 1]));
      if (std::abs(g[j + 1]) <= target || breakdown) {
        broke_down = breakdown;
        ++j;
        break;
      }
    }
    // Solve the triangular least-squares system and update x.
    const Vector yk = H.topLeftCorner(j, j).triangularView<Eigen::Upper>().solve(g.head(j));
    out.x += Z.leftCols(j) * yk;
    r = rhs - A_apply(out.x);
    beta = r.norm();
    st.residual_history.back() = beta;
    // Krylov space exhausted without reaching the target: restarting cannot help.
    if (broke_down && beta > target) break;
  }
  st.final_relative_residual = beta / bnorm;
  st.converged = beta <= target;
  return out;
}

/// The reduced u-step system: [[M/gamma, K], [-K, M]] [y; u] = [top; bottom].
struct BlockSaddleSystem {
  const SparseMatrix* M = nullptr;
  const SparseMatrix* K = nullptr;
  double gamma = 1.0;
  Vector rhs_top;
  Vector rhs_bottom;
};

/// Applies the (nonsymmetric) saddle matrix to the stacked vector [y; u].
inline Vector saddle_apply(const SparseMatrix& M, const SparseMatrix& K, double gamma, const Vector& x) {
  const Eigen::Index n = M.rows();
  Vector out(2 * n);
  const auto y = x.head(n);
  const auto u = x.tail(n);
  out.head(n) = (M * y) / gamma + K * u;
  out.tail(n) = M * u - K * y;
  return out;
}

enum class GSolverKind { automatic, direct, chebyshev };

/// PMHSS preconditioner
///   P = (1/gamma) [[I, sqrt(gamma) I], [-sqrt(gamma) I, gamma I]] blkdiag(G, G),
///   G = M + sqrt(gamma) K.
/// apply() returns P^{-1} r: the scalar 2x2 factor is inverted in closed form,
/// then G is (approximately) inverted block by block.
class PmhssPreconditioner {
 public:
  PmhssPreconditioner(const SparseMatrix& M, const SparseMatrix& K, double gamma,
                      GSolverKind kind = GSolverKind::automatic, int chebyshev_steps = 20)
      : gamma_(gamma), chebyshev_steps_(chebyshev_steps) {
    if (!(gamma > 0.0)) throw std::invalid_argument("PMHSS: gamma must be positive");
    const double sg = std::sqrt(gamma);
    G_ = M + sg * K;
    G_.makeCompressed();

    // diag(G)^{-1} G has spectrum in [1 / (2 (1 + rho)), 2] with
    // rho = sqrt(gamma) max_i K_ii / M_ii: the P1 mass matrix satisfies
    // D_M^{-1} M in [1/2, 2] and D_K^{-1} K <= 2 elementwise.
    double rho = 0.0;
    for (int i = 0; i < M.rows(); ++i) rho = std::max(rho, sg * K.coeff(i, i) / M.coeff(i, i));
    bounds_ = {0.5 / (1.0 + rho), 2.0};

    if (kind == GSolverKind::automatic) kind = rho <= 1.0 ? GSolverKind::chebyshev : GSolverKind::direct;
    kind_ = kind;
    if (kind_ == GSolverKind::direct) g_factor_ = Factorization(G_, Factorization::Kind::ldlt);
  }

  /// Uses a caller supplied approximation of G^{-1}.
  PmhssPreconditioner(const SparseMatrix& M, const SparseMatrix& K, double gamma, LinearOperator g_solver)
      : PmhssPreconditioner(M, K, gamma, GSolverKind::chebyshev) {
    custom_ = std::move(g_solver);
  }

  [[nodiscard]] Vector solve_g(const Vector& v) const {
    if (custom_) return custom_(v);
    if (kind_ == GSolverKind::direct) return g_factor_.solve(v);
    return chebyshev_semi_iteration(G_, v, chebyshev_steps_, bounds_);
  }

  [[nodiscard]] Vector apply(const Vector& r) const {
    const Eigen::Index n = G_.rows();
    if (r.size() != 2 * n) throw std::invalid_argument("PMHSS apply: dimension mismatch");
    const double sg = std::sqrt(gamma_);
    const Vector a = 0.5 * (gamma_ * r.head(n) - sg * r.tail(n));
    const Vector b = 0.5 * (sg * r.head(n) + r.tail(n));
    Vector out(2 * n);
    out.head(n) = solve_g(a);
    out.tail(n) = solve_g(b);
    return out;
  }

  /// P x (forward application, used for round-trip checks).
  [[nodiscard]] Vector forward(const Vector& x) const {
    const Eigen::Index n = G_.rows();
    const double sg = std::sqrt(gamma_);
    const Vector g1 = G_ * x.head(n);
    const Vector g2 = G_ * x.tail(n);
    Vector out(2 * n);
    out.head(n) = (g1 + sg * g2) / gamma_;
    out.tail(n) = (-sg * g1 + gamma_ * g2) / gamma_;
    return out;
  }

  [[nodiscard]] GSolverKind g_solver_kind() const { return kind_; }
  [[nodiscard]] EigenBounds jacobi_bounds() const { return bounds_; }
  [[nodiscard]] const SparseMatrix& G() const { return G_; }

 private:
  double gamma_;
  int chebyshev_steps_;
  SparseMatrix G_;
  EigenBounds bounds_{0.25, 2.0};
  GSolverKind kind_ = GSolverKind::direct;
  Factorization g_factor_;
  LinearOperator custom_;
};

/// Free-function form of PmhssPreconditioner::apply.
inline Vector pmhss_apply(const SparseMatrix& M, const SparseMatrix& K, double gamma,
                          const LinearOperator& g_solver, const Vector& r) {
  if (!(gamma > 0.0)) throw std::invalid_argument("pmhss_apply: gamma must be positive");
  const Eigen::Index n = M.rows();
  const double sg = std::sqrt(gamma);
  Vector out(2 * n);
  out.head(n) = g_solver(0.5 * (gamma * r.head(n) - sg * r.tail(n)));
  out.tail(n) = g_solver(0.5 * (sg * r.head(n) + r.tail(n)));
  return out;
}

enum class SaddleBackend { direct, pmhss_gmres };

inline std::string to_string(SaddleBackend b) { return b == SaddleBackend::direct ? "direct" : "pmhss_gmres"; }

inline SaddleBackend saddle_backend_from_string(const std::string& s) {
  if (s == "direct") return SaddleBackend::direct;
  if (s == "pmhss_gmres") return SaddleBackend::pmhss_gmres;
  throw std::invalid_argument("unknown inner backend '" + s + "'");
}

struct SaddleSolution {
  Vector y;
  Vector u;
  InnerSolveStats stats;
  double residual_top = 0.0;     ///< ||r1||
  double residual_bottom = 0.0;  ///< ||r2||
};

struct SaddleSolverOptions {
  int gmres_restart = 50;
  int gmres_max_iter = 500;
  GSolverKind g_solver = GSolverKind::automatic;
};

/// Solver for repeated right-hand sides with fixed (M, K, gamma).  The direct
/// backend factors the symmetric quasi-definite form [[M/gamma, K], [K, -M]]
/// once; the iterative backend sets up the PMHSS preconditioner once.
class SaddleSolver {
 public:
  SaddleSolver(const SparseMatrix& M, const SparseMatrix& K, double gamma, SaddleBackend backend,
               SaddleSolverOptions opts = {})
      : M_(&M), K_(&K), gamma_(gamma), backend_(backend), opts_(opts) {
    if (!(gamma > 0.0)) throw std::invalid_argument("SaddleSolver: gamma must be positive");
    if (M.rows() != K.rows() || M.cols() != K.cols() || M.rows() != M.cols())
      throw std::invalid_argument("SaddleSolver: inconsistent block dimensions");
    if (backend == SaddleBackend::direct) {
      const SparseMatrix Mg = M / gamma;
      const SparseMatrix negM = -M;
      factor_ = Factorization(block2x2(Mg, K, K, negM), Factorization::Kind::ldlt);
    } else {
      pmhss_.emplace(M, K, gamma, opts.g_solver);
    }
  }

  /// Solves to ||r1|| + ||r2|| <= tol (absolute).  `guess` seeds GMRES.
  [[nodiscard]] SaddleSolution solve(const Vector& top, const Vector& bottom, double tol,
                                     const std::optional<Vector>& guess = std::nullopt) const {
    const Eigen::Index n = M_->rows();
    if (top.size() != n || bottom.size() != n) throw std::invalid_argument("solve_saddle: rhs dimension mismatch");
    SaddleSolution out;
    Vector rhs(2 * n);
    rhs << top, bottom;
    Vector x;
    if (backend_ == SaddleBackend::direct) {
      Vector sym_rhs(2 * n);
      sym_rhs << top, -bottom;
      x = factor_.solve(sym_rhs);
      out.stats.iterations = 0;
      out.stats.converged = true;
    } else {
      const double bnorm = rhs.norm();
      // ||r1|| + ||r2|| <= sqrt(2) ||r||
      const double rel = bnorm > 0.0 ? tol / (std::sqrt(2.0) * bnorm) : 1.0;
      auto A = [this](const Vector& v) { return saddle_apply(*M_, *K_, gamma_, v); };
      auto P = [this](const Vector& v) { return pmhss_->apply(v); };
      auto res = gmres(A, P, rhs, std::max(rel, 1e-15), opts_.gmres_max_iter, opts_.gmres_restart, guess);
      x = std::move(res.x);
      out.stats = std::move(res.stats);
    }
    out.y = x.head(n);
    out.u = x.tail(n);
    const Vector r = rhs - saddle_apply(*M_, *K_, gamma_, x);
    out.residual_top = r.head(n).norm();
    out.residual_bottom = r.tail(n).norm();
    const double rn = rhs.norm();
    out.stats.final_relative_residual = rn > 0.0 ? r.norm() / rn : 0.0;
    if (backend_ == SaddleBackend::pmhss_gmres)
      out.stats.converged = out.stats.converged || out.residual_top + out.residual_bottom <= tol;
    return out;
  }

  [[nodiscard]] SaddleBackend backend() const { return backend_; }
  [[nodiscard]] const PmhssPreconditioner* preconditioner() const { return pmhss_ ? &*pmhss_ : nullptr; }

 private:
  const SparseMatrix* M_;
  const SparseMatrix* K_;
  double gamma_;
  SaddleBackend backend_;
  SaddleSolverOptions opts_;
  Factorization factor_;
  std::optional<PmhssPreconditioner> pmhss_;
};

inline SaddleSolution solve_saddle(const BlockSaddleSystem& system, SaddleBackend backend, double tol,
                                   SaddleSolverOptions opts = {}) {
  if (system.M == nullptr || system.K == nullptr) throw std::invalid_argument("solve_saddle: missing blocks");
  SaddleSolver solver(*system.M, *system.K, system.gamma, backend, opts);
  return solver.solve(system.rhs_top, system.rhs_bottom, tol);
}

/// Upper estimate of ||M K^{-1}||_2: power iteration on (M K^{-1})(M K^{-1})^T
/// = M K^{-2} M for symmetric M, K.
inline double estimate_mk_inverse_norm(const SparseMatrix& M, const Factorization& K_factor, int steps = 50) {
  Vector v = Vector::Ones(M.rows());
  v.normalize();
  double lambda = 0.0;
  for (int k = 0; k < steps; ++k) {
    Vector w = M * K_factor.solve(K_factor.solve(M * v));
    lambda = v.dot(w);
    const double nw = w.norm();
    if (nw == 0.0) break;
    v = w / nw;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

/// Absolute bound on ||r1|| + ||r2|| that keeps
/// delta = gamma M K^{-1} r1 + M K^{-1} M K^{-1} r2, the residual induced in the
/// u-step optimality condition, below eps in norm.
inline double saddle_tolerance_for_error(double eps, double mk_norm, double gamma) {
  return eps / (std::sqrt(2.0) * mk_norm * std::max(mk_norm, gamma));
}

}  // namespace l1ocp
