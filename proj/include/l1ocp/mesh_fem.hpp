#pragma once
/// \file mesh_fem.hpp
/// \brief Uniform P1 triangulations of the unit square and assembly of the
///        stiffness, mass and lumped mass matrices on interior dofs.

#include "l1ocp/sparse_linalg.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace l1ocp {

using ScalarField = std::function<double(double, double)>;
using Point = std::array<double, 2>;

/// Friedrichs-Keller triangulation of (0,1)^2 with h = 2^-level.  Nodes are
/// numbered lexicographically (x fastest); every h x h square is split along
/// its bottom-left to top-right diagonal.  Boundary nodes carry homogeneous
/// Dirichlet data and are not degrees of freedom.
struct Mesh {
  int level = 0;
  double h = 0.0;
  int nodes_per_side = 0;
  std::vector<Point> nodes;
  std::vector<std::array<int, 3>> elements;
  std::vector<bool> interior_mask;
  int n_interior = 0;
  std::vector<int> interior_index;  ///< global node -> dof, -1 on the boundary
  std::vector<int> dof_node;        ///< dof -> global node

  [[nodiscard]] double element_area(int e) const {
    const auto& t = elements[e];
    const auto& p0 = nodes[t[0]];
    const auto& p1 = nodes[t[1]];
    const auto& p2 = nodes[t[2]];
    return 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]));
  }

  /// Coefficients on all nodes (boundary = 0) from a dof vector.
  [[nodiscard]] Vector extend_by_zero(const Vector& dofs) const {
    Vector full = Vector::Zero(static_cast<Eigen::Index>(nodes.size()));
    for (int i = 0; i < n_interior; ++i) full[dof_node[i]] = dofs[i];
    return full;
  }
};

inline Mesh build_mesh(int level) {
  if (level <= 0) throw std::invalid_argument("build_mesh: level must be >= 1");
  if (level > 12) throw std::invalid_argument("build_mesh: level > 12 is not supported");
  Mesh m;
  m.level = level;
  const int n = 1 << level;
  m.h = 1.0 / n;
  m.nodes_per_side = n + 1;
  const int side = n + 1;
  m.nodes.reserve(static_cast<size_t>(side) * side);
  m.interior_mask.reserve(static_cast<size_t>(side) * side);
  m.interior_index.assign(static_cast<size_t>(side) * side, -1);
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      m.nodes.push_back({i * m.h, j * m.h});
      const bool interior = i > 0 && i < n && j > 0 && j < n;
      m.interior_mask.push_back(interior);
      if (interior) {
        m.interior_index[j * side + i] = m.n_interior++;
        m.dof_node.push_back(j * side + i);
      }
    }
  }
  m.elements.reserve(2 * static_cast<size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const int v00 = j * side + i;
      const int v10 = v00 + 1;
      const int v01 = v00 + side;
      const int v11 = v01 + 1;
      m.elements.push_back({v00, v10, v11});
      m.elements.push_back({v00, v11, v01});
    }
  }
  return m;
}

namespace detail {

/// Gradients of the three barycentric coordinates of element e.
inline std::array<Point, 3> barycentric_gradients(const Mesh& mesh, int e) {
  const auto& t = mesh.elements[e];
  const auto& p0 = mesh.nodes[t[0]];
  const auto& p1 = mesh.nodes[t[1]];
  const auto& p2 = mesh.nodes[t[2]];
  const double two_area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
  return {{{(p1[1] - p2[1]) / two_area, (p2[0] - p1[0]) / two_area},
           {(p2[1] - p0[1]) / two_area, (p0[0] - p2[0]) / two_area},
           {(p0[1] - p1[1]) / two_area, (p1[0] - p0[0]) / two_area}}};
}

template <class ElementMatrix>
SparseMatrix assemble_interior(const Mesh& mesh, ElementMatrix&& element_matrix) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.elements.size() * 9);
  for (int e = 0; e < static_cast<int>(mesh.elements.size()); ++e) {
    const std::array<std::array<double, 3>, 3> Ae = element_matrix(e);
    const auto& t = mesh.elements[e];
    for (int a = 0; a < 3; ++a) {
      const int row = mesh.interior_index[t[a]];
      if (row < 0) continue;
      for (int b = 0; b < 3; ++b) {
        const int col = mesh.interior_index[t[b]];
        if (col < 0) continue;
        trip.emplace_back(row, col, Ae[a][b]);
      }
    }
  }
  SparseMatrix A(mesh.n_interior, mesh.n_interior);
  A.setFromTriplets(trip.begin(), trip.end());
  compress(A);
  return A;
}

}  // namespace detail

/// Stiffness matrix of a(y, v) = (grad y, grad v) + c0 (y, v) on interior dofs.
inline SparseMatrix assemble_stiffness(const Mesh& mesh, double c0 = 0.0) {
  if (c0 < 0.0) throw std::invalid_argument("assemble_stiffness: c0 must be >= 0");
  return detail::assemble_interior(mesh, [&](int e) {
    const auto g = detail::barycentric_gradients(mesh, e);
    const double area = mesh.element_area(e);
    std::array<std::array<double, 3>, 3> Ke{};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        Ke[a][b] = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]) + c0 * area / 12.0 * (a == b ? 2.0 : 1.0);
    return Ke;
  });
}

/// Consistent P1 mass matrix on interior dofs.
inline SparseMatrix assemble_mass(const Mesh& mesh) {
  return detail::assemble_interior(mesh, [&](int e) {
    const double area = mesh.element_area(e);
    std::array<std::array<double, 3>, 3> Me{};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) Me[a][b] = area / 12.0 * (a == b ? 2.0 : 1.0);
    return Me;
  });
}

/// w_i = integral of phi_i over all nodes (boundary included), patch area / 3.
inline Vector lumped_mass_all_nodes(const Mesh& mesh) {
  Vector w = Vector::Zero(static_cast<Eigen::Index>(mesh.nodes.size()));
  for (int e = 0; e < static_cast<int>(mesh.elements.size()); ++e) {
    const double third = mesh.element_area(e) / 3.0;
    for (int v : mesh.elements[e]) w[v] += third;
  }
  return w;
}

/// Diagonal of the lumped mass matrix W on interior dofs.
inline Vector assemble_lumped_mass(const Mesh& mesh) {
  const Vector all = lumped_mass_all_nodes(mesh);
  Vector w(mesh.n_interior);
  for (int i = 0; i < mesh.n_interior; ++i) w[i] = all[mesh.dof_node[i]];
  return w;
}

/// Load vector l_i = integral f phi_i with the edge-midpoint rule (exact for
/// quadratics) on interior dofs.
inline Vector assemble_load(const Mesh& mesh, const ScalarField& f) {
  Vector load = Vector::Zero(mesh.n_interior);
  for (int e = 0; e < static_cast<int>(mesh.elements.size()); ++e) {
    const auto& t = mesh.elements[e];
    const double area = mesh.element_area(e);
    // midpoint m_k sits on the edge opposite vertex k; phi_a(m_k) = 1/2 for a != k.
    std::array<double, 3> fm{};
    for (int k = 0; k < 3; ++k) {
      const auto& p = mesh.nodes[t[(k + 1) % 3]];
      const auto& q = mesh.nodes[t[(k + 2) % 3]];
      fm[k] = f(0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]));
    }
    for (int a = 0; a < 3; ++a) {
      const int dof = mesh.interior_index[t[a]];
      if (dof < 0) continue;
      double s = 0.0;
      for (int k = 0; k < 3; ++k)
        if (k != a) s += 0.5 * fm[k];
      load[dof] += area / 3.0 * s;
    }
  }
  return load;
}

/// L2 projection of f onto the P1 space with homogeneous boundary values:
/// solves M v = load(f).
inline Vector project_field(const Mesh& mesh, const ScalarField& f, const SparseMatrix* mass = nullptr,
                            const Factorization* mass_factor = nullptr) {
  const Vector load = assemble_load(mesh, f);
  if (mass_factor != nullptr) return mass_factor->solve(load);
  const SparseMatrix M = mass != nullptr ? *mass : assemble_mass(mesh);
  return Factorization(M, Factorization::Kind::ldlt).solve(load);
}

/// Nodal interpolant on interior dofs.
inline Vector interpolate_field(const Mesh& mesh, const ScalarField& f) {
  Vector v(mesh.n_interior);
  for (int i = 0; i < mesh.n_interior; ++i) {
    const auto& p = mesh.nodes[mesh.dof_node[i]];
    v[i] = f(p[0], p[1]);
  }
  return v;
}

/// Assembled data of one grid level of
///   min 1/2 |y - yd|_M^2 + alpha/4 |u|_M^2 + alpha/4 |u|_W^2 + beta |W u|_1
///   s.t. K y = M (u + yc), a <= u <= b.
struct DiscreteProblem {
  SparseMatrix K;
  SparseMatrix M;
  Vector W;
  Vector yd;
  Vector yc;
  double alpha = 0.0;
  double beta = 0.0;
  double a = 0.0;
  double b = 0.0;
  double h = 0.0;

  [[nodiscard]] int size() const { return static_cast<int>(W.size()); }

  void validate() const {
    const Eigen::Index n = W.size();
    if (n == 0) throw std::invalid_argument("DiscreteProblem: empty problem");
    if (K.rows() != n || K.cols() != n || M.rows() != n || M.cols() != n || yd.size() != n || yc.size() != n)
      throw std::invalid_argument("DiscreteProblem: inconsistent dimensions");
    if (!(alpha > 0.0)) throw std::invalid_argument("DiscreteProblem: alpha must be > 0");
    if (beta < 0.0) throw std::invalid_argument("DiscreteProblem: beta must be >= 0");
    if (!(a < 0.0 && 0.0 < b)) throw std::invalid_argument("DiscreteProblem: bounds must satisfy a < 0 < b");
    if ((W.array() <= 0.0).any()) throw std::invalid_argument("DiscreteProblem: lumped weights must be positive");
  }
};

struct RegularizerParams {
  double alpha = 0.5;
  double beta = 0.5;
  double a = -0.5;
  double b = 0.5;
};

/// Assembles K (c0 = 0), M, W and projects the data fields.
inline DiscreteProblem assemble_problem(const Mesh& mesh, const ScalarField& yd, const ScalarField& yc,
                                        const RegularizerParams& params, double c0 = 0.0) {
  DiscreteProblem p;
  p.K = assemble_stiffness(mesh, c0);
  p.M = assemble_mass(mesh);
  p.W = assemble_lumped_mass(mesh);
  const Factorization mass_factor(p.M, Factorization::Kind::ldlt);
  p.yd = project_field(mesh, yd, nullptr, &mass_factor);
  p.yc = project_field(mesh, yc, nullptr, &mass_factor);
  p.alpha = params.alpha;
  p.beta = params.beta;
  p.a = params.a;
  p.b = params.b;
  p.h = mesh.h;
  p.validate();
  return p;
}

/// Matrix Market coordinate output.  Symmetric matrices store the lower
/// triangle only.  Values are printed with 17 significant digits so that
/// repeated exports are byte-identical.
inline void write_matrix_market(std::ostream& os, const SparseMatrix& A, bool symmetric) {
  long nnz = 0;
  for (int r = 0; r < A.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(A, r); it; ++it)
      if (!symmetric || it.col() <= it.row()) ++nnz;
  os << "%%MatrixMarket matrix coordinate real " << (symmetric ? "symmetric" : "general") << '\n';
  os << A.rows() << ' ' << A.cols() << ' ' << nnz << '\n';
  char buf[64];
  for (int r = 0; r < A.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(A, r); it; ++it) {
      if (symmetric && it.col() > it.row()) continue;
      std::snprintf(buf, sizeof(buf), "%d %d %.17g\n", static_cast<int>(it.row()) + 1,
                    static_cast<int>(it.col()) + 1, it.value());
      os << buf;
    }
  }
}

inline void write_matrix_market(const std::string& path, const SparseMatrix& A, bool symmetric) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_matrix_market(os, A, symmetric);
}

/// Reads a coordinate real matrix written by write_matrix_market.
inline SparseMatrix read_matrix_market(std::istream& is) {
  std::string line;
  std::getline(is, line);
  if (line.rfind("%%MatrixMarket", 0) != 0) throw std::runtime_error("read_matrix_market: missing banner");
  const bool symmetric = line.find("symmetric") != std::string::npos;
  while (std::getline(is, line) && !line.empty() && line[0] == '%') {
  }
  std::istringstream hdr(line);
  long rows = 0, cols = 0, nnz = 0;
  hdr >> rows >> cols >> nnz;
  std::vector<Eigen::Triplet<double>> t;
  for (long k = 0; k < nnz; ++k) {
    long r = 0, c = 0;
    double v = 0.0;
    is >> r >> c >> v;
    t.emplace_back(static_cast<int>(r - 1), static_cast<int>(c - 1), v);
    if (symmetric && r != c) t.emplace_back(static_cast<int>(c - 1), static_cast<int>(r - 1), v);
  }
  SparseMatrix A(rows, cols);
  A.setFromTriplets(t.begin(), t.end());
  A.makeCompressed();
  return A;
}

}  // namespace l1ocp
