#pragma once
/// \file experiments.hpp
/// \brief Benchmark instances, control error measurement, convergence
///        orders and the level-by-solver table driver.

#include "l1ocp/solvers.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace l1ocp {

enum class ExampleId { constructed, stadler };

inline std::string to_string(ExampleId e) { return e == ExampleId::constructed ? "constructed" : "stadler"; }

inline ExampleId example_from_string(const std::string& s) {
  if (s == "constructed") return ExampleId::constructed;
  if (s == "stadler") return ExampleId::stadler;
  throw std::invalid_argument("unknown example '" + s + "'");
}

inline RegularizerParams default_params(ExampleId e) {
  if (e == ExampleId::constructed) return {0.5, 0.5, -0.5, 0.5};
  return {1e-5, 1e-3, -30.0, 30.0};
}

/// Closed-form optimal triple of the constructed example together with the
/// Laplacians used to manufacture its data.
struct ExactSolution {
  ScalarField y_star, p_star, u_star;
  ScalarField neg_laplace_y, neg_laplace_p;
};

inline ExactSolution constructed_solution(const RegularizerParams& prm) {
  using std::numbers::pi;
  ExactSolution ex;
  const double alpha = prm.alpha, beta = prm.beta, a = prm.a, b = prm.b;
  ex.y_star = [](double x, double y) { return std::sin(pi * x) * std::sin(pi * y); };
  ex.neg_laplace_y = [](double x, double y) { return 2.0 * pi * pi * std::sin(pi * x) * std::sin(pi * y); };
  ex.p_star = [beta](double x, double y) {
    return 2.0 * beta * std::sin(2.0 * pi * x) * std::exp(0.5 * x) * std::sin(4.0 * pi * y);
  };
  ex.neg_laplace_p = [beta](double x, double y) {
    return 2.0 * beta * std::exp(0.5 * x) * std::sin(4.0 * pi * y) *
           ((20.0 * pi * pi - 0.25) * std::sin(2.0 * pi * x) - 2.0 * pi * std::cos(2.0 * pi * x));
  };
  ex.u_star = [p = ex.p_star, alpha, beta, a, b](double x, double y) {
    return project_box(soft(p(x, y), beta) / alpha, a, b);
  };
  return ex;
}

struct Instance {
  Mesh mesh;
  DiscreteProblem problem;
  std::optional<ExactSolution> exact;
};

/// yc = -Lap y* - u*,  yd = -Lap p* + y*, both L2-projected.
inline Instance build_example1(int level, const RegularizerParams& prm = default_params(ExampleId::constructed)) {
  Instance inst;
  inst.mesh = build_mesh(level);
  ExactSolution ex = constructed_solution(prm);
  const ScalarField yc = [ex](double x, double y) { return ex.neg_laplace_y(x, y) - ex.u_star(x, y); };
  const ScalarField yd = [ex](double x, double y) { return ex.neg_laplace_p(x, y) + ex.y_star(x, y); };
  inst.problem = assemble_problem(inst.mesh, yd, yc, prm);
  inst.exact = std::move(ex);
  return inst;
}

inline Instance build_example2(int level, const RegularizerParams& prm = default_params(ExampleId::stadler)) {
  using std::numbers::pi;
  Instance inst;
  inst.mesh = build_mesh(level);
  const ScalarField yd = [](double x, double y) {
    return std::sin(2.0 * pi * x) * std::exp(2.0 * x) * std::sin(2.0 * pi * y) / 6.0;
  };
  const ScalarField yc = [](double, double) { return 0.0; };
  inst.problem = assemble_problem(inst.mesh, yd, yc, prm);
  return inst;
}

inline Instance build_instance(ExampleId e, int level, const std::optional<RegularizerParams>& prm = std::nullopt) {
  const RegularizerParams p = prm.value_or(default_params(e));
  return e == ExampleId::constructed ? build_example1(level, p) : build_example2(level, p);
}

/// Value of the P1 function with nodal values `full` (all nodes) at (x, y).
inline double eval_p1(const Mesh& mesh, const Vector& full, double x, double y) {
  const int n = mesh.nodes_per_side - 1;
  const double sx = x / mesh.h, sy = y / mesh.h;
  const int i = std::clamp(static_cast<int>(std::floor(sx)), 0, n - 1);
  const int j = std::clamp(static_cast<int>(std::floor(sy)), 0, n - 1);
  const double xi = sx - i, eta = sy - j;
  const int side = mesh.nodes_per_side;
  const double v00 = full[j * side + i], v10 = full[j * side + i + 1];
  const double v01 = full[(j + 1) * side + i], v11 = full[(j + 1) * side + i + 1];
  if (xi >= eta) return v00 + xi * (v10 - v00) + eta * (v11 - v10);
  return v00 + eta * (v01 - v00) + xi * (v11 - v01);
}

namespace detail {

// 7-point rule exact for degree 5 on the reference triangle (weights sum to 1).
struct TriRule {
  std::array<std::array<double, 3>, 7> bary;
  std::array<double, 7> weight;
};

inline const TriRule& degree5_rule() {
  static const TriRule rule = [] {
    const double s15 = std::sqrt(15.0);
    const double a1 = (6.0 - s15) / 21.0, b1 = (9.0 + 2.0 * s15) / 21.0;
    const double a2 = (6.0 + s15) / 21.0, b2 = (9.0 - 2.0 * s15) / 21.0;
    const double w1 = (155.0 - s15) / 1200.0, w2 = (155.0 + s15) / 1200.0;
    TriRule r;
    r.bary = {{{1.0 / 3, 1.0 / 3, 1.0 / 3}, {a1, a1, b1}, {a1, b1, a1}, {b1, a1, a1}, {a2, a2, b2}, {a2, b2, a2},
               {b2, a2, a2}}};
    r.weight = {9.0 / 40, w1, w1, w1, w2, w2, w2};
    return r;
  }();
  return rule;
}

}  // namespace detail

/// ||u_h - u*||_{L2} with the degree-5 rule on each element split into
/// `subdiv`^2 congruent sub-triangles (u* may have kinks inside elements).
inline double l2_control_error(const Mesh& mesh, const Vector& u_h, const ScalarField& u_star, int subdiv = 4) {
  if (u_h.size() != mesh.n_interior) throw std::invalid_argument("l2_control_error: dimension mismatch");
  if (subdiv < 1) throw std::invalid_argument("l2_control_error: subdiv must be >= 1");
  const Vector full = mesh.extend_by_zero(u_h);
  const auto& rule = detail::degree5_rule();
  const double s = subdiv;
  double sum = 0.0;
  for (int e = 0; e < static_cast<int>(mesh.elements.size()); ++e) {
    const auto& t = mesh.elements[e];
    const Point& P0 = mesh.nodes[t[0]];
    const Point& P1 = mesh.nodes[t[1]];
    const Point& P2 = mesh.nodes[t[2]];
    const double f0 = full[t[0]], f1 = full[t[1]], f2 = full[t[2]];
    const double sub_area = mesh.element_area(e) / (s * s);
    // Sub-triangles in barycentric lattice coordinates (i, j) / s.
    auto integrate = [&](std::array<std::array<double, 2>, 3> v) {
      double acc = 0.0;
      for (int q = 0; q < 7; ++q) {
        const auto& l = rule.bary[static_cast<size_t>(q)];
        const double r1 = l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0];
        const double r2 = l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1];
        const double r0 = 1.0 - r1 - r2;
        const double x = r0 * P0[0] + r1 * P1[0] + r2 * P2[0];
        const double y = r0 * P0[1] + r1 * P1[1] + r2 * P2[1];
        const double d = r0 * f0 + r1 * f1 + r2 * f2 - u_star(x, y);
        acc += rule.weight[static_cast<size_t>(q)] * d * d;
      }
      return acc * sub_area;
    };
    for (int i = 0; i < subdiv; ++i) {
      for (int j = 0; j + i < subdiv; ++j) {
        sum += integrate({{{i / s, j / s}, {(i + 1) / s, j / s}, {i / s, (j + 1) / s}}});
        if (i + j + 1 < subdiv)
          sum += integrate({{{(i + 1) / s, j / s}, {(i + 1) / s, (j + 1) / s}, {i / s, (j + 1) / s}}});
      }
    }
  }
  return std::sqrt(std::max(sum, 0.0));
}

/// ||I u_h - u_ref||_{L2} on a finer nested mesh: u_h is injected into the
/// fine P1 space by nodal evaluation and the difference integrated exactly
/// with the fine consistent mass matrix.
inline double l2_control_error(const Mesh& mesh, const Vector& u_h, const Mesh& fine, const Vector& u_ref,
                               const SparseMatrix& fine_mass) {
  if (u_h.size() != mesh.n_interior || u_ref.size() != fine.n_interior)
    throw std::invalid_argument("l2_control_error: dimension mismatch");
  if (fine.level < mesh.level) throw std::invalid_argument("l2_control_error: reference mesh is coarser");
  const Vector full = mesh.extend_by_zero(u_h);
  Vector d(fine.n_interior);
  for (int i = 0; i < fine.n_interior; ++i) {
    const auto& p = fine.nodes[fine.dof_node[i]];
    d[i] = eval_p1(mesh, full, p[0], p[1]) - u_ref[i];
  }
  return std::sqrt(std::max(d.dot(fine_mass * d), 0.0));
}

/// EOC between consecutive rows; nullopt where an error is not positive.
inline std::vector<std::optional<double>> compute_eoc(const std::vector<std::pair<double, double>>& rows) {
  std::vector<std::optional<double>> out;
  for (size_t k = 1; k < rows.size(); ++k) {
    const auto [h1, e1] = rows[k - 1];
    const auto [h2, e2] = rows[k];
    if (h1 == h2) throw std::invalid_argument("compute_eoc: mesh sizes must be distinct");
    if (!(e1 > 0.0) || !(e2 > 0.0) || !(h1 > 0.0) || !(h2 > 0.0)) {
      out.emplace_back(std::nullopt);
      continue;
    }
    out.emplace_back((std::log(e1) - std::log(e2)) / (std::log(h1) - std::log(h2)));
  }
  return out;
}

/// Node coordinates and values, boundary included: x,y,u.
inline void write_solution_csv(std::ostream& os, const Mesh& mesh, const Vector& u) {
  const Vector full = mesh.extend_by_zero(u);
  os << "x,y,u\n" << std::setprecision(17);
  for (size_t i = 0; i < mesh.nodes.size(); ++i)
    os << mesh.nodes[i][0] << ',' << mesh.nodes[i][1] << ',' << full[static_cast<Eigen::Index>(i)] << '\n';
}

struct SolverEntry {
  SolverKind kind = SolverKind::ihadmm;
  SolverConfig config;
};

struct ExperimentPlan {
  ExampleId example = ExampleId::constructed;
  std::vector<int> levels;
  RegularizerParams params = default_params(ExampleId::constructed);
  std::vector<SolverEntry> solvers;
  std::optional<int> reference_level;
  double reference_tol = 1e-10;

  void validate() const {
    if (levels.empty()) throw std::invalid_argument("experiment: levels must not be empty");
    if (solvers.empty()) throw std::invalid_argument("experiment: at least one solver is required");
    for (size_t i = 0; i < levels.size(); ++i) {
      if (levels[i] < 1 || levels[i] > 10) throw std::invalid_argument("experiment: levels must lie in [1, 10]");
      if (i > 0 && levels[i] <= levels[i - 1]) throw std::invalid_argument("experiment: levels must be ascending");
    }
    if (reference_level && *reference_level <= levels.back())
      throw std::invalid_argument("experiment: reference_level must exceed every level");
    for (const auto& s : solvers) s.config.validate();
  }
};

struct CellResult {
  std::string solver;
  int iterations = 0;
  std::vector<int> phase_iterations;
  double eta = 0.0;
  double wall_time = 0.0;
  bool converged = false;
  std::string failure;
  std::optional<double> E2;
  double zero_fraction = 0.0;  ///< share of exactly-zero entries of z
};

struct EocRow {
  int level = 0;
  double h = 0.0;
  int n_dofs = 0;
  std::optional<double> E2;   ///< error of the first solver column
  std::optional<double> eoc;  ///< against the previous row
  std::vector<CellResult> cells;
};

struct ReferenceSolution {
  Mesh mesh;
  SparseMatrix mass;
  Vector u;
};

inline ReferenceSolution compute_reference(const ExperimentPlan& plan, int level) {
  Instance inst = build_instance(plan.example, level, plan.params);
  SolverConfig cfg;
  cfg.tol = plan.reference_tol;
  cfg.record_Rh = false;
  const ConvergenceReport r = solve_two_phase(inst.problem, cfg);
  if (!r.converged) throw std::runtime_error("reference solve failed: " + r.failure);
  return {std::move(inst.mesh), std::move(inst.problem.M), r.final_state.u};
}

/// Runs every (level, solver) cell, at most `jobs` at a time.  A failing
/// cell is recorded in its row; the table is always complete.
inline std::vector<EocRow> run_table(const ExperimentPlan& plan, int jobs = 1) {
  plan.validate();
  std::optional<ReferenceSolution> ref;
  if (plan.example == ExampleId::stadler && plan.reference_level) ref = compute_reference(plan, *plan.reference_level);

  const size_t nl = plan.levels.size(), ns = plan.solvers.size();
  std::vector<EocRow> rows(nl);
  for (size_t i = 0; i < nl; ++i) {
    rows[i].level = plan.levels[i];
    rows[i].h = std::ldexp(1.0, -plan.levels[i]);
    rows[i].n_dofs = ((1 << plan.levels[i]) - 1) * ((1 << plan.levels[i]) - 1);
    rows[i].cells.resize(ns);
  }

  auto run_cell = [&](size_t idx) {
    const size_t li = idx / ns, si = idx % ns;
    const SolverEntry& entry = plan.solvers[si];
    CellResult& cell = rows[li].cells[si];
    cell.solver = to_string(entry.kind);
    try {
      const Instance inst = build_instance(plan.example, plan.levels[li], plan.params);
      SolverConfig cfg = entry.config;
      cfg.observer = nullptr;
      const ConvergenceReport r = run_solver(entry.kind, inst.problem, cfg);
      cell.iterations = r.iterations;
      cell.phase_iterations = r.phase_iterations;
      cell.eta = r.final_eta();
      cell.wall_time = r.wall_time;
      cell.converged = r.converged;
      cell.failure = r.failure;
      const Vector& u = r.final_state.u;
      const Vector& z = r.final_state.z;
      cell.zero_fraction = z.size() ? static_cast<double>((z.array() == 0.0).count()) / z.size() : 0.0;
      if (inst.exact)
        cell.E2 = l2_control_error(inst.mesh, u, inst.exact->u_star);
      else if (ref)
        cell.E2 = l2_control_error(inst.mesh, u, ref->mesh, ref->u, ref->mass);
    } catch (const std::exception& e) {
      cell.converged = false;
      cell.failure = e.what();
    }
  };

  const size_t total = nl * ns;
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(total)));
  if (workers == 1) {
    for (size_t k = 0; k < total; ++k) run_cell(k);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (size_t k = next++; k < total; k = next++) run_cell(k);
      });
  }

  std::vector<std::pair<double, double>> errs;
  for (auto& row : rows) {
    row.E2 = row.cells.front().E2;
    errs.emplace_back(row.h, row.E2.value_or(0.0));
  }
  const auto eoc = compute_eoc(errs);
  for (size_t i = 1; i < rows.size(); ++i) rows[i].eoc = eoc[i - 1];
  return rows;
}

inline bool table_ok(const std::vector<EocRow>& rows) {
  for (const auto& r : rows)
    for (const auto& c : r.cells)
      if (!c.converged) return false;
  return true;
}

}  // namespace l1ocp
