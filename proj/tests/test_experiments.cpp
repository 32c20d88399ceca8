#include "l1ocp/experiments.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace l1ocp;

TEST(Eoc, KnownValues) {
  const auto e = compute_eoc({{0.125, 0.3075}, {0.0625, 0.1237}});
  ASSERT_EQ(e.size(), 1u);
  ASSERT_TRUE(e[0]);
  EXPECT_NEAR(*e[0], 1.3137, 1e-4);

  const auto lin = compute_eoc({{0.5, 0.5}, {0.25, 0.25}, {0.125, 0.125}});
  for (const auto& v : lin) EXPECT_NEAR(*v, 1.0, 1e-14);
}

TEST(Eoc, UndefinedAndInvalid) {
  const auto e = compute_eoc({{0.5, 0.1}, {0.25, 0.0}, {0.125, 0.01}});
  EXPECT_FALSE(e[0]);
  EXPECT_FALSE(e[1]);
  EXPECT_THROW(compute_eoc({{0.5, 0.1}, {0.5, 0.2}}), std::invalid_argument);
  EXPECT_TRUE(compute_eoc({{0.5, 0.1}}).empty());
}

TEST(ControlError, ConstantAndIdentical) {
  const Mesh m = build_mesh(3);
  const Vector zero = Vector::Zero(m.n_interior);
  EXPECT_NEAR(l2_control_error(m, zero, [](double, double) { return -0.7; }), 0.7, 1e-13);

  const Vector v = Vector::LinSpaced(m.n_interior, -1.0, 1.0);
  EXPECT_EQ(l2_control_error(m, v, m, v, assemble_mass(m)), 0.0);
}

TEST(ControlError, FineGridInjectionIsExactForP1) {
  // a coarse P1 function injected into a nested mesh is the same function
  const Mesh coarse = build_mesh(3), fine = build_mesh(5);
  const ScalarField f = [](double x, double y) { return std::sin(std::numbers::pi * x) * y * (1.0 - y); };
  const Vector uc = interpolate_field(coarse, f);
  const Vector full = coarse.extend_by_zero(uc);
  Vector uf(fine.n_interior);
  for (int i = 0; i < fine.n_interior; ++i) {
    const auto& p = fine.nodes[fine.dof_node[i]];
    uf[i] = eval_p1(coarse, full, p[0], p[1]);
  }
  EXPECT_LT(l2_control_error(coarse, uc, fine, uf, assemble_mass(fine)), 1e-14);
  EXPECT_THROW(l2_control_error(fine, uf, coarse, uc, assemble_mass(coarse)), std::invalid_argument);
}

TEST(ConstructedExample, LaplaciansMatchFiniteDifferences) {
  const ExactSolution ex = constructed_solution(default_params(ExampleId::constructed));
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> U(0.1, 0.9);
  const double d = 1e-3;
  auto fd = [d](const ScalarField& f, double x, double y) {
    return -(f(x + d, y) + f(x - d, y) + f(x, y + d) + f(x, y - d) - 4.0 * f(x, y)) / (d * d);
  };
  for (int k = 0; k < 50; ++k) {
    const double x = U(rng), y = U(rng);
    EXPECT_NEAR(fd(ex.y_star, x, y), ex.neg_laplace_y(x, y), 1e-3 * (1.0 + std::abs(ex.neg_laplace_y(x, y))));
    EXPECT_NEAR(fd(ex.p_star, x, y), ex.neg_laplace_p(x, y), 1e-3 * (1.0 + std::abs(ex.neg_laplace_p(x, y))));
  }
}

TEST(ConstructedExample, ExactControlSatisfiesProjectionFormula) {
  const RegularizerParams prm = default_params(ExampleId::constructed);
  const ExactSolution ex = constructed_solution(prm);
  for (double x : {0.1, 0.3, 0.55, 0.8})
    for (double y : {0.05, 0.2, 0.6, 0.9}) {
      const double p = ex.p_star(x, y);
      const double u = ex.u_star(x, y);
      EXPECT_GE(u, prm.a);
      EXPECT_LE(u, prm.b);
      if (std::abs(p) <= prm.beta) EXPECT_EQ(u, 0.0);
      if (u > prm.a && u < prm.b && u != 0.0) EXPECT_NEAR(prm.alpha * u, p - std::copysign(prm.beta, p), 1e-14);
    }
}

TEST(Instances, DataAndDeterminism) {
  const Instance a = build_example2(4), b = build_example2(4);
  EXPECT_EQ(a.problem.yc.norm(), 0.0);
  EXPECT_GT(a.problem.yd.norm(), 0.0);
  EXPECT_EQ(Eigen::MatrixXd(a.problem.K), Eigen::MatrixXd(b.problem.K));
  EXPECT_EQ(Eigen::MatrixXd(a.problem.M), Eigen::MatrixXd(b.problem.M));
  EXPECT_EQ(a.problem.yd, b.problem.yd);
  EXPECT_FALSE(a.exact);

  const Instance c = build_example1(3);
  EXPECT_TRUE(c.exact);
  EXPECT_GT(c.problem.yd.norm(), 0.0);
  EXPECT_DOUBLE_EQ(c.problem.alpha, 0.5);
  EXPECT_THROW(example_from_string("unknown"), std::invalid_argument);
}

TEST(Instances, InterpolantBeatsDiscreteSolution) {
  for (int level : {3, 4, 5}) {
    const Instance inst = build_example1(level);
    SolverConfig c;
    c.tol = 1e-10;
    const ConvergenceReport r = solve_two_phase(inst.problem, c);
    ASSERT_TRUE(r.converged);
    const double ei = l2_control_error(inst.mesh, interpolate_field(inst.mesh, inst.exact->u_star),
                                       inst.exact->u_star);
    const double es = l2_control_error(inst.mesh, r.final_state.u, inst.exact->u_star);
    EXPECT_LT(ei, es) << "level " << level;
  }
}

TEST(Instances, InterpolantRateReflectsKinks) {
  // gradient jumps of u* along curves cap the P1 interpolation rate at 3/2
  const ExactSolution ex = constructed_solution(default_params(ExampleId::constructed));
  std::vector<std::pair<double, double>> interp;
  for (int level : {5, 6, 7}) {
    const Mesh m = build_mesh(level);
    interp.emplace_back(m.h, l2_control_error(m, interpolate_field(m, ex.u_star), ex.u_star));
  }
  for (const auto& v : compute_eoc(interp)) {
    EXPECT_GT(*v, 1.2);
    EXPECT_LT(*v, 1.8);
  }
}

TEST(Table, SingleCell) {
  ExperimentPlan plan;
  plan.levels = {3};
  plan.solvers = {{SolverKind::apg, {}}};
  const auto rows = run_table(plan);
  ASSERT_EQ(rows.size(), 1u);
  ASSERT_EQ(rows[0].cells.size(), 1u);
  EXPECT_TRUE(rows[0].cells[0].converged);
  EXPECT_TRUE(rows[0].E2);
  EXPECT_FALSE(rows[0].eoc);
  EXPECT_EQ(rows[0].n_dofs, 49);
}

TEST(Table, ParallelMatchesSerialAndRecordsFailures) {
  ExperimentPlan plan;
  plan.levels = {2, 3, 4};
  SolverEntry broken{SolverKind::ihadmm, {}};
  broken.config.max_iter = 1;
  plan.solvers = {{SolverKind::two_phase, {}}, broken};
  const auto serial = run_table(plan, 1);
  const auto parallel = run_table(plan, 3);
  ASSERT_EQ(serial.size(), 3u);
  for (size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].E2, parallel[i].E2);
    EXPECT_EQ(serial[i].eoc, parallel[i].eoc);
    for (size_t j = 0; j < 2; ++j) {
      EXPECT_EQ(serial[i].cells[j].iterations, parallel[i].cells[j].iterations);
      EXPECT_EQ(serial[i].cells[j].eta, parallel[i].cells[j].eta);
    }
    EXPECT_TRUE(serial[i].cells[0].converged);
    EXPECT_FALSE(serial[i].cells[1].converged);
  }
  EXPECT_FALSE(table_ok(serial));
  EXPECT_TRUE(serial[2].eoc);
}

TEST(Table, RejectsBadPlans) {
  ExperimentPlan plan;
  plan.solvers = {{SolverKind::apg, {}}};
  EXPECT_THROW(run_table(plan), std::invalid_argument);
  plan.levels = {4, 3};
  EXPECT_THROW(run_table(plan), std::invalid_argument);
  plan.levels = {3};
  plan.reference_level = 3;
  EXPECT_THROW(run_table(plan), std::invalid_argument);
}

TEST(Sparsity, ZeroFractionIsPositiveAndStable) {
  std::vector<double> frac;
  for (int level : {4, 5, 6}) {
    const Instance inst = build_example1(level);
    SolverConfig c;
    c.tol = 1e-10;
    const ConvergenceReport r = solve_two_phase(inst.problem, c);
    ASSERT_TRUE(r.converged);
    const Vector& z = r.final_state.z;
    frac.push_back(static_cast<double>((z.array() == 0.0).count()) / z.size());
  }
  for (double f : frac) EXPECT_GT(f, 0.2);
  EXPECT_LT(std::abs(frac[2] - frac[1]), std::abs(frac[1] - frac[0]) + 0.02);
}

TEST(SolutionCsv, WritesEveryNode) {
  const Mesh m = build_mesh(2);
  std::ostringstream os;
  write_solution_csv(os, m, Vector::Ones(m.n_interior));
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "x,y,u");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, static_cast<int>(m.nodes.size()));
}
