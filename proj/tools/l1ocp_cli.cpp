// l1ocp: batch driver for the sparse optimal control solvers.
//
//   l1ocp solve           --config run.json [--level L] [--out DIR]
//   l1ocp table           --config run.json [--jobs N]  [--out DIR]
//   l1ocp export-matrices --level L [--out DIR]
//
// Exit codes: 0 success, 1 solver failure, 2 usage or configuration error.

#include "l1ocp/config.hpp"
#include "l1ocp/l1ocp.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_usage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json residual_json(const l1ocp::KktResidual& r) {
  json parts = json::array();
  for (int i = 0; i < r.count; ++i) parts.push_back(r[i]);
  return parts;
}

int cmd_solve(const std::string& config_path, std::optional<int> level, const fs::path& out) {
  const l1ocp::RunConfig rc = l1ocp::load_config(config_path);
  const l1ocp::ExperimentPlan& plan = rc.experiment;
  const int lvl = level.value_or(plan.levels.front());
  if (lvl < 1 || lvl > 10) throw UsageError("level must lie in [1, 10]");
  const l1ocp::SolverEntry& entry = plan.solvers.front();
  fs::create_directories(out);

  spdlog::info("solve: {} level {} with {}", l1ocp::to_string(plan.example), lvl, l1ocp::to_string(entry.kind));
  const l1ocp::Instance inst = l1ocp::build_instance(plan.example, lvl, plan.params);
  l1ocp::SolverConfig cfg = entry.config;
  cfg.observer = [](int k, const l1ocp::IterateState&) { spdlog::debug("iteration {}", k); };
  const l1ocp::ConvergenceReport rep = l1ocp::run_solver(entry.kind, inst.problem, cfg);

  {
    auto os = open_out(out / "convergence.csv");
    l1ocp::write_convergence_csv(os, rep);
  }
  {
    auto os = open_out(out / "solution.csv");
    l1ocp::write_solution_csv(os, inst.mesh, rep.final_state.u);
  }

  const l1ocp::Vector& u = rep.final_state.u;
  json j;
  j["example"] = l1ocp::to_string(plan.example);
  j["level"] = lvl;
  j["h"] = inst.problem.h;
  j["n_dofs"] = inst.problem.size();
  j["solver"] = rep.solver;
  j["converged"] = rep.converged;
  j["failure"] = rep.failure;
  j["iterations"] = rep.iterations;
  j["phase_iterations"] = rep.phase_iterations;
  j["final_eta"] = rep.final_eta();
  j["eta_parts"] = rep.eta_history.empty() ? json::array() : residual_json(rep.eta_history.back());
  const l1ocp::Vector& z = rep.final_state.z;
  const l1ocp::Factorization Kf(inst.problem.K, l1ocp::Factorization::Kind::ldlt);
  j["objective"] = l1ocp::objective(inst.problem, Kf, u);
  j["zero_fraction"] = z.size() ? static_cast<double>((z.array() == 0.0).count()) / z.size() : 0.0;
  j["E2"] = inst.exact ? json(l1ocp::l2_control_error(inst.mesh, u, inst.exact->u_star)) : json(nullptr);
  int inner = 0;
  for (const auto& s : rep.inner_stats) inner += s.iterations;
  j["inner_iterations"] = inner;
  j["wall_time"] = rep.wall_time;
  j["config"] = l1ocp::to_json(rc);
  {
    auto os = open_out(out / "report.json");
    os << std::setw(2) << j << '\n';
  }

  if (!rep.converged) {
    spdlog::error("solver did not converge: {}", rep.failure.empty() ? "iteration limit" : rep.failure);
    return exit_failure;
  }
  spdlog::info("converged in {} iterations, eta = {:.3e}", rep.iterations, rep.final_eta());
  return exit_ok;
}

/// Column prefixes, unique even when a solver appears twice.
std::vector<std::string> column_names(const l1ocp::ExperimentPlan& plan) {
  std::vector<std::string> names;
  std::map<std::string, int> seen;
  for (const auto& s : plan.solvers) {
    const std::string base = l1ocp::to_string(s.kind);
    const int n = ++seen[base];
    names.push_back(n == 1 ? base : base + "_" + std::to_string(n));
  }
  return names;
}

void write_table_csv(std::ostream& os, const l1ocp::ExperimentPlan& plan, const std::vector<l1ocp::EocRow>& rows) {
  const auto names = column_names(plan);
  os << "level,h,n_dofs,E2,EOC";
  for (const auto& n : names)
    os << ',' << n << "_iter," << n << "_phase1_iter," << n << "_phase2_iter," << n << "_eta," << n << "_E2,"
       << n << "_zero_fraction," << n << "_converged";
  os << '\n' << std::setprecision(10);
  auto opt = [&os](const std::optional<double>& v) {
    if (v) os << *v;
  };
  for (const auto& r : rows) {
    os << r.level << ',' << r.h << ',' << r.n_dofs << ',';
    opt(r.E2);
    os << ',';
    opt(r.eoc);
    for (const auto& c : r.cells) {
      os << ',' << c.iterations << ',';
      if (c.phase_iterations.size() == 2) os << c.phase_iterations[0];
      os << ',';
      if (c.phase_iterations.size() == 2) os << c.phase_iterations[1];
      os << ',' << c.eta << ',';
      opt(c.E2);
      os << ',' << c.zero_fraction << ',' << (c.converged ? 1 : 0);
    }
    os << '\n';
  }
}

void write_timings_csv(std::ostream& os, const l1ocp::ExperimentPlan& plan, const std::vector<l1ocp::EocRow>& rows) {
  const auto names = column_names(plan);
  os << "level";
  for (const auto& n : names) os << ',' << n << "_seconds";
  os << '\n' << std::setprecision(6);
  for (const auto& r : rows) {
    os << r.level;
    for (const auto& c : r.cells) os << ',' << c.wall_time;
    os << '\n';
  }
}

json table_json(const l1ocp::RunConfig& rc, const std::vector<l1ocp::EocRow>& rows) {
  const auto names = column_names(rc.experiment);
  json j;
  j["config"] = l1ocp::to_json(rc);
  j["rows"] = json::array();
  for (const auto& r : rows) {
    json row;
    row["level"] = r.level;
    row["h"] = r.h;
    row["n_dofs"] = r.n_dofs;
    row["E2"] = optional_json(r.E2);
    row["EOC"] = optional_json(r.eoc);
    row["cells"] = json::object();
    for (size_t i = 0; i < r.cells.size(); ++i) {
      const auto& c = r.cells[i];
      row["cells"][names[i]] = {{"solver", c.solver},
                                {"iterations", c.iterations},
                                {"phase_iterations", c.phase_iterations},
                                {"eta", c.eta},
                                {"E2", optional_json(c.E2)},
                                {"zero_fraction", c.zero_fraction},
                                {"converged", c.converged},
                                {"failure", c.failure}};
    }
    j["rows"].push_back(row);
  }
  return j;
}

int cmd_table(const std::string& config_path, int jobs, const fs::path& out) {
  if (jobs < 1) throw UsageError("--jobs must be >= 1");
  const l1ocp::RunConfig rc = l1ocp::load_config(config_path);
  fs::create_directories(out);
  spdlog::info("table: {} levels, {} solvers, {} jobs", rc.experiment.levels.size(), rc.experiment.solvers.size(), jobs);
  const auto rows = l1ocp::run_table(rc.experiment, jobs);
  {
    auto os = open_out(out / "table.csv");
    write_table_csv(os, rc.experiment, rows);
  }
  {
    auto os = open_out(out / "table_timings.csv");
    write_timings_csv(os, rc.experiment, rows);
  }
  {
    auto os = open_out(out / "table.json");
    os << std::setw(2) << table_json(rc, rows) << '\n';
  }
  for (const auto& r : rows)
    for (const auto& c : r.cells)
      if (!c.converged) spdlog::warn("level {} {}: {}", r.level, c.solver, c.failure.empty() ? "not converged" : c.failure);
  return l1ocp::table_ok(rows) ? exit_ok : exit_failure;
}

int cmd_export(int level, const fs::path& out) {
  if (level < 1 || level > 10) throw UsageError("level must lie in [1, 10]");
  fs::create_directories(out);
  const l1ocp::Instance inst = l1ocp::build_instance(l1ocp::ExampleId::constructed, level,
                                                     l1ocp::default_params(l1ocp::ExampleId::constructed));
  l1ocp::write_matrix_market((out / "K.mtx").string(), inst.problem.K, true);
  l1ocp::write_matrix_market((out / "M.mtx").string(), inst.problem.M, true);
  l1ocp::write_matrix_market((out / "W.mtx").string(), l1ocp::diagonal_matrix(inst.problem.W), true);
  spdlog::info("wrote K, M, W for level {} to {}", level, out.string());
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse elliptic optimal control solvers"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  std::string config_path, out_dir = ".";
  std::optional<int> level;
  int jobs = 1;

  app.fallthrough();
  auto* solve = app.add_subcommand("solve", "run one solver on one level");
  solve->add_option("--config", config_path, "run configuration (JSON)")->required();
  solve->add_option("--level", level, "level to solve (default: first configured level)");
  solve->add_option("--out", out_dir, "output directory");

  auto* table = app.add_subcommand("table", "run every configured (level, solver) cell");
  table->add_option("--config", config_path, "run configuration (JSON)")->required();
  table->add_option("--jobs", jobs, "concurrent cells");
  table->add_option("--out", out_dir, "output directory");

  auto* exp = app.add_subcommand("export-matrices", "write K, M and W in Matrix Market format");
  exp->add_option("--level", level, "mesh level")->required();
  exp->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_ok : exit_usage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%l] %v");

  try {
    if (solve->parsed()) return cmd_solve(config_path, level, out_dir);
    if (table->parsed()) return cmd_table(config_path, jobs, out_dir);
    return cmd_export(*level, out_dir);
  } catch (const l1ocp::ConfigError& e) {
    spdlog::error("{}", e.what());
    return exit_usage;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return exit_usage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return exit_failure;
  }
}
