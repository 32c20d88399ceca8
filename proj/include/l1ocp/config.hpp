#pragma once
/// \file config.hpp
/// \brief JSON run configuration: parsing with schema checks, serialization
///        and structural equality (for round-trip tests).

#include "l1ocp/experiments.hpp"

#include "json.hpp"

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace l1ocp {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Example 2 is measured against this level unless the config says otherwise.
constexpr int default_reference_level = 8;

struct RunConfig {
  ExperimentPlan experiment;
  std::uint64_t seed = 0;
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: key '") + key + "' has the wrong type");
  }
}

inline SolverEntry parse_solver(const json& j) {
  if (!j.is_object()) throw ConfigError("config: solver entries must be objects");
  reject_unknown(j,
                 {"name", "tol", "max_iter", "sigma", "tau", "eps0", "eps_decay", "inner_backend", "pdas_c",
                  "phase1_tol", "two_phase_retries", "pdas_probe_iter",
                  "gmres_restart", "gmres_max_iter", "record_Rh"},
                 "solver");
  if (!j.contains("name")) throw ConfigError("config: solver entry needs a name");
  SolverEntry e;
  try {
    e.kind = solver_kind_from_string(get_or<std::string>(j, "name", ""));
    e.config.inner_backend = saddle_backend_from_string(get_or<std::string>(j, "inner_backend", "direct"));
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  SolverConfig& c = e.config;
  if (j.contains("sigma")) c.sigma = get_or<double>(j, "sigma", 0.0);
  if (j.contains("tau")) c.tau = get_or<double>(j, "tau", 0.0);
  c.tol = get_or(j, "tol", c.tol);
  c.max_iter = get_or(j, "max_iter", c.max_iter);
  c.eps0 = get_or(j, "eps0", c.eps0);
  c.eps_decay = get_or(j, "eps_decay", c.eps_decay);
  c.pdas_c = get_or(j, "pdas_c", c.pdas_c);
  c.phase1_tol = get_or(j, "phase1_tol", c.phase1_tol);
  c.two_phase_retries = get_or(j, "two_phase_retries", c.two_phase_retries);
  c.pdas_probe_iter = get_or(j, "pdas_probe_iter", c.pdas_probe_iter);
  c.saddle.gmres_restart = get_or(j, "gmres_restart", c.saddle.gmres_restart);
  c.saddle.gmres_max_iter = get_or(j, "gmres_max_iter", c.saddle.gmres_max_iter);
  c.record_Rh = get_or(j, "record_Rh", c.record_Rh);
  if (c.saddle.gmres_restart < 1 || c.saddle.gmres_max_iter < 1)
    throw ConfigError("config: gmres_restart and gmres_max_iter must be >= 1");
  try {
    c.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  if (e.kind == SolverKind::two_phase && c.phase1_tol < c.tol)
    throw ConfigError("config: phase1_tol must be >= tol");
  return e;
}

inline json solver_to_json(const SolverEntry& e) {
  const SolverConfig& c = e.config;
  json j;
  j["name"] = to_string(e.kind);
  j["tol"] = c.tol;
  j["max_iter"] = c.max_iter;
  if (c.sigma) j["sigma"] = *c.sigma;
  if (c.tau) j["tau"] = *c.tau;
  j["eps0"] = c.eps0;
  j["eps_decay"] = c.eps_decay;
  j["inner_backend"] = to_string(c.inner_backend);
  j["pdas_c"] = c.pdas_c;
  j["phase1_tol"] = c.phase1_tol;
  j["two_phase_retries"] = c.two_phase_retries;
  j["pdas_probe_iter"] = c.pdas_probe_iter;
  j["gmres_restart"] = c.saddle.gmres_restart;
  j["gmres_max_iter"] = c.saddle.gmres_max_iter;
  j["record_Rh"] = c.record_Rh;
  return j;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::get_or;
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  detail::reject_unknown(j, {"example", "levels", "params", "solvers", "reference_level", "seed"}, "config");
  RunConfig rc;
  ExperimentPlan& s = rc.experiment;
  try {
    s.example = example_from_string(get_or<std::string>(j, "example", "constructed"));
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  s.levels = get_or<std::vector<int>>(j, "levels", {});
  s.params = default_params(s.example);
  if (j.contains("params")) {
    const auto& p = j.at("params");
    if (!p.is_object()) throw ConfigError("config: params must be an object");
    detail::reject_unknown(p, {"alpha", "beta", "a", "b"}, "params");
    s.params.alpha = get_or(p, "alpha", s.params.alpha);
    s.params.beta = get_or(p, "beta", s.params.beta);
    s.params.a = get_or(p, "a", s.params.a);
    s.params.b = get_or(p, "b", s.params.b);
  }
  if (!(s.params.alpha > 0.0) || s.params.beta < 0.0 || !(s.params.a < 0.0 && 0.0 < s.params.b))
    throw ConfigError("config: params need alpha > 0, beta >= 0 and a < 0 < b");
  if (!j.contains("solvers") || !j.at("solvers").is_array()) throw ConfigError("config: solvers must be a list");
  for (const auto& e : j.at("solvers")) s.solvers.push_back(detail::parse_solver(e));
  if (j.contains("reference_level"))
    s.reference_level = get_or<int>(j, "reference_level", 0);
  else if (s.example == ExampleId::stadler)
    s.reference_level = default_reference_level;
  rc.seed = get_or<std::uint64_t>(j, "seed", 0);
  try {
    s.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  return rc;
}

inline RunConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: malformed JSON: ") + ex.what());
  }
  return parse_config(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

inline nlohmann::json to_json(const RunConfig& rc) {
  const ExperimentPlan& s = rc.experiment;
  nlohmann::json j;
  j["example"] = to_string(s.example);
  j["levels"] = s.levels;
  j["params"] = {{"alpha", s.params.alpha}, {"beta", s.params.beta}, {"a", s.params.a}, {"b", s.params.b}};
  j["solvers"] = nlohmann::json::array();
  for (const auto& e : s.solvers) j["solvers"].push_back(detail::solver_to_json(e));
  if (s.reference_level) j["reference_level"] = *s.reference_level;
  j["seed"] = rc.seed;
  return j;
}

/// Field-wise equality; observers and log paths are runtime state and ignored.
inline bool same_config(const RunConfig& x, const RunConfig& y) {
  const ExperimentPlan& a = x.experiment;
  const ExperimentPlan& b = y.experiment;
  auto same_params = [](const RegularizerParams& p, const RegularizerParams& q) {
    return p.alpha == q.alpha && p.beta == q.beta && p.a == q.a && p.b == q.b;
  };
  auto same_solver = [](const SolverEntry& p, const SolverEntry& q) {
    const SolverConfig& c = p.config;
    const SolverConfig& d = q.config;
    return p.kind == q.kind && c.sigma == d.sigma && c.tau == d.tau && c.tol == d.tol && c.max_iter == d.max_iter &&
           c.eps0 == d.eps0 && c.eps_decay == d.eps_decay && c.inner_backend == d.inner_backend &&
           c.pdas_c == d.pdas_c && c.phase1_tol == d.phase1_tol &&
           c.two_phase_retries == d.two_phase_retries && c.pdas_probe_iter == d.pdas_probe_iter &&
           c.record_Rh == d.record_Rh &&
           c.saddle.gmres_restart == d.saddle.gmres_restart && c.saddle.gmres_max_iter == d.saddle.gmres_max_iter;
  };
  if (a.example != b.example || a.levels != b.levels || !same_params(a.params, b.params) ||
      a.reference_level != b.reference_level || x.seed != y.seed || a.solvers.size() != b.solvers.size())
    return false;
  for (size_t i = 0; i < a.solvers.size(); ++i)
    if (!same_solver(a.solvers[i], b.solvers[i])) return false;
  return true;
}

}  // namespace l1ocp
