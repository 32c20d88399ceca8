#pragma once
// Umbrella header.

#include "l1ocp/sparse_linalg.hpp"
#include "l1ocp/mesh_fem.hpp"
#include "l1ocp/prox_kkt.hpp"
#include "l1ocp/solvers.hpp"
#include "l1ocp/experiments.hpp"
#include "l1ocp/oracle.hpp"
#include "l1ocp/config.hpp"
