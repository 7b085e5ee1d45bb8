#pragma once

#include <Eigen/Dense>

#include "fedgrid/grid/measurement.hpp"
#include "fedgrid/grid/network.hpp"

namespace fedgrid::grid {

struct PowerFlowOptions {
  double tolerance = 1e-10;  // max abs mismatch, per-unit
  int max_iterations = 50;
};

struct PowerFlowResult {
  StateVector state;
  int iterations = 0;
  bool converged = false;
};

// Newton-Raphson power flow with every non-slack bus as a PQ bus. `net_load_p`
// and `net_load_q` are per-unit net loads per bus (the slack entries are
// ignored). Never throws on divergence; callers check `converged`.
PowerFlowResult solve_power_flow(const NetworkCase& net, const Eigen::VectorXd& net_load_p,
                                 const Eigen::VectorXd& net_load_q,
                                 const PowerFlowOptions& options = {});

// Base-case loads straight from the case file.
PowerFlowResult solve_base_case(const NetworkCase& net, const PowerFlowOptions& options = {});

}  // namespace fedgrid::grid
