#include "fedgrid/grid/power_flow.hpp"

#include <cmath>
#include <vector>

#include "fedgrid/error.hpp"

namespace fedgrid::grid {

PowerFlowResult solve_power_flow(const NetworkCase& net, const Eigen::VectorXd& net_load_p,
                                 const Eigen::VectorXd& net_load_q,
                                 const PowerFlowOptions& options) {
  const std::size_t n = net.num_buses();
  if (static_cast<std::size_t>(net_load_p.size()) != n ||
      static_cast<std::size_t>(net_load_q.size()) != n)
    throw Error(ErrorCode::kDimension, "power flow: load vectors must have one entry per bus");

  // Injection rows for every non-slack bus; unknowns are the matching angle
  // and magnitude columns of the estimation state.
  std::vector<MeasurementEntry> entries;
  std::vector<Eigen::Index> columns;
  for (std::size_t bus = 0; bus < n; ++bus) {
    if (bus == net.slack_bus()) continue;
    entries.push_back({MeasurementKind::kPInjection, bus, 0, BranchEnd::kFrom, 1.0});
    columns.push_back(static_cast<Eigen::Index>(*net.angle_column(bus)));
  }
  for (std::size_t bus = 0; bus < n; ++bus) {
    if (bus == net.slack_bus()) continue;
    entries.push_back({MeasurementKind::kQInjection, bus, 0, BranchEnd::kFrom, 1.0});
    columns.push_back(static_cast<Eigen::Index>(net.voltage_column(bus)));
  }
  const MeasurementSchema schema(entries);
  const auto dim = static_cast<Eigen::Index>(entries.size());

  Eigen::VectorXd target(dim);
  for (Eigen::Index r = 0; r < dim; ++r) {
    const auto& e = entries[static_cast<std::size_t>(r)];
    const auto b = static_cast<Eigen::Index>(e.bus);
    target(r) = e.kind == MeasurementKind::kPInjection ? -net_load_p(b) : -net_load_q(b);
  }

  PowerFlowResult result;
  result.state = StateVector::flat(net);
  Eigen::VectorXd mismatch = target - measurement_function(result.state, net, schema);
  for (int it = 0; it <= options.max_iterations; ++it) {
    if (!mismatch.allFinite()) break;
    if (mismatch.lpNorm<Eigen::Infinity>() < options.tolerance) {
      result.converged = true;
      result.iterations = it;
      return result;
    }
    if (it == options.max_iterations) break;
    const Eigen::MatrixXd full = measurement_jacobian(result.state, net, schema);
    Eigen::MatrixXd jac(dim, dim);
    for (Eigen::Index c = 0; c < dim; ++c) jac.col(c) = full.col(columns[static_cast<std::size_t>(c)]);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    Eigen::VectorXd step = lu.solve(mismatch);
    if (!step.allFinite()) break;

    // Backtrack on the mismatch norm; large cases diverge from a flat start
    // under the undamped Newton step.
    const Eigen::VectorXd x = result.state.to_flat(net);
    const double norm = mismatch.norm();
    bool accepted = false;
    for (int h = 0; h < 20 && !accepted; ++h, step *= 0.5) {
      Eigen::VectorXd x_new = x;
      for (Eigen::Index c = 0; c < dim; ++c) x_new(columns[static_cast<std::size_t>(c)]) += step(c);
      StateVector trial = StateVector::from_flat(x_new, net);
      if ((trial.voltage_mag.array() <= 0.0).any()) continue;
      Eigen::VectorXd trial_mismatch = target - measurement_function(trial, net, schema);
      if (trial_mismatch.allFinite() && trial_mismatch.norm() < norm) {
        result.state = std::move(trial);
        mismatch = std::move(trial_mismatch);
        accepted = true;
      }
    }
    result.iterations = it + 1;
    if (!accepted) break;
  }
  result.converged = false;
  return result;
}

PowerFlowResult solve_base_case(const NetworkCase& net, const PowerFlowOptions& options) {
  const auto n = static_cast<Eigen::Index>(net.num_buses());
  Eigen::VectorXd p(n), q(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p(i) = net.buses()[static_cast<std::size_t>(i)].base_load_p;
    q(i) = net.buses()[static_cast<std::size_t>(i)].base_load_q;
  }
  return solve_power_flow(net, p, q, options);
}

}  // namespace fedgrid::grid
