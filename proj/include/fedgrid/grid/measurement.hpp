#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "fedgrid/grid/network.hpp"

namespace fedgrid::grid {

struct StateVector {
  Eigen::VectorXd voltage_mag;  // per-unit, one per bus
  Eigen::VectorXd voltage_ang;  // radians, one per bus; slack fixed at 0

  static StateVector flat(const NetworkCase& net);

  // Packs into the J = 2N-1 estimation vector: non-slack angles, then all
  // magnitudes.
  Eigen::VectorXd to_flat(const NetworkCase& net) const;
  static StateVector from_flat(const Eigen::VectorXd& x, const NetworkCase& net);
};

enum class MeasurementKind { kPInjection, kQInjection, kPFlow, kQFlow };

const char* to_string(MeasurementKind kind);

enum class BranchEnd { kFrom, kTo };

struct MeasurementEntry {
  MeasurementKind kind = MeasurementKind::kPInjection;
  std::size_t bus = 0;     // injections only
  std::size_t branch = 0;  // flows only
  BranchEnd end = BranchEnd::kFrom;
  double weight = 1.0;  // inverse variance

  bool is_injection() const {
    return kind == MeasurementKind::kPInjection || kind == MeasurementKind::kQInjection;
  }
};

class MeasurementSchema {
 public:
  MeasurementSchema() = default;
  explicit MeasurementSchema(std::vector<MeasurementEntry> entries);

  // P and Q injection at every bus, then P and Q flow at the from-end of
  // every branch. All entries share one standard deviation.
  static MeasurementSchema default_for(const NetworkCase& net, double sigma = 0.01);

  const std::vector<MeasurementEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const MeasurementEntry& operator[](std::size_t i) const { return entries_[i]; }

  Eigen::VectorXd weights() const;

  // Human-readable label like "P_inj@3" or "Q_flow@2->4" using external bus
  // numbers.
  std::string label(std::size_t i, const NetworkCase& net) const;

  // Throws kValidation when entries reference missing buses/branches,
  // weights are not positive, or I < J.
  void validate(const NetworkCase& net) const;

  static constexpr const char* kSchemaTag = "inj-all+flow-from/v1";

 private:
  std::vector<MeasurementEntry> entries_;
};

using MeasurementVector = Eigen::VectorXd;

// h(x): each entry evaluated from the AC power-flow equations.
MeasurementVector measurement_function(const StateVector& state, const NetworkCase& net,
                                       const MeasurementSchema& schema);

// Dense I x J analytic Jacobian of measurement_function. Columns follow
// StateVector::to_flat ordering.
Eigen::MatrixXd measurement_jacobian(const StateVector& state, const NetworkCase& net,
                                     const MeasurementSchema& schema);

void check_dimensions(const StateVector& state, const NetworkCase& net);

}  // namespace fedgrid::grid
