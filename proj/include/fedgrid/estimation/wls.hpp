#pragma once

#include <cstddef>

#include "fedgrid/grid/measurement.hpp"
#include "fedgrid/grid/network.hpp"

namespace fedgrid::estimation {

struct EstimationResult {
  grid::StateVector estimated_state;
  double residual_norm = 0.0;  // whitened, see residual_norm()
  int iterations = 0;
  bool converged = false;
  double objective = 0.0;  // [z - h(x)]' Y [z - h(x)]
};

struct WlsOptions {
  double tolerance = 1e-8;  // infinity norm of the accepted state update
  int max_iterations = 50;
  int max_step_halvings = 30;
  double max_voltage_step = 0.1;  // per-unit, largest magnitude change per iteration
};

// Weighted least squares state estimation by damped Gauss-Newton with
// step-halving. Throws kSingular when the gain matrix is rank deficient.
// Non-convergence is reported through `converged`, not an exception.
EstimationResult wls_estimate(const grid::MeasurementVector& z, const grid::NetworkCase& net,
                              const grid::MeasurementSchema& schema,
                              const grid::StateVector& init, const WlsOptions& options = {});

// Flat start.
EstimationResult wls_estimate(const grid::MeasurementVector& z, const grid::NetworkCase& net,
                              const grid::MeasurementSchema& schema);

// ||Y^(1/2) (z - h(x_hat))||_2. With unit weights this is the plain
// Euclidean residual; with inverse-variance weights its square follows a
// chi-square law, which is what the detection threshold assumes.
double residual_norm(const grid::MeasurementVector& z, const grid::StateVector& x_hat,
                     const grid::NetworkCase& net, const grid::MeasurementSchema& schema);

// sqrt of the chi-square quantile, so it compares against a norm.
double chi_square_threshold(std::size_t dof, double confidence);

struct BddConfig {
  double confidence = 0.99;
  double threshold = 0.0;
  std::size_t degrees_of_freedom = 0;

  // dof = I - J, threshold from the chi-square quantile.
  static BddConfig derive(const grid::NetworkCase& net, const grid::MeasurementSchema& schema,
                          double confidence = 0.99);
  // User-set threshold.
  static BddConfig with_threshold(double threshold, std::size_t dof);

  void validate() const;
};

enum class BddVerdict { kNormal, kFlagged };

struct BddOutcome {
  BddVerdict verdict = BddVerdict::kNormal;
  EstimationResult estimate;
};

// Single pass: estimate, then compare the residual norm to the threshold.
BddOutcome bdd_check(const grid::MeasurementVector& z, const grid::NetworkCase& net,
                     const grid::MeasurementSchema& schema, const BddConfig& config);

}  // namespace fedgrid::estimation
