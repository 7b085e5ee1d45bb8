#include "fedgrid/estimation/wls.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>

#include "fedgrid/error.hpp"

namespace fedgrid::estimation {

namespace {

void check_measurements(const grid::MeasurementVector& z, const grid::MeasurementSchema& schema) {
  if (static_cast<std::size_t>(z.size()) != schema.size())
    throw Error(ErrorCode::kDimension, "measurement vector has " + std::to_string(z.size()) +
                                           " entries, schema has " +
                                           std::to_string(schema.size()));
}

double weighted_objective(const Eigen::VectorXd& r, const Eigen::VectorXd& w) {
  return (r.array().square() * w.array()).sum();
}

bool well_conditioned(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return llt.info() == Eigen::Success && llt.rcond() >= 1e-13;
}

}  // namespace

EstimationResult wls_estimate(const grid::MeasurementVector& z, const grid::NetworkCase& net,
                              const grid::MeasurementSchema& schema,
                              const grid::StateVector& init, const WlsOptions& options) {
  check_measurements(z, schema);
  grid::check_dimensions(init, net);
  if ((init.voltage_mag.array() <= 0.0).any())
    throw Error(ErrorCode::kInvalidArgument, "initial state has non-positive voltage magnitude");
  if (schema.size() < net.num_states())
    throw Error(ErrorCode::kSingular, "unobservable: I = " + std::to_string(schema.size()) +
                                          " < J = " + std::to_string(net.num_states()));

  const Eigen::VectorXd w = schema.weights();
  Eigen::VectorXd x = init.to_flat(net);
  grid::StateVector state = init;
  Eigen::VectorXd r = z - grid::measurement_function(state, net, schema);
  double objective = weighted_objective(r, w);

  EstimationResult result;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Eigen::MatrixXd H = grid::measurement_jacobian(state, net, schema);
    const Eigen::MatrixXd gain = H.transpose() * w.asDiagonal() * H;
    Eigen::LLT<Eigen::MatrixXd> llt(gain);
    if (!well_conditioned(llt)) {
      // Ill-conditioned at the start: the schema itself is unobservable.
      if (it == 1)
        throw Error(ErrorCode::kSingular,
                    "WLS gain matrix is singular (system unobservable under this schema)");
      // Mid-iteration (iterates near collapsed voltages): Marquardt damping.
      const double scale = gain.diagonal().maxCoeff();
      const auto identity = Eigen::MatrixXd::Identity(gain.rows(), gain.cols());
      for (double lambda = 1e-12; !well_conditioned(llt); lambda *= 10.0) {
        if (lambda > 1.0)
          throw Error(ErrorCode::kSingular, "WLS gain matrix stayed singular under damping");
        llt.compute(gain + lambda * scale * identity);
      }
    }
    Eigen::VectorXd dx = llt.solve(H.transpose() * (w.asDiagonal() * r));
    // Trust cap on magnitude updates; full Gauss-Newton steps from a flat
    // start can otherwise drive some voltage to ~0 where H degenerates.
    const auto mags = dx.tail(static_cast<Eigen::Index>(net.num_buses()));
    const double max_dv = mags.lpNorm<Eigen::Infinity>();
    if (max_dv > options.max_voltage_step) dx *= options.max_voltage_step / max_dv;

    // Step-halving keeps the objective non-increasing.
    double alpha = 1.0;
    Eigen::VectorXd x_new;
    grid::StateVector trial;
    Eigen::VectorXd r_new;
    double obj_new = 0.0;
    bool accepted = false;
    for (int h = 0; h <= options.max_step_halvings; ++h, alpha *= 0.5) {
      x_new = x + alpha * dx;
      trial = grid::StateVector::from_flat(x_new, net);
      if ((trial.voltage_mag.array() <= 0.0).any()) continue;
      r_new = z - grid::measurement_function(trial, net, schema);
      obj_new = weighted_objective(r_new, w);
      if (std::isfinite(obj_new) && obj_new <= objective) {
        accepted = true;
        break;
      }
    }
    result.iterations = it;
    const double step_norm = (alpha * dx).lpNorm<Eigen::Infinity>();
    if (!accepted) {
      // No descent along the Gauss-Newton direction: at a stationary point
      // to working precision if the full step was already tiny.
      result.converged = dx.lpNorm<Eigen::Infinity>() < options.tolerance;
      break;
    }
    x = x_new;
    state = trial;
    r = r_new;
    objective = obj_new;
    if (step_norm < options.tolerance) {
      result.converged = true;
      break;
    }
  }

  result.estimated_state = state;
  result.objective = objective;
  result.residual_norm = std::sqrt(objective);
  return result;
}

EstimationResult wls_estimate(const grid::MeasurementVector& z, const grid::NetworkCase& net,
                              const grid::MeasurementSchema& schema) {
  return wls_estimate(z, net, schema, grid::StateVector::flat(net));
}

double residual_norm(const grid::MeasurementVector& z, const grid::StateVector& x_hat,
                     const grid::NetworkCase& net, const grid::MeasurementSchema& schema) {
  check_measurements(z, schema);
  const Eigen::VectorXd r = z - grid::measurement_function(x_hat, net, schema);
  return std::sqrt(weighted_objective(r, schema.weights()));
}

double chi_square_threshold(std::size_t dof, double confidence) {
  if (dof < 1) throw Error(ErrorCode::kInvalidArgument, "chi-square dof must be >= 1");
  if (!(confidence > 0.0 && confidence < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "confidence must lie in (0, 1)");
  boost::math::chi_squared dist(static_cast<double>(dof));
  return std::sqrt(boost::math::quantile(dist, confidence));
}

BddConfig BddConfig::derive(const grid::NetworkCase& net, const grid::MeasurementSchema& schema,
                            double confidence) {
  if (schema.size() <= net.num_states())
    throw Error(ErrorCode::kInvalidArgument, "BDD needs I > J for a positive dof");
  BddConfig config;
  config.confidence = confidence;
  config.degrees_of_freedom = schema.size() - net.num_states();
  config.threshold = chi_square_threshold(config.degrees_of_freedom, confidence);
  return config;
}

BddConfig BddConfig::with_threshold(double threshold, std::size_t dof) {
  BddConfig config;
  config.threshold = threshold;
  config.degrees_of_freedom = dof;
  config.validate();
  return config;
}

void BddConfig::validate() const {
  if (!(confidence > 0.0 && confidence < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "BDD confidence must lie in (0, 1)");
  if (!(threshold > 0.0) || !std::isfinite(threshold))
    throw Error(ErrorCode::kInvalidArgument, "BDD threshold must be > 0");
}

BddOutcome bdd_check(const grid::MeasurementVector& z, const grid::NetworkCase& net,
                     const grid::MeasurementSchema& schema, const BddConfig& config) {
  config.validate();
  BddOutcome out;
  out.estimate = wls_estimate(z, net, schema);
  out.verdict = out.estimate.residual_norm > config.threshold ? BddVerdict::kFlagged
                                                              : BddVerdict::kNormal;
  return out;
}

}  // namespace fedgrid::estimation
