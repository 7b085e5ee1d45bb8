#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedgrid/grid/measurement.hpp"
#include "fedgrid/grid/network.hpp"

namespace fedgrid::attack {

// Deviation l applied to the estimated state, in StateVector::to_flat order
// (angles in radians, magnitudes in per-unit).
struct AttackSpec {
  Eigen::VectorXd state_deviation;
  std::vector<std::size_t> target_buses;  // internal bus positions
};

enum class Strength { kWeak, kMedium, kStrong };

const char* to_string(Strength s);
Strength strength_from_string(const std::string& name);

struct AttackStrength {
  Strength label = Strength::kWeak;
  double injection_ratio = 0.0;  // mean |dP| / mean |P| over targets
  double voltage_ratio = 0.0;    // mean |dV| / 1.0 p.u. over targets
  double angle_deg = 0.0;        // mean |d theta| in degrees over targets
};

// Strong when all three exceed 30% / 10% / 5 deg; otherwise weak when any is
// below 10% / 5% / 2 deg; otherwise medium.
Strength classify_statistics(double injection_ratio, double voltage_ratio, double angle_deg);

// alpha = h(x_est + l) - h(x_est).
grid::MeasurementVector build_attack_vector(const AttackSpec& spec, const grid::StateVector& x_est,
                                            const grid::NetworkCase& net,
                                            const grid::MeasurementSchema& schema);

AttackStrength classify_strength(const AttackSpec& spec, const grid::StateVector& x_est,
                                 const grid::MeasurementVector& z,
                                 const grid::MeasurementVector& alpha,
                                 const grid::NetworkCase& net,
                                 const grid::MeasurementSchema& schema);

// Per-sample seed splitting: splitmix64 over (master, stream, index). Every
// sample draws from its own generator, so generation order is irrelevant.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

enum SeedStream : std::uint64_t {
  kNormalStream = 1,
  kCompromisedStream = 2,
  kNoiseStream = 3,
  kShuffleStream = 4,
};

// Net loads in per-unit. Each bus (P and Q separately) is Gaussian with the
// base net load as mean and variance |base|/10 measured in MW (MVAr).
struct LoadDraw {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
};
LoadDraw draw_loads(const grid::NetworkCase& net, std::uint64_t seed);

struct NormalSample {
  grid::MeasurementVector z;
  grid::StateVector state;  // power-flow solution behind z
  int redraws = 0;
};

struct GenerationOptions {
  int max_power_flow_redraws = 10;
  int attack_budget = 2000;  // rejection-sampling attempts per sample
};

NormalSample generate_normal_sample(const grid::NetworkCase& net,
                                    const grid::MeasurementSchema& schema, std::uint64_t seed,
                                    const GenerationOptions& options = {});

std::vector<grid::MeasurementVector> generate_normal_samples(
    const grid::NetworkCase& net, const grid::MeasurementSchema& schema, std::size_t count,
    std::uint64_t rng_seed, const GenerationOptions& options = {});

struct CompromisedSample {
  grid::MeasurementVector z_attacked;  // z + alpha
  grid::MeasurementVector z_base;
  grid::MeasurementVector alpha;
  AttackSpec spec;
  AttackStrength strength;
  grid::StateVector estimated_state;  // x_est the attack was built on
};

// Draws a normal sample, estimates its state, then samples localized attacks
// (1-3 adjacent non-slack buses) until one classifies as `target`.
CompromisedSample generate_compromised_sample(const grid::NetworkCase& net,
                                              const grid::MeasurementSchema& schema,
                                              Strength target, std::uint64_t seed,
                                              const GenerationOptions& options = {});

std::vector<CompromisedSample> generate_compromised_samples(
    const grid::NetworkCase& net, const grid::MeasurementSchema& schema, std::size_t count,
    Strength target, std::uint64_t rng_seed, const GenerationOptions& options = {});

struct LabeledSample {
  std::vector<double> features;
  int label = 0;  // 1 = compromised
};

// Gaussian noise with sd = level * |value| per entry; labels untouched.
std::vector<LabeledSample> add_measurement_noise(std::vector<LabeledSample> samples,
                                                 double level, std::uint64_t rng_seed);
std::vector<grid::MeasurementVector> add_measurement_noise(
    std::vector<grid::MeasurementVector> samples, double level, std::uint64_t rng_seed);

struct ClientSpec {
  int bus = 0;       // external bus number
  int branch_from = 0;  // external numbers of the selected branch
  int branch_to = 0;
};

struct FeatureLayout {
  std::vector<std::string> names;
  std::size_t size() const { return names.size(); }
  bool operator==(const FeatureLayout&) const = default;
};

struct ClientDataset {
  int client_id = 0;
  ClientSpec client;
  FeatureLayout layout;
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
};

struct PartitionSizes {
  std::size_t train_per_class = 2000;
  std::size_t test_per_class = 500;

  static PartitionSizes full() { return {10000, 1000}; }
};

// Schema indices making up a client's feature vector: P and Q injections at
// every bus, then P and Q flow of the client's branch.
struct ClientSlice {
  FeatureLayout layout;
  std::vector<std::size_t> schema_indices;
};
ClientSlice client_slice(const grid::NetworkCase& net, const grid::MeasurementSchema& schema,
                         const ClientSpec& client);

// Client c takes the c-th consecutive block of train+test samples per class
// from the pools, so clients hold disjoint samples of the same event
// distribution. Within a split, normal and compromised rows alternate.
std::vector<ClientDataset> partition_clients(
    const std::vector<grid::MeasurementVector>& normal,
    const std::vector<grid::MeasurementVector>& compromised, const grid::NetworkCase& net,
    const grid::MeasurementSchema& schema, const std::vector<ClientSpec>& clients,
    const PartitionSizes& sizes = {});

}  // namespace fedgrid::attack
