#include "fedgrid/attack/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fedgrid/error.hpp"
#include "fedgrid/estimation/wls.hpp"
#include "fedgrid/grid/power_flow.hpp"

namespace fedgrid::attack {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Range {
  double lo;
  double hi;
};

// Per-target magnitude ranges the sampler starts from, before rescaling.
struct StrengthProfile {
  Range angle_deg;
  Range voltage;
};

StrengthProfile profile_for(Strength s) {
  switch (s) {
    case Strength::kWeak: return {{0.2, 1.9}, {0.002, 0.03}};
    case Strength::kMedium: return {{2.2, 4.8}, {0.055, 0.095}};
    case Strength::kStrong: return {{5.5, 10.0}, {0.105, 0.15}};
  }
  return {{0.0, 0.0}, {0.0, 0.0}};
}

std::optional<std::size_t> find_p_injection(const grid::MeasurementSchema& schema,
                                            std::size_t bus) {
  for (std::size_t m = 0; m < schema.size(); ++m)
    if (schema[m].kind == grid::MeasurementKind::kPInjection && schema[m].bus == bus) return m;
  return std::nullopt;
}

std::vector<std::size_t> pick_targets(const grid::NetworkCase& net, std::mt19937_64& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t b = 0; b < net.num_buses(); ++b)
    if (b != net.slack_bus()) candidates.push_back(b);
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  const std::size_t center = candidates[pick(rng)];
  std::vector<std::size_t> neighbors;
  for (std::size_t nb : net.neighbors(center))
    if (nb != net.slack_bus()) neighbors.push_back(nb);
  std::shuffle(neighbors.begin(), neighbors.end(), rng);
  std::uniform_int_distribution<std::size_t> count(1, 3);
  const std::size_t extra = std::min(count(rng) - 1, neighbors.size());
  std::vector<std::size_t> targets{center};
  targets.insert(targets.end(), neighbors.begin(), neighbors.begin() + static_cast<long>(extra));
  std::sort(targets.begin(), targets.end());
  return targets;
}

AttackSpec sample_spec(const grid::NetworkCase& net, Strength target, std::mt19937_64& rng) {
  const auto profile = profile_for(target);
  std::uniform_real_distribution<double> ang(profile.angle_deg.lo, profile.angle_deg.hi);
  std::uniform_real_distribution<double> mag(profile.voltage.lo, profile.voltage.hi);
  std::bernoulli_distribution sign(0.5);
  AttackSpec spec;
  spec.target_buses = pick_targets(net, rng);
  spec.state_deviation = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_states()));
  for (std::size_t bus : spec.target_buses) {
    const double a = ang(rng) * kDeg * (sign(rng) ? 1.0 : -1.0);
    const double v = mag(rng) * (sign(rng) ? 1.0 : -1.0);
    spec.state_deviation(static_cast<Eigen::Index>(*net.angle_column(bus))) = a;
    spec.state_deviation(static_cast<Eigen::Index>(net.voltage_column(bus))) = v;
  }
  return spec;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

const char* to_string(Strength s) {
  switch (s) {
    case Strength::kWeak: return "weak";
    case Strength::kMedium: return "medium";
    case Strength::kStrong: return "strong";
  }
  return "?";
}

Strength strength_from_string(const std::string& name) {
  if (name == "weak") return Strength::kWeak;
  if (name == "medium") return Strength::kMedium;
  if (name == "strong") return Strength::kStrong;
  throw Error(ErrorCode::kInvalidArgument, "unknown attack strength '" + name + "'");
}

Strength classify_statistics(double injection_ratio, double voltage_ratio, double angle_deg) {
  if (injection_ratio > 0.30 && voltage_ratio > 0.10 && angle_deg > 5.0) return Strength::kStrong;
  if (injection_ratio < 0.10 || voltage_ratio < 0.05 || angle_deg < 2.0) return Strength::kWeak;
  return Strength::kMedium;
}

grid::MeasurementVector build_attack_vector(const AttackSpec& spec, const grid::StateVector& x_est,
                                            const grid::NetworkCase& net,
                                            const grid::MeasurementSchema& schema) {
  if (static_cast<std::size_t>(spec.state_deviation.size()) != net.num_states())
    throw Error(ErrorCode::kDimension,
                "attack deviation has " + std::to_string(spec.state_deviation.size()) +
                    " entries, J = " + std::to_string(net.num_states()));
  const auto attacked =
      grid::StateVector::from_flat(x_est.to_flat(net) + spec.state_deviation, net);
  return grid::measurement_function(attacked, net, schema) -
         grid::measurement_function(x_est, net, schema);
}

AttackStrength classify_strength(const AttackSpec& spec, const grid::StateVector& x_est,
                                 const grid::MeasurementVector& z,
                                 const grid::MeasurementVector& alpha,
                                 const grid::NetworkCase& net,
                                 const grid::MeasurementSchema& schema) {
  AttackStrength out;
  if (spec.target_buses.empty()) {
    out.label = classify_statistics(0.0, 0.0, 0.0);
    return out;
  }
  // Injection deltas come from alpha/z where the schema measures them,
  // otherwise from h directly.
  const auto attacked =
      grid::StateVector::from_flat(x_est.to_flat(net) + spec.state_deviation, net);
  double sum_dp = 0.0, sum_p = 0.0, sum_dv = 0.0, sum_da = 0.0;
  for (std::size_t bus : spec.target_buses) {
    if (auto m = find_p_injection(schema, bus)) {
      sum_dp += std::abs(alpha(static_cast<Eigen::Index>(*m)));
      sum_p += std::abs(z(static_cast<Eigen::Index>(*m)));
    } else {
      grid::MeasurementSchema one({{grid::MeasurementKind::kPInjection, bus, 0,
                                    grid::BranchEnd::kFrom, 1.0}});
      const double base = grid::measurement_function(x_est, net, one)(0);
      sum_dp += std::abs(grid::measurement_function(attacked, net, one)(0) - base);
      sum_p += std::abs(base);
    }
    const auto b = static_cast<Eigen::Index>(bus);
    sum_dv += std::abs(attacked.voltage_mag(b) - x_est.voltage_mag(b));
    sum_da += std::abs(attacked.voltage_ang(b) - x_est.voltage_ang(b));
  }
  const double k = static_cast<double>(spec.target_buses.size());
  out.injection_ratio = sum_p > 1e-12 ? sum_dp / sum_p
                                      : (sum_dp > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  out.voltage_ratio = sum_dv / k;
  out.angle_deg = sum_da / k / kDeg;
  out.label = classify_statistics(out.injection_ratio, out.voltage_ratio, out.angle_deg);
  return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index);
}

LoadDraw draw_loads(const grid::NetworkCase& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto n = static_cast<Eigen::Index>(net.num_buses());
  const double base = net.base_mva();
  LoadDraw draw{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  auto sample = [&](double mean_pu) {
    // Variance is |base|/10 in MW (MVAr); convert the sd back to per-unit.
    const double sd = std::sqrt(std::abs(mean_pu) * base / 10.0) / base;
    if (sd == 0.0) return mean_pu;
    return std::normal_distribution<double>(mean_pu, sd)(rng);
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& bus = net.buses()[static_cast<std::size_t>(i)];
    draw.p(i) = sample(bus.base_load_p);
    draw.q(i) = sample(bus.base_load_q);
  }
  return draw;
}

NormalSample generate_normal_sample(const grid::NetworkCase& net,
                                    const grid::MeasurementSchema& schema, std::uint64_t seed,
                                    const GenerationOptions& options) {
  for (int attempt = 0; attempt <= options.max_power_flow_redraws; ++attempt) {
    const auto loads = draw_loads(net, derive_seed(seed, 0, static_cast<std::uint64_t>(attempt)));
    auto pf = grid::solve_power_flow(net, loads.p, loads.q);
    if (!pf.converged) continue;
    NormalSample s;
    s.z = grid::measurement_function(pf.state, net, schema);
    s.state = std::move(pf.state);
    s.redraws = attempt;
    return s;
  }
  throw Error(ErrorCode::kNumeric, "power flow diverged for " +
                                       std::to_string(options.max_power_flow_redraws + 1) +
                                       " consecutive load draws");
}

std::vector<grid::MeasurementVector> generate_normal_samples(
    const grid::NetworkCase& net, const grid::MeasurementSchema& schema, std::size_t count,
    std::uint64_t rng_seed, const GenerationOptions& options) {
  if (count == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be > 0");
  std::vector<grid::MeasurementVector> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(generate_normal_sample(net, schema, derive_seed(rng_seed, kNormalStream, i),
                                         options)
                      .z);
  return out;
}

CompromisedSample generate_compromised_sample(const grid::NetworkCase& net,
                                              const grid::MeasurementSchema& schema,
                                              Strength target, std::uint64_t seed,
                                              const GenerationOptions& options) {
  auto base = generate_normal_sample(net, schema, seed, options);
  const auto estimate = estimation::wls_estimate(base.z, net, schema);
  if (!estimate.converged)
    throw Error(ErrorCode::kNumeric, "state estimation did not converge on a normal sample");

  std::mt19937_64 rng(derive_seed(seed, 1, 0));
  int attempts = 0;
  while (attempts < options.attack_budget) {
    AttackSpec spec = sample_spec(net, target, rng);
    // Rescale toward the target band; a fresh draw after a few misses.
    for (int rescale = 0; rescale < 8 && attempts < options.attack_budget; ++rescale, ++attempts) {
      auto alpha = build_attack_vector(spec, estimate.estimated_state, net, schema);
      auto strength = classify_strength(spec, estimate.estimated_state, base.z, alpha, net, schema);
      if (strength.label == target) {
        CompromisedSample out;
        out.z_attacked = base.z + alpha;
        out.z_base = std::move(base.z);
        out.alpha = std::move(alpha);
        out.spec = std::move(spec);
        out.strength = strength;
        out.estimated_state = estimate.estimated_state;
        return out;
      }
      const bool too_weak = target == Strength::kStrong ||
                            (target == Strength::kMedium && strength.label == Strength::kWeak);
      spec.state_deviation *= too_weak ? 1.15 : 0.85;
    }
  }
  throw Error(ErrorCode::kBudgetExceeded,
              std::string("attack sampling budget exceeded for strength ") + to_string(target));
}

std::vector<CompromisedSample> generate_compromised_samples(
    const grid::NetworkCase& net, const grid::MeasurementSchema& schema, std::size_t count,
    Strength target, std::uint64_t rng_seed, const GenerationOptions& options) {
  if (count == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be > 0");
  std::vector<CompromisedSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(generate_compromised_sample(
        net, schema, target, derive_seed(rng_seed, kCompromisedStream, i), options));
  return out;
}

std::vector<LabeledSample> add_measurement_noise(std::vector<LabeledSample> samples, double level,
                                                 std::uint64_t rng_seed) {
  if (!(level >= 0.0 && level <= 0.1))
    throw Error(ErrorCode::kInvalidArgument, "noise level must lie in [0, 0.1]");
  if (level == 0.0) return samples;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::mt19937_64 rng(derive_seed(rng_seed, kNoiseStream, i));
    std::normal_distribution<double> unit(0.0, 1.0);
    for (double& v : samples[i].features) v += unit(rng) * level * std::abs(v);
  }
  return samples;
}

std::vector<grid::MeasurementVector> add_measurement_noise(
    std::vector<grid::MeasurementVector> samples, double level, std::uint64_t rng_seed) {
  if (!(level >= 0.0 && level <= 0.1))
    throw Error(ErrorCode::kInvalidArgument, "noise level must lie in [0, 0.1]");
  if (level == 0.0) return samples;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::mt19937_64 rng(derive_seed(rng_seed, kNoiseStream, i));
    std::normal_distribution<double> unit(0.0, 1.0);
    for (Eigen::Index k = 0; k < samples[i].size(); ++k)
      samples[i](k) += unit(rng) * level * std::abs(samples[i](k));
  }
  return samples;
}

ClientSlice client_slice(const grid::NetworkCase& net, const grid::MeasurementSchema& schema,
                         const ClientSpec& client) {
  const auto bus = net.position_of(client.bus);
  const auto from = net.position_of(client.branch_from);
  const auto to = net.position_of(client.branch_to);
  if (!bus || !from || !to)
    throw Error(ErrorCode::kInvalidArgument, "client references a bus missing from the case");
  if (*bus != *from && *bus != *to)
    throw Error(ErrorCode::kInvalidArgument,
                "client branch " + std::to_string(client.branch_from) + "-" +
                    std::to_string(client.branch_to) + " is not incident to bus " +
                    std::to_string(client.bus));
  std::optional<std::size_t> branch;
  for (std::size_t k : net.incident_branches(*bus)) {
    const auto& br = net.branches()[k];
    if ((br.from_bus == *from && br.to_bus == *to) || (br.from_bus == *to && br.to_bus == *from)) {
      branch = k;
      break;
    }
  }
  if (!branch)
    throw Error(ErrorCode::kInvalidArgument,
                "no branch " + std::to_string(client.branch_from) + "-" +
                    std::to_string(client.branch_to) + " incident to bus " +
                    std::to_string(client.bus));

  ClientSlice slice;
  auto find = [&](grid::MeasurementKind kind, std::size_t bus_pos) -> std::optional<std::size_t> {
    for (std::size_t m = 0; m < schema.size(); ++m)
      if (schema[m].kind == kind && schema[m].bus == bus_pos) return m;
    return std::nullopt;
  };
  for (auto kind : {grid::MeasurementKind::kPInjection, grid::MeasurementKind::kQInjection})
    for (std::size_t b = 0; b < net.num_buses(); ++b) {
      auto m = find(kind, b);
      if (!m) throw Error(ErrorCode::kInvalidArgument, "schema lacks an injection at every bus");
      slice.schema_indices.push_back(*m);
    }
  for (auto kind : {grid::MeasurementKind::kPFlow, grid::MeasurementKind::kQFlow}) {
    // Prefer the end at the client's bus.
    std::optional<std::size_t> chosen;
    for (std::size_t m = 0; m < schema.size(); ++m) {
      const auto& e = schema[m];
      if (e.kind != kind || e.branch != *branch) continue;
      const auto& br = net.branches()[e.branch];
      const std::size_t at = e.end == grid::BranchEnd::kFrom ? br.from_bus : br.to_bus;
      if (!chosen || at == *bus) chosen = m;
    }
    if (!chosen) throw Error(ErrorCode::kInvalidArgument, "schema lacks flows on the client branch");
    slice.schema_indices.push_back(*chosen);
  }
  for (std::size_t m : slice.schema_indices) slice.layout.names.push_back(schema.label(m, net));
  return slice;
}

std::vector<ClientDataset> partition_clients(
    const std::vector<grid::MeasurementVector>& normal,
    const std::vector<grid::MeasurementVector>& compromised, const grid::NetworkCase& net,
    const grid::MeasurementSchema& schema, const std::vector<ClientSpec>& clients,
    const PartitionSizes& sizes) {
  const std::size_t needed = sizes.train_per_class + sizes.test_per_class;
  if (sizes.train_per_class == 0 || sizes.test_per_class == 0)
    throw Error(ErrorCode::kInvalidArgument, "partition sizes must be >= 1");
  const std::size_t pool = needed * clients.size();
  if (clients.empty()) throw Error(ErrorCode::kInvalidArgument, "partition needs at least one client");
  if (normal.size() < pool || compromised.size() < pool)
    throw Error(ErrorCode::kInvalidArgument,
                "partition needs " + std::to_string(pool) + " samples per class, have " +
                    std::to_string(normal.size()) + " normal / " +
                    std::to_string(compromised.size()) + " compromised");

  std::vector<ClientDataset> out;
  for (std::size_t c = 0; c < clients.size(); ++c) {
    const auto slice = client_slice(net, schema, clients[c]);
    auto extract = [&](const grid::MeasurementVector& z, int label) {
      if (static_cast<std::size_t>(z.size()) != schema.size())
        throw Error(ErrorCode::kDimension, "measurement vector does not match schema");
      LabeledSample s;
      s.label = label;
      s.features.reserve(slice.schema_indices.size());
      for (std::size_t m : slice.schema_indices) s.features.push_back(z(static_cast<Eigen::Index>(m)));
      return s;
    };
    ClientDataset ds;
    ds.client_id = static_cast<int>(c);
    ds.client = clients[c];
    ds.layout = slice.layout;
    const std::size_t first = c * needed;
    for (std::size_t i = first; i < first + sizes.train_per_class; ++i) {
      ds.train.push_back(extract(normal[i], 0));
      ds.train.push_back(extract(compromised[i], 1));
    }
    for (std::size_t i = first + sizes.train_per_class; i < first + needed; ++i) {
      ds.test.push_back(extract(normal[i], 0));
      ds.test.push_back(extract(compromised[i], 1));
    }
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace fedgrid::attack
