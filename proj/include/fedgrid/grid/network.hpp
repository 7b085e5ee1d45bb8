#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fedgrid::grid {

// Bus quantities are per-unit on the case base. Loads are net loads
// (demand minus generation), so negative values inject power.
struct BusRecord {
  int index = 0;  // external bus number as written in the case file
  double base_load_p = 0.0;
  double base_load_q = 0.0;
  double shunt_g = 0.0;
  double shunt_b = 0.0;
};

// Endpoints are internal bus positions (0-based), not external numbers.
struct BranchRecord {
  std::size_t from_bus = 0;
  std::size_t to_bus = 0;
  double series_g = 0.0;
  double series_b = 0.0;
  double charging_b = 0.0;  // total line charging; half is placed at each end
};

// Immutable, validated network. Construction precomputes the bus admittance
// matrix and adjacency so measurement evaluation stays cheap.
class NetworkCase {
 public:
  static NetworkCase create(double base_mva, std::vector<BusRecord> buses,
                            std::vector<BranchRecord> branches,
                            std::size_t slack_bus, double slack_voltage = 1.0);

  double base_mva() const { return base_mva_; }
  const std::vector<BusRecord>& buses() const { return buses_; }
  const std::vector<BranchRecord>& branches() const { return branches_; }
  std::size_t slack_bus() const { return slack_bus_; }
  double slack_voltage() const { return slack_voltage_; }
  std::size_t num_buses() const { return buses_.size(); }
  std::size_t num_branches() const { return branches_.size(); }

  // Number of state variables: all magnitudes plus all non-slack angles.
  std::size_t num_states() const { return 2 * buses_.size() - 1; }

  // Position of an external bus number, if present.
  std::optional<std::size_t> position_of(int external_index) const;

  const Eigen::MatrixXd& bus_conductance() const { return g_bus_; }
  const Eigen::MatrixXd& bus_susceptance() const { return b_bus_; }

  // Distinct buses sharing at least one branch with `bus`, ascending.
  const std::vector<std::size_t>& neighbors(std::size_t bus) const {
    return neighbors_[bus];
  }
  // Branch positions incident to `bus`.
  const std::vector<std::size_t>& incident_branches(std::size_t bus) const {
    return incident_[bus];
  }

  // Column of the angle of `bus` in the state vector; none for the slack.
  std::optional<std::size_t> angle_column(std::size_t bus) const;
  std::size_t voltage_column(std::size_t bus) const {
    return (buses_.size() - 1) + bus;
  }

 private:
  NetworkCase() = default;

  double base_mva_ = 100.0;
  std::vector<BusRecord> buses_;
  std::vector<BranchRecord> branches_;
  std::size_t slack_bus_ = 0;
  double slack_voltage_ = 1.0;
  Eigen::MatrixXd g_bus_;
  Eigen::MatrixXd b_bus_;
  std::vector<std::vector<std::size_t>> neighbors_;
  std::vector<std::vector<std::size_t>> incident_;
};

// Parses the plain-text case format:
//
//   # comment
//   BASE_MVA 100
//   SLACK <bus> [voltage_pu]
//   BUS
//   <index> <load_p_MW> <load_q_MVAr> <shunt_g_MW> <shunt_b_MVAr>
//   BRANCH
//   <from> <to> <r_pu> <x_pu> <b_charging_pu>
//
// MW/MVAr quantities are divided by BASE_MVA on ingestion. Throws Error with
// kParse (including the line number) or kValidation.
NetworkCase load_case(const std::filesystem::path& path);
NetworkCase parse_case(const std::string& text);

}  // namespace fedgrid::grid
