#include "fedgrid/grid/measurement.hpp"

#include <cmath>

#include "fedgrid/error.hpp"

namespace fedgrid::grid {

namespace {

struct FlowTerms {
  std::size_t i;  // measuring end
  std::size_t j;  // far end
  double g;
  double b;
  double shunt_b;
};

FlowTerms flow_terms(const MeasurementEntry& m, const NetworkCase& net) {
  const auto& br = net.branches()[m.branch];
  const bool from = m.end == BranchEnd::kFrom;
  return {from ? br.from_bus : br.to_bus, from ? br.to_bus : br.from_bus, br.series_g,
          br.series_b, br.charging_b / 2.0};
}

}  // namespace

const char* to_string(MeasurementKind kind) {
  switch (kind) {
    case MeasurementKind::kPInjection: return "P_inj";
    case MeasurementKind::kQInjection: return "Q_inj";
    case MeasurementKind::kPFlow: return "P_flow";
    case MeasurementKind::kQFlow: return "Q_flow";
  }
  return "?";
}

StateVector StateVector::flat(const NetworkCase& net) {
  StateVector s;
  s.voltage_mag = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(net.num_buses()));
  s.voltage_ang = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_buses()));
  s.voltage_mag(static_cast<Eigen::Index>(net.slack_bus())) = net.slack_voltage();
  return s;
}

Eigen::VectorXd StateVector::to_flat(const NetworkCase& net) const {
  check_dimensions(*this, net);
  Eigen::VectorXd x(static_cast<Eigen::Index>(net.num_states()));
  for (std::size_t bus = 0; bus < net.num_buses(); ++bus) {
    if (auto col = net.angle_column(bus))
      x(static_cast<Eigen::Index>(*col)) = voltage_ang(static_cast<Eigen::Index>(bus));
    x(static_cast<Eigen::Index>(net.voltage_column(bus))) =
        voltage_mag(static_cast<Eigen::Index>(bus));
  }
  return x;
}

StateVector StateVector::from_flat(const Eigen::VectorXd& x, const NetworkCase& net) {
  if (static_cast<std::size_t>(x.size()) != net.num_states())
    throw Error(ErrorCode::kDimension, "state vector length " + std::to_string(x.size()) +
                                           " != J = " + std::to_string(net.num_states()));
  StateVector s;
  const auto n = static_cast<Eigen::Index>(net.num_buses());
  s.voltage_mag.resize(n);
  s.voltage_ang.resize(n);
  for (std::size_t bus = 0; bus < net.num_buses(); ++bus) {
    auto b = static_cast<Eigen::Index>(bus);
    auto col = net.angle_column(bus);
    s.voltage_ang(b) = col ? x(static_cast<Eigen::Index>(*col)) : 0.0;
    s.voltage_mag(b) = x(static_cast<Eigen::Index>(net.voltage_column(bus)));
  }
  return s;
}

void check_dimensions(const StateVector& state, const NetworkCase& net) {
  const auto n = static_cast<Eigen::Index>(net.num_buses());
  if (state.voltage_mag.size() != n || state.voltage_ang.size() != n)
    throw Error(ErrorCode::kDimension,
                "state has " + std::to_string(state.voltage_mag.size()) + "/" +
                    std::to_string(state.voltage_ang.size()) + " entries, case has " +
                    std::to_string(n) + " buses");
}

MeasurementSchema::MeasurementSchema(std::vector<MeasurementEntry> entries)
    : entries_(std::move(entries)) {}

MeasurementSchema MeasurementSchema::default_for(const NetworkCase& net, double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be > 0");
  const double w = 1.0 / (sigma * sigma);
  std::vector<MeasurementEntry> entries;
  for (std::size_t i = 0; i < net.num_buses(); ++i)
    entries.push_back({MeasurementKind::kPInjection, i, 0, BranchEnd::kFrom, w});
  for (std::size_t i = 0; i < net.num_buses(); ++i)
    entries.push_back({MeasurementKind::kQInjection, i, 0, BranchEnd::kFrom, w});
  for (std::size_t k = 0; k < net.num_branches(); ++k)
    entries.push_back({MeasurementKind::kPFlow, 0, k, BranchEnd::kFrom, w});
  for (std::size_t k = 0; k < net.num_branches(); ++k)
    entries.push_back({MeasurementKind::kQFlow, 0, k, BranchEnd::kFrom, w});
  return MeasurementSchema(std::move(entries));
}

Eigen::VectorXd MeasurementSchema::weights() const {
  Eigen::VectorXd w(static_cast<Eigen::Index>(entries_.size()));
  for (std::size_t m = 0; m < entries_.size(); ++m)
    w(static_cast<Eigen::Index>(m)) = entries_[m].weight;
  return w;
}

std::string MeasurementSchema::label(std::size_t i, const NetworkCase& net) const {
  const auto& m = entries_.at(i);
  std::string out = to_string(m.kind);
  if (m.is_injection()) return out + "@" + std::to_string(net.buses()[m.bus].index);
  const auto& br = net.branches()[m.branch];
  std::size_t a = m.end == BranchEnd::kFrom ? br.from_bus : br.to_bus;
  std::size_t b = m.end == BranchEnd::kFrom ? br.to_bus : br.from_bus;
  return out + "@" + std::to_string(net.buses()[a].index) + "->" +
         std::to_string(net.buses()[b].index);
}

void MeasurementSchema::validate(const NetworkCase& net) const {
  for (std::size_t m = 0; m < entries_.size(); ++m) {
    const auto& e = entries_[m];
    if (!(e.weight > 0.0) || !std::isfinite(e.weight))
      throw Error(ErrorCode::kValidation, "schema entry " + std::to_string(m) +
                                              " has non-positive weight");
    if (e.is_injection() ? e.bus >= net.num_buses() : e.branch >= net.num_branches())
      throw Error(ErrorCode::kValidation,
                  "schema entry " + std::to_string(m) + " references a missing element");
  }
  if (entries_.size() < net.num_states())
    throw Error(ErrorCode::kValidation, "schema has I = " + std::to_string(entries_.size()) +
                                            " < J = " + std::to_string(net.num_states()) +
                                            " measurements");
}

MeasurementVector measurement_function(const StateVector& state, const NetworkCase& net,
                                       const MeasurementSchema& schema) {
  check_dimensions(state, net);
  const auto& G = net.bus_conductance();
  const auto& B = net.bus_susceptance();
  const auto& V = state.voltage_mag;
  const auto& th = state.voltage_ang;

  MeasurementVector h(static_cast<Eigen::Index>(schema.size()));
  for (std::size_t m = 0; m < schema.size(); ++m) {
    const auto& e = schema[m];
    double value = 0.0;
    if (e.is_injection()) {
      const auto i = static_cast<Eigen::Index>(e.bus);
      auto term = [&](Eigen::Index j) {
        const double t = th(i) - th(j);
        return e.kind == MeasurementKind::kPInjection
                   ? V(i) * V(j) * (G(i, j) * std::cos(t) + B(i, j) * std::sin(t))
                   : V(i) * V(j) * (G(i, j) * std::sin(t) - B(i, j) * std::cos(t));
      };
      value = term(i);
      for (std::size_t j : net.neighbors(e.bus)) value += term(static_cast<Eigen::Index>(j));
    } else {
      const auto f = flow_terms(e, net);
      const auto i = static_cast<Eigen::Index>(f.i);
      const auto j = static_cast<Eigen::Index>(f.j);
      const double t = th(i) - th(j);
      const double c = std::cos(t);
      const double s = std::sin(t);
      value = e.kind == MeasurementKind::kPFlow
                  ? V(i) * V(i) * f.g - V(i) * V(j) * (f.g * c + f.b * s)
                  : -V(i) * V(i) * (f.shunt_b + f.b) - V(i) * V(j) * (f.g * s - f.b * c);
    }
    h(static_cast<Eigen::Index>(m)) = value;
  }
  return h;
}

Eigen::MatrixXd measurement_jacobian(const StateVector& state, const NetworkCase& net,
                                     const MeasurementSchema& schema) {
  check_dimensions(state, net);
  const auto& G = net.bus_conductance();
  const auto& B = net.bus_susceptance();
  const auto& V = state.voltage_mag;
  const auto& th = state.voltage_ang;

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(schema.size()),
                                            static_cast<Eigen::Index>(net.num_states()));
  auto add_angle = [&](Eigen::Index row, std::size_t bus, double value) {
    if (auto col = net.angle_column(bus)) H(row, static_cast<Eigen::Index>(*col)) += value;
  };
  auto add_mag = [&](Eigen::Index row, std::size_t bus, double value) {
    H(row, static_cast<Eigen::Index>(net.voltage_column(bus))) += value;
  };

  for (std::size_t m = 0; m < schema.size(); ++m) {
    const auto row = static_cast<Eigen::Index>(m);
    const auto& e = schema[m];
    if (e.is_injection()) {
      const std::size_t bi = e.bus;
      const auto i = static_cast<Eigen::Index>(bi);
      const bool is_p = e.kind == MeasurementKind::kPInjection;
      double d_own_ang = 0.0;
      double d_own_mag = is_p ? 2.0 * V(i) * G(i, i) : -2.0 * V(i) * B(i, i);
      for (std::size_t bj : net.neighbors(bi)) {
        const auto j = static_cast<Eigen::Index>(bj);
        const double t = th(i) - th(j);
        const double gc_bs = G(i, j) * std::cos(t) + B(i, j) * std::sin(t);
        const double gs_bc = G(i, j) * std::sin(t) - B(i, j) * std::cos(t);
        if (is_p) {
          d_own_ang += -V(i) * V(j) * gs_bc;
          d_own_mag += V(j) * gc_bs;
          add_angle(row, bj, V(i) * V(j) * gs_bc);
          add_mag(row, bj, V(i) * gc_bs);
        } else {
          d_own_ang += V(i) * V(j) * gc_bs;
          d_own_mag += V(j) * gs_bc;
          add_angle(row, bj, -V(i) * V(j) * gc_bs);
          add_mag(row, bj, V(i) * gs_bc);
        }
      }
      add_angle(row, bi, d_own_ang);
      add_mag(row, bi, d_own_mag);
    } else {
      const auto f = flow_terms(e, net);
      const auto i = static_cast<Eigen::Index>(f.i);
      const auto j = static_cast<Eigen::Index>(f.j);
      const double t = th(i) - th(j);
      const double c = std::cos(t);
      const double s = std::sin(t);
      const double gc_bs = f.g * c + f.b * s;
      const double gs_bc = f.g * s - f.b * c;
      if (e.kind == MeasurementKind::kPFlow) {
        add_angle(row, f.i, V(i) * V(j) * gs_bc);
        add_angle(row, f.j, -V(i) * V(j) * gs_bc);
        add_mag(row, f.i, 2.0 * V(i) * f.g - V(j) * gc_bs);
        add_mag(row, f.j, -V(i) * gc_bs);
      } else {
        add_angle(row, f.i, -V(i) * V(j) * gc_bs);
        add_angle(row, f.j, V(i) * V(j) * gc_bs);
        add_mag(row, f.i, -2.0 * V(i) * (f.shunt_b + f.b) - V(j) * gs_bc);
        add_mag(row, f.j, -V(i) * gs_bc);
      }
    }
  }
  return H;
}

}  // namespace fedgrid::grid
