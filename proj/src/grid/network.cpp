#include "fedgrid/grid/network.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fedgrid/error.hpp"

namespace fedgrid::grid {

namespace {

[[noreturn]] void fail_validation(const std::string& what) {
  throw Error(ErrorCode::kValidation, "case validation: " + what);
}

[[noreturn]] void fail_parse(int line, const std::string& what) {
  throw Error(ErrorCode::kParse,
              "case parse error at line " + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> fields;
  std::string field;
  while (in >> field) fields.push_back(field);
  return fields;
}

double parse_number(const std::string& field, int line) {
  try {
    std::size_t used = 0;
    double value = std::stod(field, &used);
    if (used != field.size()) fail_parse(line, "bad number '" + field + "'");
    if (!std::isfinite(value)) fail_parse(line, "non-finite value '" + field + "'");
    return value;
  } catch (const std::logic_error&) {
    fail_parse(line, "bad number '" + field + "'");
  }
}

int parse_int(const std::string& field, int line) {
  double value = parse_number(field, line);
  if (value != std::floor(value)) fail_parse(line, "expected integer, got '" + field + "'");
  return static_cast<int>(value);
}

}  // namespace

NetworkCase NetworkCase::create(double base_mva, std::vector<BusRecord> buses,
                                std::vector<BranchRecord> branches,
                                std::size_t slack_bus, double slack_voltage) {
  if (!(base_mva > 0.0) || !std::isfinite(base_mva)) fail_validation("base_mva must be > 0");
  if (buses.size() < 2) fail_validation("at least two buses required");
  if (slack_bus >= buses.size()) fail_validation("slack bus does not exist");
  if (!(slack_voltage > 0.0)) fail_validation("slack voltage must be > 0");

  std::set<int> seen;
  for (const auto& bus : buses) {
    if (!seen.insert(bus.index).second)
      fail_validation("duplicate bus index " + std::to_string(bus.index));
    for (double v : {bus.base_load_p, bus.base_load_q, bus.shunt_g, bus.shunt_b})
      if (!std::isfinite(v))
        fail_validation("non-finite quantity at bus " + std::to_string(bus.index));
  }
  for (const auto& br : branches) {
    if (br.from_bus >= buses.size() || br.to_bus >= buses.size())
      fail_validation("branch endpoint references a missing bus");
    if (br.from_bus == br.to_bus)
      fail_validation("branch from_bus equals to_bus at bus " +
                      std::to_string(buses[br.from_bus].index));
    for (double v : {br.series_g, br.series_b, br.charging_b})
      if (!std::isfinite(v)) fail_validation("non-finite branch admittance");
  }

  NetworkCase net;
  net.base_mva_ = base_mva;
  net.buses_ = std::move(buses);
  net.branches_ = std::move(branches);
  net.slack_bus_ = slack_bus;
  net.slack_voltage_ = slack_voltage;

  const std::size_t n = net.buses_.size();
  net.g_bus_ = Eigen::MatrixXd::Zero(n, n);
  net.b_bus_ = Eigen::MatrixXd::Zero(n, n);
  net.neighbors_.assign(n, {});
  net.incident_.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    net.g_bus_(i, i) += net.buses_[i].shunt_g;
    net.b_bus_(i, i) += net.buses_[i].shunt_b;
  }
  for (std::size_t k = 0; k < net.branches_.size(); ++k) {
    const auto& br = net.branches_[k];
    const std::size_t i = br.from_bus;
    const std::size_t j = br.to_bus;
    net.g_bus_(i, i) += br.series_g;
    net.g_bus_(j, j) += br.series_g;
    net.b_bus_(i, i) += br.series_b + br.charging_b / 2.0;
    net.b_bus_(j, j) += br.series_b + br.charging_b / 2.0;
    net.g_bus_(i, j) -= br.series_g;
    net.g_bus_(j, i) -= br.series_g;
    net.b_bus_(i, j) -= br.series_b;
    net.b_bus_(j, i) -= br.series_b;
    net.neighbors_[i].push_back(j);
    net.neighbors_[j].push_back(i);
    net.incident_[i].push_back(k);
    net.incident_[j].push_back(k);
  }
  for (auto& list : net.neighbors_) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return net;
}

std::optional<std::size_t> NetworkCase::position_of(int external_index) const {
  for (std::size_t i = 0; i < buses_.size(); ++i)
    if (buses_[i].index == external_index) return i;
  return std::nullopt;
}

std::optional<std::size_t> NetworkCase::angle_column(std::size_t bus) const {
  if (bus == slack_bus_) return std::nullopt;
  return bus < slack_bus_ ? bus : bus - 1;
}

NetworkCase parse_case(const std::string& text) {
  enum class Section { kNone, kBus, kBranch };
  Section section = Section::kNone;

  std::optional<double> base_mva;
  std::optional<int> slack_index;
  double slack_voltage = 1.0;

  struct RawBus {
    int index;
    double p_mw, q_mvar, gs_mw, bs_mvar;
    int line;
  };
  struct RawBranch {
    int from, to;
    double r, x, b;
    int line;
  };
  std::vector<RawBus> raw_buses;
  std::vector<RawBranch> raw_branches;

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto fields = split_fields(line);
    if (fields.empty()) continue;

    const std::string& head = fields[0];
    if (head == "BASE_MVA") {
      if (fields.size() != 2) fail_parse(line_no, "BASE_MVA expects one value");
      base_mva = parse_number(fields[1], line_no);
      continue;
    }
    if (head == "SLACK") {
      if (fields.size() < 2 || fields.size() > 3)
        fail_parse(line_no, "SLACK expects a bus index and optional voltage");
      if (slack_index) fail_validation("more than one slack bus declared");
      slack_index = parse_int(fields[1], line_no);
      if (fields.size() == 3) slack_voltage = parse_number(fields[2], line_no);
      continue;
    }
    if (head == "BUS") {
      section = Section::kBus;
      continue;
    }
    if (head == "BRANCH") {
      section = Section::kBranch;
      continue;
    }

    switch (section) {
      case Section::kNone:
        fail_parse(line_no, "data row outside of a BUS or BRANCH section");
      case Section::kBus:
        if (fields.size() != 5) fail_parse(line_no, "BUS row expects 5 columns");
        raw_buses.push_back({parse_int(fields[0], line_no), parse_number(fields[1], line_no),
                             parse_number(fields[2], line_no), parse_number(fields[3], line_no),
                             parse_number(fields[4], line_no), line_no});
        break;
      case Section::kBranch:
        if (fields.size() != 5) fail_parse(line_no, "BRANCH row expects 5 columns");
        raw_branches.push_back({parse_int(fields[0], line_no), parse_int(fields[1], line_no),
                                parse_number(fields[2], line_no), parse_number(fields[3], line_no),
                                parse_number(fields[4], line_no), line_no});
        break;
    }
  }

  if (!base_mva) fail_validation("missing BASE_MVA");
  if (!slack_index) fail_validation("exactly one slack bus required (no SLACK line)");
  const double base = *base_mva;
  if (!(base > 0.0)) fail_validation("base_mva must be > 0");

  std::vector<BusRecord> buses;
  std::map<int, std::size_t> position;
  for (const auto& rb : raw_buses) {
    if (!position.emplace(rb.index, buses.size()).second)
      fail_validation("duplicate bus index " + std::to_string(rb.index) + " (line " +
                      std::to_string(rb.line) + ")");
    buses.push_back({rb.index, rb.p_mw / base, rb.q_mvar / base, rb.gs_mw / base,
                     rb.bs_mvar / base});
  }

  std::vector<BranchRecord> branches;
  for (const auto& rb : raw_branches) {
    auto from = position.find(rb.from);
    auto to = position.find(rb.to);
    if (from == position.end() || to == position.end()) {
      int missing = from == position.end() ? rb.from : rb.to;
      fail_validation("branch at line " + std::to_string(rb.line) + " references bus " +
                      std::to_string(missing) + " which does not exist");
    }
    if (rb.r == 0.0 && rb.x == 0.0)
      fail_validation("branch at line " + std::to_string(rb.line) + " has zero impedance");
    const std::complex<double> y = 1.0 / std::complex<double>(rb.r, rb.x);
    branches.push_back({from->second, to->second, y.real(), y.imag(), rb.b});
  }

  auto slack = position.find(*slack_index);
  if (slack == position.end())
    fail_validation("slack bus " + std::to_string(*slack_index) + " does not exist");

  return NetworkCase::create(base, std::move(buses), std::move(branches), slack->second,
                             slack_voltage);
}

NetworkCase load_case(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw Error(ErrorCode::kIo, "cannot open case file " + path.string());
  std::ostringstream buffer;
  buffer << file.rdbuf();
  return parse_case(buffer.str());
}

}  // namespace fedgrid::grid
