#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <json.hpp>

namespace fedgrid::harness {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

// Ratios with a zero denominator are absent rather than 0.
struct Metrics {
  ConfusionCounts counts;
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;

  nlohmann::json to_json() const;
  static Metrics from_json(const nlohmann::json& j);
};

Metrics metrics_from_counts(const ConfusionCounts& counts);
// Positive class = 1 (compromised).
Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels);
std::optional<double> f1_score(std::optional<double> precision, std::optional<double> recall);

}  // namespace fedgrid::harness
