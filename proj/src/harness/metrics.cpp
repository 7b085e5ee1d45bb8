#include "fedgrid/harness/metrics.hpp"

#include <string>

#include "fedgrid/error.hpp"

namespace fedgrid::harness {

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::optional<double> f1_score(std::optional<double> precision, std::optional<double> recall) {
  if (!precision || !recall || *precision + *recall == 0.0) return std::nullopt;
  return 2.0 * *precision * *recall / (*precision + *recall);
}

Metrics metrics_from_counts(const ConfusionCounts& c) {
  Metrics m;
  m.counts = c;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw Error(ErrorCode::kDimension, "compute_metrics: " + std::to_string(predictions.size()) +
                                           " predictions for " + std::to_string(labels.size()) + " labels");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1))
      throw Error(ErrorCode::kValidation, "predictions and labels must be 0 or 1");
    if (p == 1 && y == 1) ++c.tp;
    else if (p == 1) ++c.fp;
    else if (y == 0) ++c.tn;
    else ++c.fn;
  }
  return metrics_from_counts(c);
}

nlohmann::json Metrics::to_json() const {
  return {{"tp", counts.tp},
          {"fp", counts.fp},
          {"tn", counts.tn},
          {"fn", counts.fn},
          {"accuracy", optional_json(accuracy)},
          {"precision", optional_json(precision)},
          {"recall", optional_json(recall)},
          {"f1", optional_json(f1)}};
}

Metrics Metrics::from_json(const nlohmann::json& j) {
  try {
    Metrics m;
    m.counts = {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("tn").get<std::size_t>(),
                j.at("fn").get<std::size_t>()};
    m.accuracy = optional_from(j, "accuracy");
    m.precision = optional_from(j, "precision");
    m.recall = optional_from(j, "recall");
    m.f1 = optional_from(j, "f1");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("metrics: ") + e.what());
  }
}

}  // namespace fedgrid::harness
