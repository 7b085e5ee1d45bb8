#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedgrid::detector {

struct Param {
  std::string name;
  Eigen::MatrixXd value;
};

// Named parameter tensors in a fixed order; `flat()` concatenates them
// column-major in that order.
class ModelWeights {
 public:
  ModelWeights() = default;

  void add(std::string name, Eigen::MatrixXd value);
  std::size_t num_tensors() const { return params_.size(); }
  std::size_t num_values() const;
  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }

  Eigen::MatrixXd& operator[](std::size_t i) { return params_[i].value; }
  const Eigen::MatrixXd& operator[](std::size_t i) const { return params_[i].value; }
  const Eigen::MatrixXd& get(const std::string& name) const;
  Eigen::MatrixXd& get(const std::string& name);

  std::vector<double> flat() const;
  void assign_flat(std::span<const double> values);

  // "name:rows x cols" entries joined with ';'.
  std::string layout_descriptor() const;
  std::string layout_hash() const;
  bool same_layout(const ModelWeights& other) const;

  ModelWeights zeros_like() const;
  bool all_finite() const;
  bool operator==(const ModelWeights& other) const;

 private:
  std::vector<Param> params_;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 50;
  std::size_t batch_size = 128;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;
};

struct OptimizerState {
  ModelWeights first;
  ModelWeights second;
  long step = 0;
  long epochs_done = 0;

  static OptimizerState for_weights(const ModelWeights& w);
};

// One update of the bias-corrected moment rule; increments state.step first.
void adam_step(ModelWeights& weights, const ModelWeights& gradient, OptimizerState& state,
               const TrainConfig& config);

}  // namespace fedgrid::detector
