#include "fedgrid/detector/weights.hpp"

#include <cmath>

#include "fedgrid/error.hpp"
#include "fedgrid/util/digest.hpp"

namespace fedgrid::detector {

void ModelWeights::add(std::string name, Eigen::MatrixXd value) {
  for (const auto& p : params_)
    if (p.name == name) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
  params_.push_back({std::move(name), std::move(value)});
}

std::size_t ModelWeights::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

const Eigen::MatrixXd& ModelWeights::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  throw Error(ErrorCode::kInvalidArgument, "no parameter named " + name);
}

Eigen::MatrixXd& ModelWeights::get(const std::string& name) {
  return const_cast<Eigen::MatrixXd&>(std::as_const(*this).get(name));
}

std::vector<double> ModelWeights::flat() const {
  std::vector<double> out;
  out.reserve(num_values());
  for (const auto& p : params_) out.insert(out.end(), p.value.data(), p.value.data() + p.value.size());
  return out;
}

void ModelWeights::assign_flat(std::span<const double> values) {
  if (values.size() != num_values())
    throw Error(ErrorCode::kDimension, "flat weight vector has " + std::to_string(values.size()) +
                                           " values, layout needs " + std::to_string(num_values()));
  std::size_t off = 0;
  for (auto& p : params_) {
    std::copy_n(values.data() + off, p.value.size(), p.value.data());
    off += static_cast<std::size_t>(p.value.size());
  }
}

std::string ModelWeights::layout_descriptor() const {
  std::string out;
  for (const auto& p : params_) {
    if (!out.empty()) out += ';';
    out += p.name + ':' + std::to_string(p.value.rows()) + 'x' + std::to_string(p.value.cols());
  }
  return out;
}

std::string ModelWeights::layout_hash() const { return util::sha1_hex(layout_descriptor()).substr(0, 16); }

bool ModelWeights::same_layout(const ModelWeights& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
      return false;
  }
  return true;
}

ModelWeights ModelWeights::zeros_like() const {
  ModelWeights z;
  for (const auto& p : params_) z.params_.push_back({p.name, Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols())});
  return z;
}

bool ModelWeights::all_finite() const {
  for (const auto& p : params_)
    if (!p.value.allFinite()) return false;
  return true;
}

bool ModelWeights::operator==(const ModelWeights& other) const {
  if (!same_layout(other)) return false;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].value != other.params_[i].value) return false;
  return true;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kConfig, "learning rate must be > 0");
  if (epochs < 0) throw Error(ErrorCode::kConfig, "epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::kConfig, "batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw Error(ErrorCode::kConfig, "moment decay rates must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::kConfig, "epsilon must be > 0");
}

OptimizerState OptimizerState::for_weights(const ModelWeights& w) {
  return {w.zeros_like(), w.zeros_like(), 0, 0};
}

void adam_step(ModelWeights& weights, const ModelWeights& gradient, OptimizerState& state,
               const TrainConfig& config) {
  if (!weights.same_layout(gradient) || !weights.same_layout(state.first) ||
      !weights.same_layout(state.second))
    throw Error(ErrorCode::kDimension, "adam_step: weight, gradient and moment layouts differ");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < weights.num_tensors(); ++i) {
    auto& f = state.first[i];
    auto& s = state.second[i];
    const auto& g = gradient[i];
    f = config.beta1 * f + (1.0 - config.beta1) * g;
    s = config.beta2 * s + (1.0 - config.beta2) * g.cwiseProduct(g);
    weights[i].array() -=
        config.learning_rate * (f.array() / c1) / ((s.array() / c2).sqrt() + config.epsilon);
  }
}

}  // namespace fedgrid::detector
