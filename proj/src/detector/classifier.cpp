#include "fedgrid/detector/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedgrid/error.hpp"
#include "fedgrid/util/digest.hpp"

namespace fedgrid::detector {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

Batch make_batch(const std::vector<attack::LabeledSample>& samples) {
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "no samples");
  const std::size_t f = samples.front().features.size();
  Batch b;
  b.x.resize(static_cast<Index>(samples.size()), static_cast<Index>(f));
  b.y.resize(static_cast<Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].features.size() != f)
      throw Error(ErrorCode::kDimension, "sample " + std::to_string(i) + " has a different feature count");
    if (samples[i].label != 0 && samples[i].label != 1)
      throw Error(ErrorCode::kValidation, "labels must be 0 or 1");
    for (std::size_t j = 0; j < f; ++j) b.x(static_cast<Index>(i), static_cast<Index>(j)) = samples[i].features[j];
    b.y(static_cast<Index>(i)) = samples[i].label;
  }
  return b;
}

double bce_loss(const VectorXd& probabilities, const VectorXd& labels) {
  if (probabilities.size() != labels.size() || probabilities.size() == 0)
    throw Error(ErrorCode::kDimension, "bce_loss: size mismatch");
  double total = 0.0;
  for (Index i = 0; i < probabilities.size(); ++i) {
    const double p = std::clamp(probabilities(i), kProbabilityClamp, 1.0 - kProbabilityClamp);
    total -= labels(i) * std::log(p) + (1.0 - labels(i)) * std::log(1.0 - p);
  }
  return total / static_cast<double>(probabilities.size());
}

std::string Classifier::config_hash() const { return util::sha1_hex(config_json().dump()).substr(0, 16); }

Eigen::MatrixXd xavier_uniform(Index rows, Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// ---- MLP baseline ---------------------------------------------------------

void MlpConfig::validate() const {
  if (input_features < 1 || hidden1 < 1 || hidden2 < 1)
    throw Error(ErrorCode::kConfig, "mlp sizes must be >= 1");
}

nlohmann::json MlpConfig::to_json() const {
  return {{"architecture", "mlp"}, {"input_features", input_features}, {"hidden1", hidden1}, {"hidden2", hidden2}};
}

MlpConfig MlpConfig::from_json(const nlohmann::json& j) {
  MlpConfig c;
  try {
    c.input_features = j.at("input_features").get<std::size_t>();
    c.hidden1 = j.value("hidden1", c.hidden1);
    c.hidden2 = j.value("hidden2", c.hidden2);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("mlp config: ") + e.what());
  }
  c.validate();
  return c;
}

MlpClassifier::MlpClassifier(MlpConfig config) : config_(config) { config_.validate(); }

nlohmann::json MlpClassifier::config_json() const { return config_.to_json(); }

ModelWeights MlpClassifier::init_weights(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  const Index f = static_cast<Index>(config_.input_features);
  const Index h1 = static_cast<Index>(config_.hidden1);
  const Index h2 = static_cast<Index>(config_.hidden2);
  ModelWeights w;
  w.add("mlp.w1", xavier_uniform(f, h1, rng));
  w.add("mlp.b1", MatrixXd::Zero(1, h1));
  w.add("mlp.w2", xavier_uniform(h1, h2, rng));
  w.add("mlp.b2", MatrixXd::Zero(1, h2));
  w.add("mlp.w3", xavier_uniform(h2, 1, rng));
  w.add("mlp.b3", MatrixXd::Zero(1, 1));
  return w;
}

Eigen::VectorXd MlpClassifier::forward(const MatrixXd& x, const ModelWeights& w, std::mt19937_64*) const {
  if (x.cols() != static_cast<Index>(config_.input_features) || w.num_tensors() != 6)
    throw Error(ErrorCode::kDimension, "mlp: input or weight layout mismatch");
  MatrixXd a1 = ((x * w[0]).rowwise() + RowVectorXd(w[1])).cwiseMax(0.0);
  MatrixXd a2 = ((a1 * w[2]).rowwise() + RowVectorXd(w[3])).cwiseMax(0.0);
  const VectorXd logits = (a2 * w[4]).col(0).array() + w[5](0, 0);
  return (1.0 + (-logits.array()).exp()).inverse().matrix();
}

double MlpClassifier::loss_and_gradient(const Batch& batch, const ModelWeights& w, ModelWeights& grad,
                                        std::mt19937_64*) const {
  if (batch.size() == 0) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  if (batch.x.cols() != static_cast<Index>(config_.input_features) || w.num_tensors() != 6)
    throw Error(ErrorCode::kDimension, "mlp: input or weight layout mismatch");
  const MatrixXd z1 = (batch.x * w[0]).rowwise() + RowVectorXd(w[1]);
  const MatrixXd a1 = z1.cwiseMax(0.0);
  const MatrixXd z2 = (a1 * w[2]).rowwise() + RowVectorXd(w[3]);
  const MatrixXd a2 = z2.cwiseMax(0.0);
  const VectorXd logits = (a2 * w[4]).col(0).array() + w[5](0, 0);
  const VectorXd probs = (1.0 + (-logits.array()).exp()).inverse().matrix();
  const double loss = bce_loss(probs, batch.y);
  if (!grad.same_layout(w)) grad = w.zeros_like();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  VectorXd dlogit(probs.size());
  for (Index i = 0; i < probs.size(); ++i) {
    const bool clamped = probs(i) < kProbabilityClamp || probs(i) > 1.0 - kProbabilityClamp;
    dlogit(i) = clamped ? 0.0 : (probs(i) - batch.y(i)) * inv_b;
  }
  grad[4] = a2.transpose() * dlogit;
  grad[5](0, 0) = dlogit.sum();
  MatrixXd dz2 = dlogit * w[4].transpose();
  dz2.array() *= (z2.array() > 0.0).cast<double>();
  grad[2] = a1.transpose() * dz2;
  grad[3] = dz2.colwise().sum();
  MatrixXd dz1 = dz2 * w[2].transpose();
  dz1.array() *= (z1.array() > 0.0).cast<double>();
  grad[0] = batch.x.transpose() * dz1;
  grad[1] = dz1.colwise().sum();
  return loss;
}

std::unique_ptr<Classifier> make_classifier(const nlohmann::json& config) {
  const std::string arch = config.value("architecture", std::string("transformer"));
  if (arch == "transformer") return std::make_unique<TransformerClassifier>(TransformerConfig::from_json(config));
  if (arch == "mlp") return std::make_unique<MlpClassifier>(MlpConfig::from_json(config));
  throw Error(ErrorCode::kConfig, "unknown architecture '" + arch + "'");
}

// ---- prediction ------------------------------------------------------------

int decide(double probability) { return probability >= 0.5 ? 1 : 0; }

std::vector<Prediction> predict(const Classifier& model, const ModelWeights& weights, const MatrixXd& x) {
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  // Chunked so inference over large test sets keeps activations small.
  constexpr Index kChunk = 512;
  for (Index start = 0; start < x.rows(); start += kChunk) {
    const Index len = std::min(kChunk, x.rows() - start);
    const VectorXd p = model.forward(x.middleRows(start, len), weights);
    for (Index i = 0; i < len; ++i) out.push_back({decide(p(i)), p(i)});
  }
  return out;
}

// ---- scaler ----------------------------------------------------------------

FeatureScaler FeatureScaler::fit(const MatrixXd& x) {
  if (x.rows() < 1) throw Error(ErrorCode::kInvalidArgument, "cannot fit a scaler on no samples");
  FeatureScaler s;
  s.mean = x.colwise().mean();
  const MatrixXd centered = x.rowwise() - s.mean;
  s.scale = (centered.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt().matrix();
  for (Index j = 0; j < s.scale.size(); ++j)
    if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
  return s;
}

FeatureScaler FeatureScaler::identity(std::size_t features) {
  return {RowVectorXd::Zero(static_cast<Index>(features)), RowVectorXd::Ones(static_cast<Index>(features))};
}

MatrixXd FeatureScaler::apply(const MatrixXd& x) const {
  if (x.cols() != mean.size()) throw Error(ErrorCode::kDimension, "scaler width differs from data");
  return (x.rowwise() - mean).array().rowwise() / scale.array();
}

nlohmann::json FeatureScaler::to_json() const {
  return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
          {"scale", std::vector<double>(scale.data(), scale.data() + scale.size())}};
}

FeatureScaler FeatureScaler::from_json(const nlohmann::json& j) {
  try {
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto s = j.at("scale").get<std::vector<double>>();
    if (m.size() != s.size()) throw Error(ErrorCode::kParse, "scaler mean/scale lengths differ");
    FeatureScaler out;
    out.mean = Eigen::Map<const RowVectorXd>(m.data(), static_cast<Index>(m.size()));
    out.scale = Eigen::Map<const RowVectorXd>(s.data(), static_cast<Index>(s.size()));
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("scaler: ") + e.what());
  }
}

// ---- training --------------------------------------------------------------

TrainHistory train_local(const Classifier& model, const Batch& data, ModelWeights& weights,
                         OptimizerState& state, const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw Error(ErrorCode::kInvalidArgument, "empty training set");
  if (!state.first.same_layout(weights)) state = OptimizerState::for_weights(weights);
  TrainHistory history;
  std::vector<Index> order(data.size());
  ModelWeights grad = weights.zeros_like();
  Batch mb;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto global_epoch = static_cast<std::uint64_t>(state.epochs_done);
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 shuffle_rng(attack::derive_seed(config.seed, attack::kShuffleStream, global_epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 dropout_rng(attack::derive_seed(config.seed, attack::kShuffleStream + 16, global_epoch));
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      mb.x.resize(static_cast<Index>(len), data.x.cols());
      mb.y.resize(static_cast<Index>(len));
      for (std::size_t i = 0; i < len; ++i) {
        mb.x.row(static_cast<Index>(i)) = data.x.row(order[start + i]);
        mb.y(static_cast<Index>(i)) = data.y(order[start + i]);
      }
      double loss;
      try {
        loss = model.loss_and_gradient(mb, weights, grad, &dropout_rng);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNumeric) throw;
        throw Error(ErrorCode::kNumeric, std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                             ", batch " + std::to_string(batch_index) + ")");
      }
      if (!std::isfinite(loss))
        throw Error(ErrorCode::kNumeric, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                             std::to_string(batch_index));
      adam_step(weights, grad, state, config);
      loss_sum += loss * static_cast<double>(len);
    }
    ++state.epochs_done;
    history.epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
  }
  return history;
}

// ---- checkpoints -----------------------------------------------------------

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  const auto model = make_classifier(ckpt.model_config);
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& p : ckpt.weights.params())
    layout.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  return {{"format", "fedgrid-checkpoint"},
          {"version", kCheckpointVersion},
          {"model", ckpt.model_config},
          {"config_hash", model->config_hash()},
          {"layout", layout},
          {"layout_hash", ckpt.weights.layout_hash()},
          {"scaler", ckpt.scaler.to_json()},
          {"values", ckpt.weights.flat()}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "fedgrid-checkpoint")
      throw Error(ErrorCode::kParse, "not a checkpoint file");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw Error(ErrorCode::kParse, "unsupported checkpoint version " + j.at("version").dump());
    Checkpoint ckpt;
    ckpt.model_config = j.at("model");
    const auto model = make_classifier(ckpt.model_config);
    if (model->config_hash() != j.at("config_hash").get<std::string>())
      throw Error(ErrorCode::kValidation, "checkpoint config hash does not match its model config");
    ckpt.weights = model->init_weights(0);
    if (ckpt.weights.layout_hash() != j.at("layout_hash").get<std::string>())
      throw Error(ErrorCode::kValidation, "checkpoint layout hash does not match the model layout");
    const auto values = j.at("values").get<std::vector<double>>();
    ckpt.weights.assign_flat(values);
    if (!ckpt.weights.all_finite()) throw Error(ErrorCode::kNumeric, "checkpoint holds non-finite weights");
    ckpt.scaler = FeatureScaler::from_json(j.at("scaler"));
    if (static_cast<std::size_t>(ckpt.scaler.mean.size()) != model->input_features())
      throw Error(ErrorCode::kValidation, "checkpoint scaler width differs from the model input");
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace fedgrid::detector
