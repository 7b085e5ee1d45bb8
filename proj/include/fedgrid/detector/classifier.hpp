#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedgrid/attack/attack.hpp"
#include "fedgrid/detector/weights.hpp"

namespace fedgrid::detector {

// Row i of x is one sample; y holds 0/1 labels.
struct Batch {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
};

Batch make_batch(const std::vector<attack::LabeledSample>& samples);

constexpr double kProbabilityClamp = 1e-7;

// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
double bce_loss(const Eigen::VectorXd& probabilities, const Eigen::VectorXd& labels);

class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string architecture() const = 0;
  virtual std::size_t input_features() const = 0;
  virtual nlohmann::json config_json() const = 0;
  virtual ModelWeights init_weights(std::uint64_t seed) const = 0;

  // Probabilities per row. With a non-null rng the model runs in training
  // mode (dropout active, masks drawn from rng).
  virtual Eigen::VectorXd forward(const Eigen::MatrixXd& x, const ModelWeights& weights,
                                  std::mt19937_64* rng = nullptr) const = 0;

  // Mean clamped BCE over the batch; fills `gradient` (same layout as weights).
  virtual double loss_and_gradient(const Batch& batch, const ModelWeights& weights,
                                   ModelWeights& gradient, std::mt19937_64* rng = nullptr) const = 0;

  std::string config_hash() const;
};

struct TransformerConfig {
  std::size_t input_features = 0;
  std::size_t d_model = 32;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 3;
  std::size_t ff_hidden = 64;
  std::size_t head_hidden = 16;
  double dropout = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
  static TransformerConfig from_json(const nlohmann::json& j);
};

class TransformerClassifier final : public Classifier {
 public:
  explicit TransformerClassifier(TransformerConfig config);

  std::string architecture() const override { return "transformer"; }
  std::size_t input_features() const override { return config_.input_features; }
  nlohmann::json config_json() const override;
  ModelWeights init_weights(std::uint64_t seed) const override;
  Eigen::VectorXd forward(const Eigen::MatrixXd& x, const ModelWeights& weights,
                          std::mt19937_64* rng = nullptr) const override;
  double loss_and_gradient(const Batch& batch, const ModelWeights& weights, ModelWeights& gradient,
                           std::mt19937_64* rng = nullptr) const override;

  const TransformerConfig& config() const { return config_; }

 private:
  struct Cache;
  Eigen::VectorXd run_forward(const Eigen::MatrixXd& x, const ModelWeights& w, std::mt19937_64* rng,
                              Cache* cache) const;

  TransformerConfig config_;
  Eigen::MatrixXd pe_;
};

// Feed-forward baseline: two ReLU hidden layers and a sigmoid output.
struct MlpConfig {
  std::size_t input_features = 0;
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 32;

  void validate() const;
  nlohmann::json to_json() const;
  static MlpConfig from_json(const nlohmann::json& j);
};

class MlpClassifier final : public Classifier {
 public:
  explicit MlpClassifier(MlpConfig config);

  std::string architecture() const override { return "mlp"; }
  std::size_t input_features() const override { return config_.input_features; }
  nlohmann::json config_json() const override;
  ModelWeights init_weights(std::uint64_t seed) const override;
  Eigen::VectorXd forward(const Eigen::MatrixXd& x, const ModelWeights& weights,
                          std::mt19937_64* rng = nullptr) const override;
  double loss_and_gradient(const Batch& batch, const ModelWeights& weights, ModelWeights& gradient,
                           std::mt19937_64* rng = nullptr) const override;

 private:
  MlpConfig config_;
};

// Builds a classifier from config_json() output.
std::unique_ptr<Classifier> make_classifier(const nlohmann::json& config);

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Eigen::MatrixXd xavier_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

struct Prediction {
  int label = 0;
  double probability = 0.0;
};
// label = 1 iff probability >= 0.5.
int decide(double probability);
std::vector<Prediction> predict(const Classifier& model, const ModelWeights& weights,
                                const Eigen::MatrixXd& x);

// Per-feature standardization fitted on a client's local training set.
struct FeatureScaler {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static FeatureScaler fit(const Eigen::MatrixXd& x);
  static FeatureScaler identity(std::size_t features);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  nlohmann::json to_json() const;
  static FeatureScaler from_json(const nlohmann::json& j);
};

struct TrainHistory {
  std::vector<double> epoch_loss;
};

// E epochs of shuffled minibatch Adam. Shuffles and dropout masks derive from
// (config.seed, state.epochs_done), so continuing training across calls keeps
// drawing fresh permutations.
TrainHistory train_local(const Classifier& model, const Batch& data, ModelWeights& weights,
                         OptimizerState& state, const TrainConfig& config);

struct Checkpoint {
  nlohmann::json model_config;
  ModelWeights weights;
  FeatureScaler scaler;
};

constexpr int kCheckpointVersion = 1;

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fedgrid::detector
