#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedgrid/attack/attack.hpp"
#include "fedgrid/crypto/paillier.hpp"
#include "fedgrid/detector/classifier.hpp"
#include "fedgrid/harness/metrics.hpp"

namespace fedgrid::fed {

constexpr int kMaxRounds = 9;
constexpr std::size_t kMinClients = 2;
// Largest tolerated gap between the decrypted average and the plaintext one.
constexpr double kFidelityTolerance = 1e-7;

struct FederationConfig {
  int rounds = 6;  // R; 0 means local training only
  detector::TrainConfig train;
  crypto::EncodingParams encoding;
  std::uint64_t seed = 1;  // initial weights and per-client training streams

  void validate(std::size_t clients) const;
  nlohmann::json to_json() const;
  static FederationConfig from_json(const nlohmann::json& j);
};

// Per-client training stream, independent across clients.
std::uint64_t client_train_seed(std::uint64_t master, int client_id);

// Client to cloud. Carries ciphertexts only.
struct UploadMessage {
  int client_id = 0;
  int round = 0;
  std::string key_id;
  std::string layout_hash;
  std::vector<std::string> ciphertexts;  // hex, one per weight

  nlohmann::json to_json() const;
  // Rejects unknown fields.
  static UploadMessage from_json(const nlohmann::json& j);
  std::string wire() const { return to_json().dump(); }
  static UploadMessage parse(const std::string& wire);
};

// Cloud to clients: elementwise ciphertext products.
struct AggregateMessage {
  int round = 0;
  std::size_t clients = 0;
  std::string key_id;
  std::string layout_hash;
  std::vector<std::string> ciphertexts;

  nlohmann::json to_json() const;
  static AggregateMessage from_json(const nlohmann::json& j);
  std::string wire() const { return to_json().dump(); }
  static AggregateMessage parse(const std::string& wire);
};

// A participant holding private data. Nothing but weights and metrics leaves
// the node; the only outbound channel is `upload`, which emits ciphertexts.
class ClientNode {
 public:
  ClientNode(attack::ClientDataset data, std::shared_ptr<const detector::Classifier> model,
             const detector::ModelWeights& initial, detector::TrainConfig train);

  int id() const { return id_; }
  const attack::ClientSpec& spec() const { return spec_; }
  const attack::FeatureLayout& layout() const { return layout_; }
  std::size_t train_size() const { return train_.size(); }
  std::size_t test_size() const { return test_.size(); }
  const detector::ModelWeights& weights() const { return weights_; }
  const detector::FeatureScaler& scaler() const { return scaler_; }
  const detector::TrainConfig& train_config() const { return train_config_; }

  // Runs train_config().epochs epochs; returns the last epoch's mean loss.
  double train_epochs();
  harness::Metrics evaluate() const;
  // Test set with Gaussian measurement noise applied before scaling.
  harness::Metrics evaluate_noisy(double level, std::uint64_t noise_seed) const;

  std::string upload(int round, const crypto::PublicKey& pub, const crypto::EncodingParams& enc,
                     crypto::RandomSource& rng) const;
  // Decrypts, decodes and installs the averaged weights. Returns them flat.
  std::vector<double> apply_aggregate(const std::string& wire, int round, const crypto::PublicKey& pub,
                                      const crypto::PrivateKey& priv, const crypto::EncodingParams& enc);

  // Plaintext install of already averaged weights.
  void install_weights(std::span<const double> flat);

  detector::Checkpoint checkpoint() const;

 private:
  int id_;
  attack::ClientSpec spec_;
  attack::FeatureLayout layout_;
  std::vector<attack::LabeledSample> raw_test_;
  detector::FeatureScaler scaler_;
  detector::Batch train_;
  detector::Batch test_;
  std::shared_ptr<const detector::Classifier> model_;
  detector::ModelWeights weights_;
  detector::OptimizerState optimizer_;
  detector::TrainConfig train_config_;
};

// Holds only the public key; multiplies ciphertexts elementwise.
class CloudServer {
 public:
  explicit CloudServer(crypto::PublicKey pub) : pub_(std::move(pub)) {}
  std::string aggregate(int round, const std::vector<std::string>& uploads) const;

 private:
  crypto::PublicKey pub_;
};

// Plaintext oracle: mean of clipped weights.
std::vector<double> plain_fedavg(const std::vector<std::vector<double>>& client_weights,
                                 const crypto::EncodingParams& enc);

struct RoundTimings {
  double train_s = 0.0;
  double encrypt_s = 0.0;
  double aggregate_s = 0.0;
  double decrypt_s = 0.0;
};

struct RoundLog {
  int round = 0;  // 0 = local-only training
  int client_id = 0;
  double train_loss = 0.0;
  harness::Metrics pre;   // after local training
  harness::Metrics post;  // after installing the aggregate (= pre in round 0)
  std::optional<double> fidelity;  // max |secure - plaintext| over weights
  bool consensus = true;
  RoundTimings timings;

  nlohmann::json to_json() const;
};

using RoundObserver = std::function<void(const RoundLog&)>;

struct FederationResult {
  std::vector<RoundLog> logs;
  // Final metrics per client, in client order.
  std::vector<harness::Metrics> final_metrics;
};

// Builds one node per dataset from a shared initial model.
std::vector<ClientNode> make_clients(const std::vector<attack::ClientDataset>& datasets,
                                     std::shared_ptr<const detector::Classifier> model,
                                     const FederationConfig& config);

// R = 0: E epochs of local training. Each round r >= 1: E local epochs, encrypted
// upload, ciphertext aggregation, decryption by every client, weight install.
FederationResult run_secfed(std::vector<ClientNode>& clients, const FederationConfig& config,
                            const crypto::KeyPair& keys, crypto::RandomSource& rng,
                            const RoundObserver& observer = {});

// Same schedule with plaintext averaging; the oracle for run_secfed.
FederationResult run_plain_fedavg(std::vector<ClientNode>& clients, const FederationConfig& config,
                                  const RoundObserver& observer = {});

// E local epochs per client, no communication (= run_secfed with R = 0).
FederationResult run_local_baseline(std::vector<ClientNode>& clients, const FederationConfig& config,
                                    const RoundObserver& observer = {});

// Centralized reference: one model on the union of all training sets, evaluated
// on every client's test set. Needs identical layout widths and bus features.
struct IdealResult {
  detector::ModelWeights weights;
  detector::FeatureScaler scaler;
  std::vector<harness::Metrics> client_metrics;
};
IdealResult run_ideal_baseline(const std::vector<attack::ClientDataset>& datasets,
                               const detector::Classifier& model, const FederationConfig& config,
                               int total_epochs);

void write_round_logs(const std::vector<RoundLog>& logs, const std::string& path);

}  // namespace fedgrid::fed
