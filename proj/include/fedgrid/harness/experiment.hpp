#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedgrid/attack/attack.hpp"
#include "fedgrid/fed/federation.hpp"
#include "fedgrid/harness/metrics.hpp"

namespace fedgrid::harness {

constexpr int kConfigSchemaVersion = 1;
constexpr int kReportSchemaVersion = 1;
constexpr double kMaxNoiseLevel = 0.1;
constexpr const char* kWorkspaceEnv = "FEDGRID_WORKSPACE";

// Root for every relative path: explicit flag, else $FEDGRID_WORKSPACE, else
// the current directory.
struct Workspace {
  std::filesystem::path root;

  static Workspace resolve(const std::optional<std::string>& flag);
  std::filesystem::path operator()(const std::filesystem::path& p) const;
};

struct ExperimentConfig {
  std::string case_path = "cases/ieee14.case";
  attack::Strength strength = attack::Strength::kStrong;
  attack::PartitionSizes sizes;  // desk profile by default
  std::vector<attack::ClientSpec> clients{{2, 2, 3}, {3, 3, 4}, {4, 4, 5}, {9, 9, 14}};
  nlohmann::json model = {{"architecture", "transformer"}};
  fed::FederationConfig federation;
  std::vector<double> noise_levels{0.01, 0.02, 0.03, 0.04};
  std::uint64_t seed = 1;  // data generation and noise draws
  unsigned key_bits = 1024;  // per Paillier prime
  double measurement_sigma = 0.01;
  std::string output_dir = "run";

  ExperimentConfig();

  // Structural checks; file existence is checked against a workspace.
  void validate() const;
  void validate(const Workspace& ws) const;
  nlohmann::json to_json() const;
  // Unknown keys are config errors.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  // First 16 hex of SHA-1 over the canonical JSON form.
  std::string hash() const;
  // Switches to the full-size dataset profile.
  void use_full_sizes();
};

struct MetricsEntry {
  std::string model;  // "local", "federated", "ideal"
  int client_id = 0;
  int round = 0;
  double noise_level = 0.0;
  Metrics metrics;
};

struct MetricsReport {
  int schema_version = kReportSchemaVersion;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> dataset_digests;  // file name, digest
  std::vector<MetricsEntry> entries;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  std::string to_csv() const;
};

using Logger = std::function<void(const std::string&)>;

// One experiment rooted in a workspace. Every command reads its inputs from
// files written by earlier commands, so each can run as its own process.
class Experiment {
 public:
  Experiment(ExperimentConfig config, Workspace ws, Logger logger = {});

  const ExperimentConfig& config() const { return config_; }
  std::filesystem::path output(const std::filesystem::path& rel) const;

  void keygen(std::optional<unsigned> prime_bits = {});
  void generate_data();
  void train_local(bool with_ideal = false);
  void train_federated();
  MetricsReport evaluate();
  MetricsReport noise_sweep(const std::string& model_kind = "federated");
  nlohmann::json report();

 private:
  void log(const std::string& msg) const;
  std::vector<attack::ClientDataset> load_datasets() const;
  std::vector<std::pair<std::string, std::string>> dataset_digests() const;
  nlohmann::json model_config(std::size_t features) const;

  ExperimentConfig config_;
  Workspace ws_;
  Logger logger_;
};

// Artifact locations below the output directory.
namespace paths {
inline constexpr const char* kPublicKey = "keys/public.json";
inline constexpr const char* kPrivateKey = "keys/private.json";
inline constexpr const char* kDataDir = "data";
inline constexpr const char* kLocalLog = "logs/local_rounds.jsonl";
inline constexpr const char* kFederatedLog = "logs/federated_rounds.jsonl";
inline constexpr const char* kIdealModel = "models/ideal.json";
inline constexpr const char* kMetrics = "reports/metrics.json";
inline constexpr const char* kMetricsCsv = "reports/metrics.csv";
inline constexpr const char* kNoiseSweep = "reports/noise_sweep.json";
inline constexpr const char* kReport = "reports/report.json";
inline constexpr const char* kRoundCurve = "reports/accuracy_vs_round.csv";
inline constexpr const char* kNoiseCurve = "reports/accuracy_vs_noise.csv";
std::string model_file(const std::string& kind, int client_id);
}  // namespace paths

}  // namespace fedgrid::harness
