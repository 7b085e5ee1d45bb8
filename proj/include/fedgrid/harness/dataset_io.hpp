#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedgrid/attack/attack.hpp"

namespace fedgrid::harness {

constexpr int kDatasetSchemaVersion = 1;

// Provenance written next to every dataset CSV.
struct DatasetSidecar {
  int schema_version = kDatasetSchemaVersion;
  std::string measurement_schema;  // MeasurementSchema::kSchemaTag
  int client_id = 0;
  attack::ClientSpec client;
  std::string split;  // "train" or "test"
  std::string strength;
  double noise_level = 0.0;
  std::uint64_t seed = 0;
  std::size_t rows = 0;
  std::size_t features = 0;
  std::string case_digest;  // git blob digest of the network case file
  std::string digest;       // git blob digest of the CSV bytes

  nlohmann::json to_json() const;
  static DatasetSidecar from_json(const nlohmann::json& j);
};

// Header: feature names then "label"; values printed with %.17g.
std::string samples_to_csv(const attack::FeatureLayout& layout, const std::vector<attack::LabeledSample>& rows);

struct ParsedCsv {
  attack::FeatureLayout layout;
  std::vector<attack::LabeledSample> rows;
};
ParsedCsv samples_from_csv(const std::string& text);

std::filesystem::path dataset_csv_path(const std::filesystem::path& dir, int client_id, const std::string& split);
std::filesystem::path sidecar_path(const std::filesystem::path& csv);

// Writes CSV + sidecar; fills sidecar.rows/features/digest. Returns the sidecar.
DatasetSidecar write_split(const std::filesystem::path& dir, const attack::ClientDataset& ds,
                           const std::string& split, DatasetSidecar sidecar);

// Loads both splits of one client and checks digests, headers and row counts.
attack::ClientDataset read_client_dataset(const std::filesystem::path& dir, int client_id,
                                          DatasetSidecar* train_meta = nullptr);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace fedgrid::harness
