#include "fedgrid/harness/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedgrid/error.hpp"
#include "fedgrid/util/digest.hpp"

namespace fedgrid::harness {

namespace fs = std::filesystem;
using nlohmann::json;

json DatasetSidecar::to_json() const {
  return {{"schema_version", schema_version},
          {"measurement_schema", measurement_schema},
          {"client_id", client_id},
          {"client", {{"bus", client.bus}, {"branch", {client.branch_from, client.branch_to}}}},
          {"split", split},
          {"strength", strength},
          {"noise_level", noise_level},
          {"seed", seed},
          {"rows", rows},
          {"features", features},
          {"case_digest", case_digest},
          {"digest", digest}};
}

DatasetSidecar DatasetSidecar::from_json(const json& j) {
  try {
    DatasetSidecar s;
    s.schema_version = j.at("schema_version").get<int>();
    if (s.schema_version != kDatasetSchemaVersion)
      throw Error(ErrorCode::kParse, "unsupported dataset schema version " + std::to_string(s.schema_version));
    s.measurement_schema = j.at("measurement_schema").get<std::string>();
    s.client_id = j.at("client_id").get<int>();
    s.client.bus = j.at("client").at("bus").get<int>();
    const auto branch = j.at("client").at("branch").get<std::vector<int>>();
    if (branch.size() != 2) throw Error(ErrorCode::kParse, "sidecar branch must have two buses");
    s.client.branch_from = branch[0];
    s.client.branch_to = branch[1];
    s.split = j.at("split").get<std::string>();
    s.strength = j.at("strength").get<std::string>();
    s.noise_level = j.at("noise_level").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.rows = j.at("rows").get<std::size_t>();
    s.features = j.at("features").get<std::size_t>();
    s.case_digest = j.at("case_digest").get<std::string>();
    s.digest = j.at("digest").get<std::string>();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("dataset sidecar: ") + e.what());
  }
}

std::string samples_to_csv(const attack::FeatureLayout& layout, const std::vector<attack::LabeledSample>& rows) {
  std::string out;
  for (const auto& name : layout.names) out += name + ",";
  out += "label\n";
  char buf[32];
  for (const auto& r : rows) {
    if (r.features.size() != layout.size())
      throw Error(ErrorCode::kDimension, "csv row has " + std::to_string(r.features.size()) + " values for " +
                                             std::to_string(layout.size()) + " columns");
    for (double v : r.features) {
      std::snprintf(buf, sizeof buf, "%.17g,", v);
      out += buf;
    }
    out += std::to_string(r.label) + "\n";
  }
  return out;
}

ParsedCsv samples_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw Error(ErrorCode::kParse, "csv: missing header");
  ParsedCsv out;
  {
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) out.layout.names.push_back(cell);
  }
  if (out.layout.names.size() < 2 || out.layout.names.back() != "label")
    throw Error(ErrorCode::kParse, "csv: header must end with a 'label' column");
  out.layout.names.pop_back();
  const std::size_t width = out.layout.size();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    attack::LabeledSample s;
    s.features.reserve(width);
    const char* p = line.data();
    const char* end = p + line.size();
    for (std::size_t col = 0; col <= width; ++col) {
      const char* stop = col < width ? std::find(p, end, ',') : end;
      double v = 0.0;
      const auto res = std::from_chars(p, stop, v);
      if (res.ec != std::errc() || res.ptr != stop)
        throw Error(ErrorCode::kParse, "csv line " + std::to_string(line_no) + ", column " + std::to_string(col + 1) +
                                           ": not a number");
      if (col < width) {
        s.features.push_back(v);
        if (stop == end) throw Error(ErrorCode::kParse, "csv line " + std::to_string(line_no) + ": too few columns");
        p = stop + 1;
      } else {
        if (v != 0.0 && v != 1.0) throw Error(ErrorCode::kParse, "csv line " + std::to_string(line_no) + ": label must be 0 or 1");
        s.label = static_cast<int>(v);
      }
    }
    out.rows.push_back(std::move(s));
  }
  return out;
}

fs::path dataset_csv_path(const fs::path& dir, int client_id, const std::string& split) {
  return dir / ("client" + std::to_string(client_id) + "_" + split + ".csv");
}

fs::path sidecar_path(const fs::path& csv) {
  auto p = csv;
  p.replace_extension(".json");
  return p;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

DatasetSidecar write_split(const fs::path& dir, const attack::ClientDataset& ds, const std::string& split,
                           DatasetSidecar sidecar) {
  const auto& rows = split == "train" ? ds.train : ds.test;
  const std::string csv = samples_to_csv(ds.layout, rows);
  const auto path = dataset_csv_path(dir, ds.client_id, split);
  write_text_file(path, csv);
  sidecar.client_id = ds.client_id;
  sidecar.client = ds.client;
  sidecar.split = split;
  sidecar.rows = rows.size();
  sidecar.features = ds.layout.size();
  sidecar.digest = util::git_blob_digest(csv);
  write_text_file(sidecar_path(path), sidecar.to_json().dump(2) + "\n");
  return sidecar;
}

namespace {

std::pair<ParsedCsv, DatasetSidecar> read_split(const fs::path& dir, int client_id, const std::string& split) {
  const auto path = dataset_csv_path(dir, client_id, split);
  const std::string csv = read_text_file(path);
  const auto meta = DatasetSidecar::from_json([&] {
    try {
      return json::parse(read_text_file(sidecar_path(path)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, sidecar_path(path).string() + ": " + e.what());
    }
  }());
  if (util::git_blob_digest(csv) != meta.digest)
    throw Error(ErrorCode::kValidation, path.string() + ": content digest does not match its sidecar");
  auto parsed = samples_from_csv(csv);
  if (parsed.rows.size() != meta.rows || parsed.layout.size() != meta.features)
    throw Error(ErrorCode::kValidation, path.string() + ": shape differs from its sidecar");
  if (meta.client_id != client_id || meta.split != split)
    throw Error(ErrorCode::kValidation, path.string() + ": sidecar describes another split");
  return {std::move(parsed), meta};
}

}  // namespace

attack::ClientDataset read_client_dataset(const fs::path& dir, int client_id, DatasetSidecar* train_meta) {
  auto [train, train_side] = read_split(dir, client_id, "train");
  auto [test, test_side] = read_split(dir, client_id, "test");
  if (!(train.layout == test.layout))
    throw Error(ErrorCode::kValidation, "client " + std::to_string(client_id) + ": train and test headers differ");
  attack::ClientDataset ds;
  ds.client_id = client_id;
  ds.client = train_side.client;
  ds.layout = std::move(train.layout);
  ds.train = std::move(train.rows);
  ds.test = std::move(test.rows);
  if (train_meta) *train_meta = train_side;
  return ds;
}

}  // namespace fedgrid::harness
