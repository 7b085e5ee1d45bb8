#include "fedgrid/harness/experiment.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "fedgrid/crypto/paillier.hpp"
#include "fedgrid/error.hpp"
#include "fedgrid/grid/measurement.hpp"
#include "fedgrid/grid/network.hpp"
#include "fedgrid/harness/dataset_io.hpp"
#include "fedgrid/util/digest.hpp"

namespace fedgrid::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Noise draws per client share one stream across levels, so each level scales
// the same standard-normal perturbation.
constexpr std::uint64_t kSweepNoiseBase = 1000;

json parse_json_file(const fs::path& path, ErrorCode code) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(code, path.string() + ": " + e.what());
  }
}

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), std::string(name) + ": " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::kIo, std::string(name) + ": " + e.what());
  }
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string opt_csv(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string metrics_csv_cells(const Metrics& m) {
  return std::to_string(m.counts.tp) + "," + std::to_string(m.counts.fp) + "," + std::to_string(m.counts.tn) + "," +
         std::to_string(m.counts.fn) + "," + opt_csv(m.accuracy) + "," + opt_csv(m.precision) + "," +
         opt_csv(m.recall) + "," + opt_csv(m.f1);
}

constexpr const char* kMetricsCsvHeader = "tp,fp,tn,fn,accuracy,precision,recall,f1";

Metrics score_checkpoint(const detector::Checkpoint& ckpt, const std::vector<attack::LabeledSample>& samples) {
  const auto model = detector::make_classifier(ckpt.model_config);
  const auto batch = detector::make_batch(samples);
  if (static_cast<std::size_t>(batch.x.cols()) != model->input_features())
    throw Error(ErrorCode::kDimension, "checkpoint expects " + std::to_string(model->input_features()) +
                                           " features, data has " + std::to_string(batch.x.cols()));
  const auto preds = detector::predict(*model, ckpt.weights, ckpt.scaler.apply(batch.x));
  std::vector<int> p, y;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.push_back(preds[i].label);
    y.push_back(samples[i].label);
  }
  return compute_metrics(p, y);
}

void save_report_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

}  // namespace

// ---- workspace ----

Workspace Workspace::resolve(const std::optional<std::string>& flag) {
  fs::path root;
  if (flag && !flag->empty()) root = *flag;
  else if (const char* env = std::getenv(kWorkspaceEnv); env && *env) root = env;
  else root = fs::current_path();
  std::error_code ec;
  if (!fs::is_directory(root, ec))
    throw Error(ErrorCode::kConfig, "workspace " + root.string() + " is not a directory");
  return {fs::absolute(root)};
}

fs::path Workspace::operator()(const fs::path& p) const { return p.is_absolute() ? p : root / p; }

// ---- config ----

ExperimentConfig::ExperimentConfig() {
  federation.rounds = 6;
  federation.train.epochs = 50;
}

void ExperimentConfig::use_full_sizes() { sizes = attack::PartitionSizes::full(); }

void ExperimentConfig::validate() const {
  if (case_path.empty()) throw Error(ErrorCode::kConfig, "case path is empty");
  if (sizes.train_per_class < 1 || sizes.test_per_class < 1)
    throw Error(ErrorCode::kConfig, "dataset sizes must be at least 1 per class");
  federation.validate(clients.size());
  std::set<std::pair<int, int>> seen;
  for (const auto& c : clients)
    if (!seen.insert({c.branch_from, c.branch_to}).second)
      throw Error(ErrorCode::kConfig, "two clients monitor branch " + std::to_string(c.branch_from) + "-" +
                                          std::to_string(c.branch_to));
  for (double level : noise_levels)
    if (!(level >= 0.0 && level <= kMaxNoiseLevel))
      throw Error(ErrorCode::kConfig, "noise level " + fmt(level) + " outside [0, " + fmt(kMaxNoiseLevel) + "]");
  if (key_bits < 16) throw Error(ErrorCode::kConfig, "key_bits must be at least 16");
  if (!(measurement_sigma > 0.0)) throw Error(ErrorCode::kConfig, "measurement_sigma must be positive");
  if (output_dir.empty()) throw Error(ErrorCode::kConfig, "output_dir is empty");
  auto probe = model;
  probe["input_features"] = 2;
  try {
    detector::make_classifier(probe);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, std::string("model: ") + e.what());
  }
}

void ExperimentConfig::validate(const Workspace& ws) const {
  validate();
  if (!fs::is_regular_file(ws(case_path)))
    throw Error(ErrorCode::kConfig, "case file " + ws(case_path).string() + " does not exist");
}

json ExperimentConfig::to_json() const {
  json cl = json::array();
  for (const auto& c : clients) cl.push_back({{"bus", c.bus}, {"branch", {c.branch_from, c.branch_to}}});
  return {{"schema_version", kConfigSchemaVersion},
          {"case", case_path},
          {"strength", attack::to_string(strength)},
          {"sizes", {{"train_per_class", sizes.train_per_class}, {"test_per_class", sizes.test_per_class}}},
          {"clients", cl},
          {"model", model},
          {"federation", federation.to_json()},
          {"noise_levels", noise_levels},
          {"seed", seed},
          {"key_bits", key_bits},
          {"measurement_sigma", measurement_sigma},
          {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  static const std::set<std::string> known{"schema_version", "case",         "strength",   "sizes",
                                           "clients",        "model",        "federation", "noise_levels",
                                           "seed",           "key_bits",     "measurement_sigma", "output_dir"};
  if (!j.is_object()) throw Error(ErrorCode::kConfig, "experiment config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) throw Error(ErrorCode::kConfig, "unknown config key '" + key + "'");
  }
  try {
    ExperimentConfig c;
    if (j.value("schema_version", kConfigSchemaVersion) != kConfigSchemaVersion)
      throw Error(ErrorCode::kConfig, "unsupported config schema_version");
    c.case_path = j.value("case", c.case_path);
    if (j.contains("strength")) c.strength = attack::strength_from_string(j.at("strength").get<std::string>());
    if (j.contains("sizes")) {
      c.sizes.train_per_class = j.at("sizes").value("train_per_class", c.sizes.train_per_class);
      c.sizes.test_per_class = j.at("sizes").value("test_per_class", c.sizes.test_per_class);
    }
    if (j.contains("clients")) {
      c.clients.clear();
      for (const auto& e : j.at("clients")) {
        const auto br = e.at("branch").get<std::vector<int>>();
        if (br.size() != 2) throw Error(ErrorCode::kConfig, "client branch must list two buses");
        c.clients.push_back({e.at("bus").get<int>(), br[0], br[1]});
      }
    }
    if (j.contains("model")) {
      c.model = j.at("model");
      if (!c.model.is_object()) throw Error(ErrorCode::kConfig, "model must be an object");
      if (c.model.contains("input_features"))
        throw Error(ErrorCode::kConfig, "model.input_features is derived from the data; remove it");
    }
    if (j.contains("federation")) {
      auto base = c.federation.to_json();
      base.merge_patch(j.at("federation"));
      c.federation = fed::FederationConfig::from_json(base);
    }
    c.noise_levels = j.value("noise_levels", c.noise_levels);
    c.seed = j.value("seed", c.seed);
    c.key_bits = j.value("key_bits", c.key_bits);
    c.measurement_sigma = j.value("measurement_sigma", c.measurement_sigma);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("experiment config: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  try {
    return from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
}

std::string ExperimentConfig::hash() const { return util::sha1_hex(to_json().dump()).substr(0, 16); }

// ---- reports ----

json MetricsReport::to_json() const {
  json digests = json::array();
  for (const auto& [file, digest] : dataset_digests) digests.push_back({{"file", file}, {"digest", digest}});
  json rows = json::array();
  for (const auto& e : entries)
    rows.push_back({{"model", e.model},
                    {"client_id", e.client_id},
                    {"round", e.round},
                    {"noise_level", e.noise_level},
                    {"metrics", e.metrics.to_json()}});
  return {{"schema_version", schema_version}, {"config_hash", config_hash}, {"datasets", digests}, {"entries", rows}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  try {
    MetricsReport r;
    r.schema_version = j.at("schema_version").get<int>();
    r.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& d : j.at("datasets"))
      r.dataset_digests.emplace_back(d.at("file").get<std::string>(), d.at("digest").get<std::string>());
    for (const auto& e : j.at("entries"))
      r.entries.push_back({e.at("model").get<std::string>(), e.at("client_id").get<int>(), e.at("round").get<int>(),
                           e.at("noise_level").get<double>(), Metrics::from_json(e.at("metrics"))});
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("metrics report: ") + e.what());
  }
}

std::string MetricsReport::to_csv() const {
  std::string out = std::string("model,client_id,round,noise_level,") + kMetricsCsvHeader + "\n";
  for (const auto& e : entries)
    out += e.model + "," + std::to_string(e.client_id) + "," + std::to_string(e.round) + "," + fmt(e.noise_level) +
           "," + metrics_csv_cells(e.metrics) + "\n";
  return out;
}

std::string paths::model_file(const std::string& kind, int client_id) {
  return "models/" + kind + "_client" + std::to_string(client_id) + ".json";
}

// ---- experiment ----

Experiment::Experiment(ExperimentConfig config, Workspace ws, Logger logger)
    : config_(std::move(config)), ws_(std::move(ws)), logger_(std::move(logger)) {
  config_.validate(ws_);
}

fs::path Experiment::output(const fs::path& rel) const { return ws_(config_.output_dir) / rel; }

void Experiment::log(const std::string& msg) const {
  if (logger_) logger_(msg);
}

json Experiment::model_config(std::size_t features) const {
  auto j = config_.model;
  j["input_features"] = features;
  return detector::make_classifier(j)->config_json();
}

void Experiment::keygen(std::optional<unsigned> prime_bits) {
  stage("keygen", [&] {
    const unsigned bits = prime_bits.value_or(config_.key_bits);
    if (bits < 16) throw Error(ErrorCode::kConfig, "prime size must be at least 16 bits");
    log("generating Paillier keypair with " + std::to_string(bits) + "-bit primes");
    auto rng = crypto::RandomSource::from_entropy();
    const auto keys = crypto::generate_keypair(bits, rng);
    try {
      crypto::check_capacity(config_.clients.size(), config_.federation.encoding, keys.pub);
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig, e.what());
    }
    write_text_file(output(paths::kPublicKey), crypto::to_json(keys.pub).dump(2) + "\n");
    write_text_file(output(paths::kPrivateKey), crypto::to_json(keys.priv).dump(2) + "\n");
    fs::permissions(output(paths::kPrivateKey), fs::perms::owner_read | fs::perms::owner_write,
                    fs::perm_options::replace);
    log("key id " + keys.pub.key_id);
  });
}

void Experiment::generate_data() {
  stage("generate-data", [&] {
    const auto case_file = ws_(config_.case_path);
    const auto net = grid::load_case(case_file);
    const auto schema = grid::MeasurementSchema::default_for(net, config_.measurement_sigma);
    const std::size_t pool = config_.clients.size() * (config_.sizes.train_per_class + config_.sizes.test_per_class);
    log("generating " + std::to_string(pool) + " normal and " + std::to_string(pool) + " " +
        attack::to_string(config_.strength) + " samples");
    const auto normal = attack::generate_normal_samples(net, schema, pool, config_.seed);
    std::vector<grid::MeasurementVector> compromised;
    compromised.reserve(pool);
    for (auto& c : attack::generate_compromised_samples(net, schema, pool, config_.strength, config_.seed))
      compromised.push_back(std::move(c.z_attacked));
    const auto clients = attack::partition_clients(normal, compromised, net, schema, config_.clients, config_.sizes);

    DatasetSidecar base;
    base.measurement_schema = grid::MeasurementSchema::kSchemaTag;
    base.strength = attack::to_string(config_.strength);
    base.seed = config_.seed;
    base.case_digest = util::git_blob_digest_of_file(case_file.string());
    for (const auto& ds : clients)
      for (const char* split : {"train", "test"}) {
        const auto side = write_split(output(paths::kDataDir), ds, split, base);
        log("client " + std::to_string(ds.client_id) + " " + split + ": " + std::to_string(side.rows) + " rows, " +
            side.digest);
      }
  });
}

std::vector<attack::ClientDataset> Experiment::load_datasets() const {
  std::vector<attack::ClientDataset> out;
  for (std::size_t k = 0; k < config_.clients.size(); ++k) {
    DatasetSidecar meta;
    auto ds = read_client_dataset(output(paths::kDataDir), static_cast<int>(k), &meta);
    const auto& want = config_.clients[k];
    const bool matches = meta.client.bus == want.bus && meta.client.branch_from == want.branch_from &&
                         meta.client.branch_to == want.branch_to &&
                         meta.strength == attack::to_string(config_.strength) && meta.seed == config_.seed &&
                         ds.train.size() == 2 * config_.sizes.train_per_class &&
                         ds.test.size() == 2 * config_.sizes.test_per_class;
    if (!matches)
      throw Error(ErrorCode::kValidation, "client " + std::to_string(k) +
                                              " data was generated for a different configuration; rerun generate-data");
    out.push_back(std::move(ds));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> Experiment::dataset_digests() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t k = 0; k < config_.clients.size(); ++k)
    for (const char* split : {"train", "test"}) {
      const auto csv = dataset_csv_path(output(paths::kDataDir), static_cast<int>(k), split);
      out.emplace_back(csv.filename().string(), util::git_blob_digest_of_file(csv.string()));
    }
  return out;
}

void Experiment::train_local(bool with_ideal) {
  stage("train-local", [&] {
    const auto datasets = load_datasets();
    std::shared_ptr<const detector::Classifier> model =
        detector::make_classifier(model_config(datasets.front().layout.size()));
    auto nodes = fed::make_clients(datasets, model, config_.federation);
    const auto result = fed::run_local_baseline(nodes, config_.federation, [&](const fed::RoundLog& l) {
      log("local client " + std::to_string(l.client_id) + ": loss " + fmt(l.train_loss) + ", accuracy " +
          opt_csv(l.post.accuracy));
    });
    fed::write_round_logs(result.logs, output(paths::kLocalLog).string());
    for (const auto& n : nodes) {
      fs::create_directories(output("models"));
      detector::save_checkpoint(n.checkpoint(), output(paths::model_file("local", n.id())).string());
    }
    if (with_ideal) {
      const int epochs = config_.federation.train.epochs * std::max(config_.federation.rounds, 1);
      log("training pooled reference model for " + std::to_string(epochs) + " epochs");
      const auto ideal = fed::run_ideal_baseline(datasets, *model, config_.federation, epochs);
      detector::save_checkpoint({model->config_json(), ideal.weights, ideal.scaler}, output(paths::kIdealModel).string());
    }
  });
}

void Experiment::train_federated() {
  stage("train-federated", [&] {
    const auto pub = crypto::public_key_from_json(parse_json_file(output(paths::kPublicKey), ErrorCode::kParse));
    const auto priv = crypto::private_key_from_json(parse_json_file(output(paths::kPrivateKey), ErrorCode::kParse));
    if (pub.key_id != priv.key_id)
      throw Error(ErrorCode::kKeyMismatch, "public and private key files belong to different keypairs");
    const auto datasets = load_datasets();
    std::shared_ptr<const detector::Classifier> model =
        detector::make_classifier(model_config(datasets.front().layout.size()));
    auto nodes = fed::make_clients(datasets, model, config_.federation);
    auto rng = crypto::RandomSource::from_entropy();
    const auto result = fed::run_secfed(nodes, config_.federation, {pub, priv}, rng, [&](const fed::RoundLog& l) {
      log("round " + std::to_string(l.round) + " client " + std::to_string(l.client_id) + ": loss " +
          fmt(l.train_loss) + ", accuracy pre " + opt_csv(l.pre.accuracy) + " post " + opt_csv(l.post.accuracy));
    });
    fed::write_round_logs(result.logs, output(paths::kFederatedLog).string());
    fs::create_directories(output("models"));
    for (const auto& n : nodes)
      detector::save_checkpoint(n.checkpoint(), output(paths::model_file("federated", n.id())).string());
  });
}

MetricsReport Experiment::evaluate() {
  return stage("evaluate", [&] {
    const auto datasets = load_datasets();
    MetricsReport report;
    report.config_hash = config_.hash();
    report.dataset_digests = dataset_digests();
    for (const auto& [kind, round] : {std::pair<std::string, int>{"local", 0}, {"federated", config_.federation.rounds}})
      for (const auto& ds : datasets) {
        const auto path = output(paths::model_file(kind, ds.client_id));
        if (!fs::exists(path)) continue;
        report.entries.push_back({kind, ds.client_id, round, 0.0,
                                  score_checkpoint(detector::load_checkpoint(path.string()), ds.test)});
      }
    if (fs::exists(output(paths::kIdealModel))) {
      const auto ckpt = detector::load_checkpoint(output(paths::kIdealModel).string());
      for (const auto& ds : datasets)
        report.entries.push_back({"ideal", ds.client_id, config_.federation.rounds, 0.0, score_checkpoint(ckpt, ds.test)});
    }
    if (report.entries.empty()) throw Error(ErrorCode::kIo, "no trained checkpoints found; run train-local or train-federated");
    save_report_json(output(paths::kMetrics), report.to_json());
    write_text_file(output(paths::kMetricsCsv), report.to_csv());
    return report;
  });
}

MetricsReport Experiment::noise_sweep(const std::string& model_kind) {
  return stage("noise-sweep", [&] {
    if (model_kind != "local" && model_kind != "federated" && model_kind != "ideal")
      throw Error(ErrorCode::kConfig, "unknown model kind '" + model_kind + "'");
    const auto datasets = load_datasets();
    MetricsReport report;
    report.config_hash = config_.hash();
    report.dataset_digests = dataset_digests();
    const int round = model_kind == "local" ? 0 : config_.federation.rounds;
    for (const auto& ds : datasets) {
      const auto path = model_kind == "ideal" ? output(paths::kIdealModel) : output(paths::model_file(model_kind, ds.client_id));
      if (!fs::exists(path)) throw Error(ErrorCode::kIo, "missing checkpoint " + path.string());
      const auto ckpt = detector::load_checkpoint(path.string());
      const auto noise_seed = attack::derive_seed(config_.seed, attack::kNoiseStream,
                                                  kSweepNoiseBase + static_cast<std::uint64_t>(ds.client_id));
      for (double level : config_.noise_levels) {
        const auto noisy = attack::add_measurement_noise(ds.test, level, noise_seed);
        report.entries.push_back({model_kind, ds.client_id, round, level, score_checkpoint(ckpt, noisy)});
        log(model_kind + " client " + std::to_string(ds.client_id) + " noise " + fmt(level) + ": accuracy " +
            opt_csv(report.entries.back().metrics.accuracy));
      }
    }
    save_report_json(output(paths::kNoiseSweep), report.to_json());
    return report;
  });
}

json Experiment::report() {
  return stage("report", [&] {
    json rounds = json::array();
    std::string round_csv = std::string("model,client_id,round,stage,") + kMetricsCsvHeader + "\n";
    auto add_log = [&](const fs::path& path, const std::string& kind) {
      if (!fs::exists(path)) return;
      std::istringstream in(read_text_file(path));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec;
        try {
          rec = json::parse(line);
        } catch (const json::exception& e) {
          throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
        }
        const int round = rec.at("round").get<int>();
        const int client = rec.at("client_id").get<int>();
        const auto pre = Metrics::from_json(rec.at("pre"));
        const auto post = Metrics::from_json(rec.at("post"));
        rounds.push_back({{"model", kind}, {"client_id", client}, {"round", round},
                          {"pre", pre.to_json()}, {"post", post.to_json()},
                          {"fidelity_max_abs_error", rec.at("fidelity_max_abs_error")}});
        const std::string prefix = kind + "," + std::to_string(client) + "," + std::to_string(round) + ",";
        if (round > 0) round_csv += prefix + "pre," + metrics_csv_cells(pre) + "\n";
        round_csv += prefix + "post," + metrics_csv_cells(post) + "\n";
      }
    };
    add_log(output(paths::kLocalLog), "local");
    add_log(output(paths::kFederatedLog), "federated");

    json noise = json::array();
    std::string noise_csv = std::string("model,client_id,noise_level,") + kMetricsCsvHeader + "\n";
    if (fs::exists(output(paths::kNoiseSweep))) {
      const auto sweep = MetricsReport::from_json(parse_json_file(output(paths::kNoiseSweep), ErrorCode::kParse));
      for (const auto& e : sweep.entries) {
        noise.push_back({{"model", e.model}, {"client_id", e.client_id}, {"noise_level", e.noise_level},
                         {"metrics", e.metrics.to_json()}});
        noise_csv += e.model + "," + std::to_string(e.client_id) + "," + fmt(e.noise_level) + "," +
                     metrics_csv_cells(e.metrics) + "\n";
      }
    }
    json final_metrics = json::array();
    if (fs::exists(output(paths::kMetrics)))
      final_metrics = MetricsReport::from_json(parse_json_file(output(paths::kMetrics), ErrorCode::kParse)).to_json()["entries"];
    if (rounds.empty() && noise.empty() && final_metrics.empty())
      throw Error(ErrorCode::kIo, "nothing to report; run training, evaluate or noise-sweep first");

    json digests = json::array();
    for (const auto& [file, digest] : dataset_digests()) digests.push_back({{"file", file}, {"digest", digest}});
    const json out = {{"schema_version", kReportSchemaVersion},
                      {"config_hash", config_.hash()},
                      {"config", config_.to_json()},
                      {"datasets", digests},
                      {"rounds", rounds},
                      {"noise", noise},
                      {"final", final_metrics}};
    save_report_json(output(paths::kReport), out);
    write_text_file(output(paths::kRoundCurve), round_csv);
    write_text_file(output(paths::kNoiseCurve), noise_csv);
    return out;
  });
}

}  // namespace fedgrid::harness
