#include "fedgrid/fed/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <utility>

#include "fedgrid/error.hpp"

namespace fedgrid::fed {

using nlohmann::json;

namespace {

constexpr std::uint64_t kClientStreamBase = 1000;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<int> labels_of(const detector::Batch& b) {
  std::vector<int> y(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) y[i] = static_cast<int>(b.y(static_cast<Eigen::Index>(i)));
  return y;
}

harness::Metrics score(const detector::Classifier& model, const detector::ModelWeights& w,
                       const detector::Batch& data) {
  const auto preds = detector::predict(model, w, data.x);
  std::vector<int> labels(preds.size());
  std::transform(preds.begin(), preds.end(), labels.begin(), [](const auto& p) { return p.label; });
  return harness::compute_metrics(labels, labels_of(data));
}

void require_exact_keys(const json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::kParse, std::string(what) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) throw Error(ErrorCode::kValidation, std::string(what) + ": unexpected field '" + key + "'");
  }
  for (const auto& key : allowed)
    if (!j.contains(key)) throw Error(ErrorCode::kParse, std::string(what) + ": missing field '" + key + "'");
}

template <typename F>
auto parse_guard(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string(what) + ": " + e.what());
  }
}

}  // namespace

void FederationConfig::validate(std::size_t clients) const {
  if (rounds < 0 || rounds > kMaxRounds)
    throw Error(ErrorCode::kConfig, "rounds must lie in [0, " + std::to_string(kMaxRounds) + "], got " +
                                        std::to_string(rounds));
  if (clients < kMinClients)
    throw Error(ErrorCode::kConfig, "federation needs at least " + std::to_string(kMinClients) + " clients, got " +
                                        std::to_string(clients));
  train.validate();
  encoding.validate();
}

json FederationConfig::to_json() const {
  return {{"rounds", rounds},
          {"seed", seed},
          {"train",
           {{"learning_rate", train.learning_rate},
            {"epochs", train.epochs},
            {"batch_size", train.batch_size},
            {"beta1", train.beta1},
            {"beta2", train.beta2},
            {"epsilon", train.epsilon}}},
          {"encoding", {{"scale", encoding.scale}, {"shift", encoding.shift}, {"clip", encoding.clip}}}};
}

FederationConfig FederationConfig::from_json(const json& j) {
  return parse_guard("federation config", [&] {
    FederationConfig c;
    c.rounds = j.value("rounds", c.rounds);
    c.seed = j.value("seed", c.seed);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.beta1 = t.value("beta1", c.train.beta1);
      c.train.beta2 = t.value("beta2", c.train.beta2);
      c.train.epsilon = t.value("epsilon", c.train.epsilon);
    }
    if (j.contains("encoding")) {
      const auto& e = j.at("encoding");
      c.encoding.scale = e.value("scale", c.encoding.scale);
      c.encoding.shift = e.value("shift", c.encoding.shift);
      c.encoding.clip = e.value("clip", c.encoding.clip);
    }
    return c;
  });
}

std::uint64_t client_train_seed(std::uint64_t master, int client_id) {
  return attack::derive_seed(master, kClientStreamBase, static_cast<std::uint64_t>(client_id));
}

// ---- messages ----

json UploadMessage::to_json() const {
  return {{"client_id", client_id}, {"round", round}, {"key_id", key_id}, {"layout_hash", layout_hash},
          {"ciphertexts", ciphertexts}};
}

UploadMessage UploadMessage::from_json(const json& j) {
  require_exact_keys(j, {"client_id", "round", "key_id", "layout_hash", "ciphertexts"}, "upload message");
  return parse_guard("upload message", [&] {
    UploadMessage m;
    m.client_id = j.at("client_id").get<int>();
    m.round = j.at("round").get<int>();
    m.key_id = j.at("key_id").get<std::string>();
    m.layout_hash = j.at("layout_hash").get<std::string>();
    m.ciphertexts = j.at("ciphertexts").get<std::vector<std::string>>();
    return m;
  });
}

UploadMessage UploadMessage::parse(const std::string& wire) {
  return from_json(parse_guard("upload message", [&] { return json::parse(wire); }));
}

json AggregateMessage::to_json() const {
  return {{"round", round}, {"clients", clients}, {"key_id", key_id}, {"layout_hash", layout_hash},
          {"ciphertexts", ciphertexts}};
}

AggregateMessage AggregateMessage::from_json(const json& j) {
  require_exact_keys(j, {"round", "clients", "key_id", "layout_hash", "ciphertexts"}, "aggregate message");
  return parse_guard("aggregate message", [&] {
    AggregateMessage m;
    m.round = j.at("round").get<int>();
    m.clients = j.at("clients").get<std::size_t>();
    m.key_id = j.at("key_id").get<std::string>();
    m.layout_hash = j.at("layout_hash").get<std::string>();
    m.ciphertexts = j.at("ciphertexts").get<std::vector<std::string>>();
    return m;
  });
}

AggregateMessage AggregateMessage::parse(const std::string& wire) {
  return from_json(parse_guard("aggregate message", [&] { return json::parse(wire); }));
}

// ---- client ----

ClientNode::ClientNode(attack::ClientDataset data, std::shared_ptr<const detector::Classifier> model,
                       const detector::ModelWeights& initial, detector::TrainConfig train)
    : id_(data.client_id),
      spec_(data.client),
      layout_(std::move(data.layout)),
      raw_test_(std::move(data.test)),
      model_(std::move(model)),
      weights_(initial),
      optimizer_(detector::OptimizerState::for_weights(initial)),
      train_config_(train) {
  if (!model_) throw Error(ErrorCode::kInvalidArgument, "client " + std::to_string(id_) + ": no model");
  if (data.train.empty() || raw_test_.empty())
    throw Error(ErrorCode::kValidation, "client " + std::to_string(id_) + ": empty train or test split");
  if (layout_.size() != model_->input_features())
    throw Error(ErrorCode::kDimension, "client " + std::to_string(id_) + ": " + std::to_string(layout_.size()) +
                                           " features but the model expects " +
                                           std::to_string(model_->input_features()));
  train_config_.validate();
  auto raw_train = detector::make_batch(data.train);
  scaler_ = detector::FeatureScaler::fit(raw_train.x);
  train_ = {scaler_.apply(raw_train.x), std::move(raw_train.y)};
  auto raw_test = detector::make_batch(raw_test_);
  test_ = {scaler_.apply(raw_test.x), std::move(raw_test.y)};
}

double ClientNode::train_epochs() {
  try {
    const auto history = detector::train_local(*model_, train_, weights_, optimizer_, train_config_);
    return history.epoch_loss.empty() ? 0.0 : history.epoch_loss.back();
  } catch (const Error& e) {
    throw Error(e.code(), "client " + std::to_string(id_) + ": " + e.what());
  }
}

harness::Metrics ClientNode::evaluate() const { return score(*model_, weights_, test_); }

harness::Metrics ClientNode::evaluate_noisy(double level, std::uint64_t noise_seed) const {
  const auto noisy = detector::make_batch(attack::add_measurement_noise(raw_test_, level, noise_seed));
  return score(*model_, weights_, {scaler_.apply(noisy.x), noisy.y});
}

std::string ClientNode::upload(int round, const crypto::PublicKey& pub, const crypto::EncodingParams& enc,
                               crypto::RandomSource& rng) const {
  UploadMessage msg;
  msg.client_id = id_;
  msg.round = round;
  msg.key_id = pub.key_id;
  msg.layout_hash = weights_.layout_hash();
  const auto flat = weights_.flat();
  msg.ciphertexts.reserve(flat.size());
  for (double w : flat) {
    const auto m = crypto::encode(crypto::clip_weight(w, enc), enc);
    msg.ciphertexts.push_back(crypto::to_hex(crypto::encrypt(m, pub, rng).value));
  }
  return msg.wire();
}

std::vector<double> ClientNode::apply_aggregate(const std::string& wire, int round, const crypto::PublicKey& pub,
                                                const crypto::PrivateKey& priv,
                                                const crypto::EncodingParams& enc) {
  const auto msg = AggregateMessage::parse(wire);
  const std::string who = "client " + std::to_string(id_) + ", round " + std::to_string(round);
  if (msg.round != round)
    throw Error(ErrorCode::kValidation, who + ": aggregate is for round " + std::to_string(msg.round));
  if (msg.key_id != pub.key_id || msg.key_id != priv.key_id)
    throw Error(ErrorCode::kKeyMismatch, who + ": aggregate key id " + msg.key_id + " does not match " + pub.key_id);
  if (msg.layout_hash != weights_.layout_hash())
    throw Error(ErrorCode::kValidation, who + ": aggregate layout hash does not match local model");
  if (msg.ciphertexts.size() != weights_.num_values())
    throw Error(ErrorCode::kDimension, who + ": " + std::to_string(msg.ciphertexts.size()) +
                                           " ciphertexts for " + std::to_string(weights_.num_values()) + " weights");
  std::vector<double> flat(msg.ciphertexts.size());
  for (std::size_t d = 0; d < flat.size(); ++d) {
    const crypto::Ciphertext c{crypto::from_hex(msg.ciphertexts[d]), msg.key_id};
    flat[d] = crypto::decode(crypto::decrypt(c, priv, pub), msg.clients, enc);
  }
  install_weights(flat);
  return flat;
}

void ClientNode::install_weights(std::span<const double> flat) {
  weights_.assign_flat(flat);
  if (!weights_.all_finite())
    throw Error(ErrorCode::kNumeric, "client " + std::to_string(id_) + ": installed weights are not finite");
}

detector::Checkpoint ClientNode::checkpoint() const { return {model_->config_json(), weights_, scaler_}; }

// ---- server ----

std::string CloudServer::aggregate(int round, const std::vector<std::string>& uploads) const {
  if (uploads.empty()) throw Error(ErrorCode::kValidation, "aggregate: no uploads");
  std::vector<UploadMessage> msgs;
  msgs.reserve(uploads.size());
  std::set<int> seen;
  for (const auto& wire : uploads) {
    msgs.push_back(UploadMessage::parse(wire));
    const auto& m = msgs.back();
    if (m.round != round)
      throw Error(ErrorCode::kValidation, "aggregate: upload from client " + std::to_string(m.client_id) +
                                              " is for round " + std::to_string(m.round));
    if (m.key_id != pub_.key_id)
      throw Error(ErrorCode::kKeyMismatch, "aggregate: client " + std::to_string(m.client_id) +
                                               " used key " + m.key_id + ", server holds " + pub_.key_id);
    if (!seen.insert(m.client_id).second)
      throw Error(ErrorCode::kValidation, "aggregate: duplicate upload from client " + std::to_string(m.client_id));
    if (m.layout_hash != msgs.front().layout_hash || m.ciphertexts.size() != msgs.front().ciphertexts.size())
      throw Error(ErrorCode::kValidation, "aggregate: client " + std::to_string(m.client_id) +
                                              " uploaded a different weight layout");
  }
  AggregateMessage out;
  out.round = round;
  out.clients = msgs.size();
  out.key_id = pub_.key_id;
  out.layout_hash = msgs.front().layout_hash;
  const std::size_t dims = msgs.front().ciphertexts.size();
  out.ciphertexts.reserve(dims);
  std::vector<crypto::Ciphertext> column(msgs.size());
  for (std::size_t d = 0; d < dims; ++d) {
    for (std::size_t k = 0; k < msgs.size(); ++k) column[k] = {crypto::from_hex(msgs[k].ciphertexts[d]), pub_.key_id};
    out.ciphertexts.push_back(crypto::to_hex(crypto::aggregate(column, pub_).value));
  }
  return out.wire();
}

std::vector<double> plain_fedavg(const std::vector<std::vector<double>>& client_weights,
                                 const crypto::EncodingParams& enc) {
  if (client_weights.empty()) throw Error(ErrorCode::kValidation, "plain_fedavg: no clients");
  const std::size_t dims = client_weights.front().size();
  std::vector<double> mean(dims, 0.0);
  for (const auto& w : client_weights) {
    if (w.size() != dims)
      throw Error(ErrorCode::kDimension, "plain_fedavg: layout mismatch (" + std::to_string(w.size()) + " vs " +
                                             std::to_string(dims) + " values)");
    for (std::size_t d = 0; d < dims; ++d) mean[d] += crypto::clip_weight(w[d], enc);
  }
  for (double& v : mean) v /= static_cast<double>(client_weights.size());
  return mean;
}

// ---- logs ----

json RoundLog::to_json() const {
  return {{"round", round},
          {"client_id", client_id},
          {"train_loss", train_loss},
          {"pre", pre.to_json()},
          {"post", post.to_json()},
          {"fidelity_max_abs_error", fidelity ? json(*fidelity) : json()},
          {"consensus", consensus},
          {"timings_s",
           {{"train", timings.train_s},
            {"encrypt", timings.encrypt_s},
            {"aggregate", timings.aggregate_s},
            {"decrypt", timings.decrypt_s}}}};
}

void write_round_logs(const std::vector<RoundLog>& logs, const std::string& path) {
  const std::filesystem::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write round log " + path);
  for (const auto& log : logs) out << log.to_json().dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for round log " + path);
}

// ---- protocol ----

std::vector<ClientNode> make_clients(const std::vector<attack::ClientDataset>& datasets,
                                     std::shared_ptr<const detector::Classifier> model,
                                     const FederationConfig& config) {
  if (!model) throw Error(ErrorCode::kInvalidArgument, "make_clients: no model");
  const auto initial = model->init_weights(config.seed);
  std::vector<ClientNode> nodes;
  nodes.reserve(datasets.size());
  for (const auto& ds : datasets) {
    auto train = config.train;
    train.seed = client_train_seed(config.seed, ds.client_id);
    nodes.emplace_back(ds, model, initial, train);
  }
  return nodes;
}

namespace {

// Shared schedule; `exchange` averages the trained weights in place and
// returns the fidelity gap if it measured one.
using Exchange = std::function<std::optional<double>(int round, std::vector<ClientNode>&, std::vector<RoundTimings>&)>;

FederationResult run_schedule(std::vector<ClientNode>& clients, const FederationConfig& config,
                              const Exchange& exchange, const RoundObserver& observer) {
  if (clients.empty()) throw Error(ErrorCode::kValidation, "no clients");
  for (const auto& c : clients)
    if (!c.weights().same_layout(clients.front().weights()))
      throw Error(ErrorCode::kValidation, "client " + std::to_string(c.id()) + " has a different model layout");

  std::vector<int> rounds;
  if (config.rounds == 0) rounds.push_back(0);
  for (int r = 1; r <= config.rounds; ++r) rounds.push_back(r);

  FederationResult result;
  for (const int r : rounds) {
    std::vector<RoundLog> round_logs(clients.size());
    std::vector<RoundTimings> timings(clients.size());
    for (std::size_t k = 0; k < clients.size(); ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      round_logs[k].round = r;
      round_logs[k].client_id = clients[k].id();
      round_logs[k].train_loss = clients[k].train_epochs();
      timings[k].train_s = seconds_since(t0);
      round_logs[k].pre = clients[k].evaluate();
    }
    std::optional<double> fidelity;
    if (r > 0) {
      fidelity = exchange(r, clients, timings);
      const auto reference = clients.front().weights().flat();
      for (const auto& c : clients)
        if (c.weights().flat() != reference)
          throw Error(ErrorCode::kNumeric, "round " + std::to_string(r) + ": client " + std::to_string(c.id()) +
                                               " decoded different weights");
    }
    for (std::size_t k = 0; k < clients.size(); ++k) {
      auto& log = round_logs[k];
      log.post = r > 0 ? clients[k].evaluate() : log.pre;
      log.fidelity = fidelity;
      log.consensus = true;
      log.timings = timings[k];
      if (observer) observer(log);
      result.logs.push_back(std::move(log));
    }
  }
  for (const auto& c : clients) result.final_metrics.push_back(c.evaluate());
  return result;
}

}  // namespace

FederationResult run_secfed(std::vector<ClientNode>& clients, const FederationConfig& config,
                            const crypto::KeyPair& keys, crypto::RandomSource& rng, const RoundObserver& observer) {
  config.validate(clients.size());
  crypto::check_capacity(clients.size(), config.encoding, keys.pub);
  const CloudServer server(keys.pub);

  const Exchange exchange = [&](int r, std::vector<ClientNode>& nodes, std::vector<RoundTimings>& timings) {
    std::vector<std::vector<double>> plain(nodes.size());
    std::vector<std::string> uploads(nodes.size());
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      plain[k] = nodes[k].weights().flat();
      const auto t0 = std::chrono::steady_clock::now();
      uploads[k] = nodes[k].upload(r, keys.pub, config.encoding, rng);
      timings[k].encrypt_s = seconds_since(t0);
    }
    const auto t_agg = std::chrono::steady_clock::now();
    const std::string aggregate = server.aggregate(r, uploads);
    const double agg_s = seconds_since(t_agg);

    const auto expected = plain_fedavg(plain, config.encoding);
    double gap = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto decoded = nodes[k].apply_aggregate(aggregate, r, keys.pub, keys.priv, config.encoding);
      timings[k].decrypt_s = seconds_since(t0);
      timings[k].aggregate_s = agg_s;
      for (std::size_t d = 0; d < decoded.size(); ++d) gap = std::max(gap, std::abs(decoded[d] - expected[d]));
    }
    if (!(gap <= kFidelityTolerance))
      throw Error(ErrorCode::kNumeric, "round " + std::to_string(r) + ": secure average deviates from plaintext by " +
                                           std::to_string(gap));
    return std::optional<double>(gap);
  };
  return run_schedule(clients, config, exchange, observer);
}

FederationResult run_plain_fedavg(std::vector<ClientNode>& clients, const FederationConfig& config,
                                  const RoundObserver& observer) {
  config.validate(clients.size());
  const Exchange exchange = [&](int, std::vector<ClientNode>& nodes, std::vector<RoundTimings>&) {
    std::vector<std::vector<double>> plain;
    for (const auto& n : nodes) plain.push_back(n.weights().flat());
    const auto mean = plain_fedavg(plain, config.encoding);
    for (auto& n : nodes) n.install_weights(mean);
    return std::optional<double>(0.0);
  };
  return run_schedule(clients, config, exchange, observer);
}

FederationResult run_local_baseline(std::vector<ClientNode>& clients, const FederationConfig& config,
                                    const RoundObserver& observer) {
  auto local = config;
  local.rounds = 0;
  local.train.validate();
  return run_schedule(clients, local, {}, observer);
}

IdealResult run_ideal_baseline(const std::vector<attack::ClientDataset>& datasets,
                               const detector::Classifier& model, const FederationConfig& config,
                               int total_epochs) {
  if (datasets.empty()) throw Error(ErrorCode::kValidation, "ideal baseline: no clients");
  const auto& ref = datasets.front().layout;
  const std::size_t shared = ref.size() >= 2 ? ref.size() - 2 : 0;
  std::vector<attack::LabeledSample> pooled;
  for (const auto& ds : datasets) {
    const bool same_width = ds.layout.size() == ref.size();
    const bool same_buses = same_width && std::equal(ref.names.begin(), ref.names.begin() + static_cast<long>(shared),
                                                     ds.layout.names.begin());
    if (!same_buses)
      throw Error(ErrorCode::kValidation, "ideal baseline: client " + std::to_string(ds.client_id) +
                                              " feature layout does not match client " +
                                              std::to_string(datasets.front().client_id));
    pooled.insert(pooled.end(), ds.train.begin(), ds.train.end());
  }
  auto raw = detector::make_batch(pooled);
  IdealResult out;
  out.scaler = detector::FeatureScaler::fit(raw.x);
  const detector::Batch train{out.scaler.apply(raw.x), std::move(raw.y)};

  auto tc = config.train;
  tc.epochs = total_epochs;
  tc.seed = client_train_seed(config.seed, datasets.front().client_id);
  out.weights = model.init_weights(config.seed);
  auto state = detector::OptimizerState::for_weights(out.weights);
  detector::train_local(model, train, out.weights, state, tc);

  for (const auto& ds : datasets) {
    const auto test = detector::make_batch(ds.test);
    out.client_metrics.push_back(score(model, out.weights, {out.scaler.apply(test.x), test.y}));
  }
  return out;
}

}  // namespace fedgrid::fed
