#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fedgrid/error.hpp"
#include "fedgrid/fed/federation.hpp"

namespace {

using namespace fedgrid;
using fed::AggregateMessage;
using fed::ClientNode;
using fed::FederationConfig;
using fed::UploadMessage;

constexpr std::size_t kFeatures = 6;

// Two Gaussian classes whose means differ in every feature. The last two
// feature names are client specific, mirroring the branch slot.
attack::ClientDataset toy_dataset(int id, std::size_t per_class, std::uint64_t seed, double separation = 1.5) {
  attack::ClientDataset ds;
  ds.client_id = id;
  ds.client = {id + 1, id + 1, id + 2};
  for (std::size_t f = 0; f + 2 < kFeatures; ++f) ds.layout.names.push_back("x" + std::to_string(f));
  ds.layout.names.push_back("P_flow@" + std::to_string(id));
  ds.layout.names.push_back("Q_flow@" + std::to_string(id));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  auto draw = [&](std::vector<attack::LabeledSample>& out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      for (int label : {0, 1}) {
        attack::LabeledSample s;
        s.label = label;
        for (std::size_t f = 0; f < kFeatures; ++f) s.features.push_back(z(rng) + (label ? separation : 0.0));
        out.push_back(std::move(s));
      }
  };
  draw(ds.train, per_class);
  draw(ds.test, per_class / 2 + 1);
  return ds;
}

std::shared_ptr<const detector::Classifier> tiny_transformer() {
  detector::TransformerConfig c;
  c.input_features = kFeatures;
  c.d_model = 4;
  c.num_heads = 2;
  c.num_blocks = 1;
  c.ff_hidden = 8;
  c.head_hidden = 4;
  c.dropout = 0.1;
  return std::make_shared<detector::TransformerClassifier>(c);
}

std::shared_ptr<const detector::Classifier> small_mlp() {
  return std::make_shared<detector::MlpClassifier>(detector::MlpConfig{kFeatures, 8, 4});
}

FederationConfig small_config(int rounds, int epochs = 2) {
  FederationConfig c;
  c.rounds = rounds;
  c.train.epochs = epochs;
  c.train.batch_size = 16;
  c.train.learning_rate = 1e-2;
  c.seed = 11;
  return c;
}

std::vector<attack::ClientDataset> toy_clients(std::size_t k, std::size_t per_class = 40) {
  std::vector<attack::ClientDataset> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(toy_dataset(static_cast<int>(i), per_class, 100 + i));
  return out;
}

crypto::KeyPair test_keys() {
  crypto::RandomSource rng(5);
  return crypto::generate_keypair(64, rng);
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kInvalidArgument;
}

// ---- plaintext averaging ----

TEST(PlainFedAvg, IdenticalInputsAreReturned) {
  const std::vector<double> w{0.25, -1.5, 3.0};
  const auto out = fed::plain_fedavg({w, w, w}, {});
  EXPECT_EQ(out, w);
}

TEST(PlainFedAvg, ZeroAndOneAverageToHalf) {
  const auto out = fed::plain_fedavg({{0.0, 0.0}, {1.0, 1.0}}, {});
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_DOUBLE_EQ(out[1], 0.5);
}

TEST(PlainFedAvg, MatchesManualMean) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  std::vector<std::vector<double>> ws(5, std::vector<double>(50));
  for (auto& w : ws)
    for (double& v : w) v = u(rng);
  const auto out = fed::plain_fedavg(ws, {});
  for (std::size_t d = 0; d < 50; ++d) {
    double sum = 0.0;
    for (const auto& w : ws) sum += w[d];
    EXPECT_NEAR(out[d], sum / 5.0, 1e-15);
  }
}

TEST(PlainFedAvg, ClipsBeforeAveraging) {
  const auto out = fed::plain_fedavg({{20.0}, {0.0}}, {});
  EXPECT_DOUBLE_EQ(out[0], 4.0);
}

TEST(PlainFedAvg, RejectsLayoutMismatch) {
  EXPECT_EQ(code_of([] { fed::plain_fedavg({{1.0, 2.0}, {1.0}}, {}); }), ErrorCode::kDimension);
  EXPECT_EQ(code_of([] { fed::plain_fedavg({}, {}); }), ErrorCode::kValidation);
}

// ---- messages ----

TEST(Messages, UploadRoundTripsThroughWireForm) {
  UploadMessage m{3, 2, "abcdef0123456789", "0011223344556677", {"1f", "ff00"}};
  const auto back = UploadMessage::parse(m.wire());
  EXPECT_EQ(back.client_id, 3);
  EXPECT_EQ(back.round, 2);
  EXPECT_EQ(back.key_id, m.key_id);
  EXPECT_EQ(back.layout_hash, m.layout_hash);
  EXPECT_EQ(back.ciphertexts, m.ciphertexts);
}

TEST(Messages, UploadCarriesOnlyProtocolFields) {
  const UploadMessage m{1, 1, "k", "h", {"01"}};
  std::set<std::string> keys;
  const auto j = m.to_json();
  for (const auto& [k, v] : j.items()) keys.insert(k);
  EXPECT_EQ(keys, (std::set<std::string>{"client_id", "round", "key_id", "layout_hash", "ciphertexts"}));
}

TEST(Messages, ExtraFieldsAreRejected) {
  auto j = UploadMessage{1, 1, "k", "h", {"01"}}.to_json();
  j["features"] = {0.1, 0.2};
  EXPECT_EQ(code_of([&] { UploadMessage::from_json(j); }), ErrorCode::kValidation);
  auto a = AggregateMessage{1, 2, "k", "h", {"01"}}.to_json();
  a["labels"] = {1};
  EXPECT_EQ(code_of([&] { AggregateMessage::from_json(a); }), ErrorCode::kValidation);
}

TEST(Messages, MissingFieldsAndGarbageAreParseErrors) {
  auto j = UploadMessage{1, 1, "k", "h", {"01"}}.to_json();
  j.erase("layout_hash");
  EXPECT_EQ(code_of([&] { UploadMessage::from_json(j); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { UploadMessage::parse("{not json"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { AggregateMessage::parse("[1,2]"); }), ErrorCode::kParse);
}

TEST(Messages, UploadCiphertextsDecryptToEncodedWeights) {
  const auto keys = test_keys();
  const auto model = tiny_transformer();
  const auto nodes = fed::make_clients(toy_clients(2), model, small_config(1));
  crypto::RandomSource rng(9);
  const auto msg = UploadMessage::parse(nodes[0].upload(1, keys.pub, {}, rng));
  const auto flat = nodes[0].weights().flat();
  ASSERT_EQ(msg.ciphertexts.size(), flat.size());
  EXPECT_EQ(msg.layout_hash, nodes[0].weights().layout_hash());
  EXPECT_EQ(msg.key_id, keys.pub.key_id);
  for (std::size_t d = 0; d < flat.size(); ++d) {
    const crypto::Ciphertext c{crypto::from_hex(msg.ciphertexts[d]), keys.pub.key_id};
    EXPECT_EQ(crypto::decrypt(c, keys.priv, keys.pub), crypto::encode(flat[d], {}));
  }
}

TEST(Messages, ReEncryptionUsesFreshRandomness) {
  const auto keys = test_keys();
  const auto nodes = fed::make_clients(toy_clients(2), tiny_transformer(), small_config(1));
  crypto::RandomSource rng(9);
  const auto a = UploadMessage::parse(nodes[0].upload(1, keys.pub, {}, rng));
  const auto b = UploadMessage::parse(nodes[0].upload(1, keys.pub, {}, rng));
  std::size_t same = 0;
  for (std::size_t d = 0; d < a.ciphertexts.size(); ++d) same += a.ciphertexts[d] == b.ciphertexts[d];
  EXPECT_EQ(same, 0u);
}

// ---- server ----

TEST(CloudServer, RejectsForeignKeyDuplicateAndStaleRound) {
  const auto keys = test_keys();
  crypto::RandomSource krng(77);
  const auto other = crypto::generate_keypair(64, krng);
  const auto nodes = fed::make_clients(toy_clients(2), tiny_transformer(), small_config(1));
  crypto::RandomSource rng(1);
  const auto u0 = nodes[0].upload(1, keys.pub, {}, rng);
  const auto u1 = nodes[1].upload(1, keys.pub, {}, rng);
  const auto foreign = nodes[1].upload(1, other.pub, {}, rng);
  const fed::CloudServer server(keys.pub);
  EXPECT_EQ(code_of([&] { server.aggregate(1, {u0, foreign}); }), ErrorCode::kKeyMismatch);
  EXPECT_EQ(code_of([&] { server.aggregate(1, {u0, u0}); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { server.aggregate(2, {u0, u1}); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { server.aggregate(1, {}); }), ErrorCode::kValidation);
}

TEST(CloudServer, RejectsMixedLayouts) {
  const auto keys = test_keys();
  auto a = fed::make_clients(toy_clients(1), tiny_transformer(), small_config(1));
  auto b = fed::make_clients({toy_dataset(1, 40, 7)}, small_mlp(), small_config(1));
  crypto::RandomSource rng(1);
  const fed::CloudServer server(keys.pub);
  EXPECT_EQ(code_of([&] { server.aggregate(1, {a[0].upload(1, keys.pub, {}, rng), b[0].upload(1, keys.pub, {}, rng)}); }),
            ErrorCode::kValidation);
}

TEST(CloudServer, AggregateDecryptsToSumOfEncodings) {
  const auto keys = test_keys();
  auto nodes = fed::make_clients(toy_clients(3), tiny_transformer(), small_config(1));
  for (auto& n : nodes) n.train_epochs();
  crypto::RandomSource rng(2);
  std::vector<std::string> uploads;
  for (const auto& n : nodes) uploads.push_back(n.upload(1, keys.pub, {}, rng));
  const auto agg = AggregateMessage::parse(fed::CloudServer(keys.pub).aggregate(1, uploads));
  EXPECT_EQ(agg.clients, 3u);
  for (std::size_t d = 0; d < agg.ciphertexts.size(); d += 7) {
    crypto::BigInt expect = 0;
    for (const auto& n : nodes) expect += crypto::encode(n.weights().flat()[d], {});
    const crypto::Ciphertext c{crypto::from_hex(agg.ciphertexts[d]), keys.pub.key_id};
    EXPECT_EQ(crypto::decrypt(c, keys.priv, keys.pub), expect);
  }
}

// ---- protocol ----

TEST(SecFed, ConfigValidation) {
  const auto keys = test_keys();
  crypto::RandomSource rng(1);
  auto nodes = fed::make_clients(toy_clients(2), tiny_transformer(), small_config(10));
  EXPECT_EQ(code_of([&] { fed::run_secfed(nodes, small_config(10), keys, rng); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { fed::run_secfed(nodes, small_config(-1), keys, rng); }), ErrorCode::kConfig);
  auto single = fed::make_clients(toy_clients(1), tiny_transformer(), small_config(1));
  EXPECT_EQ(code_of([&] { fed::run_secfed(single, small_config(1), keys, rng); }), ErrorCode::kConfig);
}

TEST(SecFed, CapacityViolationIsReported) {
  const auto small = crypto::keypair_from_primes(65521, 65519);
  crypto::RandomSource rng(1);
  auto nodes = fed::make_clients(toy_clients(2), tiny_transformer(), small_config(1));
  EXPECT_EQ(code_of([&] { fed::run_secfed(nodes, small_config(1), small, rng); }), ErrorCode::kCapacity);
}

TEST(SecFed, ClientsAgreeAndMatchPlaintextAverage) {
  const auto keys = test_keys();
  const auto model = tiny_transformer();
  const auto data = toy_clients(3);
  const auto cfg = small_config(1);

  auto secure = fed::make_clients(data, model, cfg);
  crypto::RandomSource rng(4);
  const auto result = fed::run_secfed(secure, cfg, keys, rng);

  // Independent replay: same local training, then a hand-computed mean.
  auto replay = fed::make_clients(data, model, cfg);
  std::vector<std::vector<double>> trained;
  for (auto& n : replay) {
    n.train_epochs();
    trained.push_back(n.weights().flat());
  }
  const auto flat0 = secure[0].weights().flat();
  for (std::size_t d = 0; d < flat0.size(); ++d) {
    const double mean = (trained[0][d] + trained[1][d] + trained[2][d]) / 3.0;
    EXPECT_NEAR(flat0[d], mean, 1e-7) << "weight " << d;
  }
  for (const auto& n : secure) EXPECT_EQ(n.weights().flat(), flat0);
  ASSERT_EQ(result.logs.size(), 3u);
  for (const auto& log : result.logs) {
    EXPECT_EQ(log.round, 1);
    EXPECT_TRUE(log.consensus);
    ASSERT_TRUE(log.fidelity.has_value());
    EXPECT_LE(*log.fidelity, 1e-7);
  }
}

TEST(SecFed, EveryRoundIsLoggedPerClient) {
  const auto keys = test_keys();
  auto nodes = fed::make_clients(toy_clients(2), tiny_transformer(), small_config(3, 1));
  crypto::RandomSource rng(4);
  std::vector<std::pair<int, int>> seen;
  const auto result =
      fed::run_secfed(nodes, small_config(3, 1), keys, rng, [&](const fed::RoundLog& l) { seen.emplace_back(l.round, l.client_id); });
  EXPECT_EQ(seen, (std::vector<std::pair<int, int>>{{1, 0}, {1, 1}, {2, 0}, {2, 1}, {3, 0}, {3, 1}}));
  ASSERT_EQ(result.logs.size(), 6u);
  ASSERT_EQ(result.final_metrics.size(), 2u);
  EXPECT_EQ(result.final_metrics[1].counts, result.logs.back().post.counts);
  const auto j = result.logs.front().to_json();
  for (const char* key : {"round", "client_id", "train_loss", "pre", "post", "fidelity_max_abs_error", "consensus", "timings_s"})
    EXPECT_TRUE(j.contains(key)) << key;
}

TEST(SecFed, ZeroRoundsIsLocalTrainingWithoutExchange) {
  const auto keys = test_keys();
  const auto model = tiny_transformer();
  const auto data = toy_clients(2);
  auto secure = fed::make_clients(data, model, small_config(0));
  auto local = fed::make_clients(data, model, small_config(0));
  crypto::RandomSource rng(4);
  const auto a = fed::run_secfed(secure, small_config(0), keys, rng);
  const auto b = fed::run_local_baseline(local, small_config(0));
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(secure[k].weights(), local[k].weights());
  EXPECT_FALSE(secure[0].weights() == secure[1].weights());
  ASSERT_EQ(a.logs.size(), 2u);
  EXPECT_EQ(a.logs[0].round, 0);
  EXPECT_FALSE(a.logs[0].fidelity.has_value());
  EXPECT_EQ(a.final_metrics[0].counts, b.final_metrics[0].counts);
}

TEST(SecFed, SecureAndPlainSchedulesAgree) {
  const auto keys = test_keys();
  const auto model = small_mlp();
  const auto data = toy_clients(2);
  const auto cfg = small_config(2);
  auto secure = fed::make_clients(data, model, cfg);
  auto plain = fed::make_clients(data, model, cfg);
  crypto::RandomSource rng(8);
  fed::run_secfed(secure, cfg, keys, rng);
  fed::run_plain_fedavg(plain, cfg);
  const auto s = secure[0].weights().flat(), p = plain[0].weights().flat();
  // Encoding truncation (< 1e-8 per round) perturbs the second round slightly.
  for (std::size_t d = 0; d < s.size(); ++d) EXPECT_NEAR(s[d], p[d], 1e-5);
}

// ---- baselines ----

TEST(LocalBaseline, SeparableClientBeatsChance) {
  auto nodes = fed::make_clients(toy_clients(2, 60), small_mlp(), small_config(0, 20));
  const auto r = fed::run_local_baseline(nodes, small_config(0, 20));
  for (const auto& m : r.final_metrics) EXPECT_GT(*m.accuracy, 0.5);
}

TEST(LocalBaseline, ClientMetricsIgnoreOtherClients) {
  const auto model = tiny_transformer();
  const auto cfg = small_config(0);
  auto ab = fed::make_clients({toy_dataset(0, 40, 1), toy_dataset(1, 40, 2)}, model, cfg);
  auto ac = fed::make_clients({toy_dataset(0, 40, 1), toy_dataset(2, 40, 3, 0.2)}, model, cfg);
  const auto r1 = fed::run_local_baseline(ab, cfg);
  const auto r2 = fed::run_local_baseline(ac, cfg);
  EXPECT_EQ(r1.final_metrics[0].counts, r2.final_metrics[0].counts);
  EXPECT_EQ(ab[0].weights(), ac[0].weights());
}

TEST(IdealBaseline, SingleClientEqualsLocalBaseline) {
  const auto model = tiny_transformer();
  const auto cfg = small_config(0, 3);
  const std::vector<attack::ClientDataset> one{toy_dataset(0, 40, 1)};
  auto nodes = fed::make_clients(one, model, cfg);
  fed::run_local_baseline(nodes, cfg);
  const auto ideal = fed::run_ideal_baseline(one, *model, cfg, cfg.train.epochs);
  EXPECT_EQ(ideal.weights, nodes[0].weights());
  EXPECT_EQ(ideal.client_metrics[0].counts, nodes[0].evaluate().counts);
}

TEST(IdealBaseline, PoolsEveryTrainingSample) {
  const auto data = toy_clients(3, 25);
  const auto ideal = fed::run_ideal_baseline(data, *small_mlp(), small_config(0, 1), 1);
  std::size_t expected = 0;
  for (const auto& d : data) expected += d.train.size();
  EXPECT_EQ(expected, 150u);
  // The pooled scaler mean equals the mean over all training rows.
  double m0 = 0.0;
  for (const auto& d : data)
    for (const auto& s : d.train) m0 += s.features[0];
  EXPECT_NEAR(ideal.scaler.mean(0), m0 / static_cast<double>(expected), 1e-12);
  ASSERT_EQ(ideal.client_metrics.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(ideal.client_metrics[k].counts.total(), data[k].test.size());
}

TEST(IdealBaseline, AtLeastWorstLocalClient) {
  // Small, noisy local sets; the pooled model sees all of them.
  std::vector<attack::ClientDataset> data;
  for (int k = 0; k < 4; ++k) data.push_back(toy_dataset(k, 15, 300 + k, 0.8));
  const auto model = small_mlp();
  const auto cfg = small_config(0, 30);
  auto nodes = fed::make_clients(data, model, cfg);
  const auto local = fed::run_local_baseline(nodes, cfg);
  const auto ideal = fed::run_ideal_baseline(data, *model, cfg, cfg.train.epochs);
  double worst_local = 1.0, worst_ideal = 1.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    worst_local = std::min(worst_local, *local.final_metrics[k].accuracy);
    worst_ideal = std::min(worst_ideal, *ideal.client_metrics[k].accuracy);
  }
  EXPECT_GE(worst_ideal, worst_local);
}

TEST(IdealBaseline, RejectsMismatchedLayouts) {
  auto data = toy_clients(2);
  data[1].layout.names[0] = "other";
  EXPECT_EQ(code_of([&] { fed::run_ideal_baseline(data, *small_mlp(), small_config(0), 1); }), ErrorCode::kValidation);
  data[1].layout.names.pop_back();
  EXPECT_EQ(code_of([&] { fed::run_ideal_baseline(data, *small_mlp(), small_config(0), 1); }), ErrorCode::kValidation);
}

TEST(ClientNode, RejectsWidthMismatchAndEmptySplits) {
  auto ds = toy_dataset(0, 10, 1);
  const auto init = tiny_transformer()->init_weights(1);
  auto narrow = std::make_shared<detector::MlpClassifier>(detector::MlpConfig{kFeatures - 1, 4, 4});
  EXPECT_EQ(code_of([&] { ClientNode(ds, narrow, narrow->init_weights(1), {}); }), ErrorCode::kDimension);
  ds.test.clear();
  EXPECT_EQ(code_of([&] { ClientNode(ds, tiny_transformer(), init, {}); }), ErrorCode::kValidation);
}

TEST(ClientNode, NoisyEvaluationAtZeroLevelMatchesClean) {
  auto nodes = fed::make_clients(toy_clients(2), small_mlp(), small_config(0, 5));
  nodes[0].train_epochs();
  EXPECT_EQ(nodes[0].evaluate_noisy(0.0, 3).counts, nodes[0].evaluate().counts);
}

TEST(FederationConfig, JsonRoundTrip) {
  auto c = small_config(4, 7);
  c.encoding.clip = 6.0;
  const auto back = FederationConfig::from_json(c.to_json());
  EXPECT_EQ(back.rounds, 4);
  EXPECT_EQ(back.train.epochs, 7);
  EXPECT_EQ(back.train.batch_size, 16u);
  EXPECT_DOUBLE_EQ(back.encoding.clip, 6.0);
  EXPECT_EQ(back.seed, 11u);
}

}  // namespace
