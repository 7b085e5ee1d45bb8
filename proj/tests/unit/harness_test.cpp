#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fedgrid/detector/classifier.hpp"
#include "fedgrid/error.hpp"
#include "fedgrid/harness/dataset_io.hpp"
#include "fedgrid/harness/experiment.hpp"
#include "fedgrid/harness/metrics.hpp"
#include "fedgrid/util/digest.hpp"
#include "temp_dir.hpp"
#include "test_util.hpp"

namespace {

using namespace fedgrid;
using harness::compute_metrics;
using harness::ExperimentConfig;
using harness::Metrics;
namespace fs = std::filesystem;

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

// Recomputes every ratio from the confusion counts.
void expect_identities(const Metrics& m, std::size_t total) {
  const auto& c = m.counts;
  EXPECT_EQ(c.total(), total);
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn),
               tn = static_cast<double>(c.tn);
  ASSERT_TRUE(m.accuracy.has_value());
  EXPECT_DOUBLE_EQ(*m.accuracy, (tp + tn) / static_cast<double>(total));
  EXPECT_EQ(m.precision.has_value(), c.tp + c.fp > 0);
  if (m.precision) EXPECT_DOUBLE_EQ(*m.precision, tp / (tp + fp));
  EXPECT_EQ(m.recall.has_value(), c.tp + c.fn > 0);
  if (m.recall) EXPECT_DOUBLE_EQ(*m.recall, tp / (tp + fn));
  if (m.f1) {
    EXPECT_DOUBLE_EQ(*m.f1, 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall));
    EXPECT_GE(*m.f1, 0.0);
    EXPECT_LE(*m.f1, 1.0);
  }
}

// ---- metrics ----

TEST(Metrics, F1FromPrecisionAndRecall) {
  const auto f1 = harness::f1_score(0.9855, 0.8883);
  ASSERT_TRUE(f1.has_value());
  EXPECT_NEAR(*f1, 0.9344, 5e-5);
}

TEST(Metrics, AllCorrect) {
  const std::vector<int> y{1, 0, 1, 1, 0, 0};
  const auto m = compute_metrics(y, y);
  EXPECT_EQ(*m.accuracy, 1.0);
  EXPECT_EQ(*m.precision, 1.0);
  EXPECT_EQ(*m.recall, 1.0);
  EXPECT_EQ(*m.f1, 1.0);
}

TEST(Metrics, ComplementOfLabels) {
  const std::vector<int> y{1, 0, 1, 0}, p{0, 1, 0, 1};
  const auto m = compute_metrics(p, y);
  EXPECT_EQ(*m.accuracy, 0.0);
  EXPECT_EQ(*m.recall, 0.0);
  EXPECT_EQ(*m.precision, 0.0);
  EXPECT_FALSE(m.f1.has_value());
}

TEST(Metrics, ZeroDenominatorsAreAbsent) {
  const auto none_predicted = compute_metrics({0, 0, 0}, {0, 0, 1});
  EXPECT_FALSE(none_predicted.precision.has_value());
  EXPECT_FALSE(none_predicted.f1.has_value());
  EXPECT_DOUBLE_EQ(*none_predicted.recall, 0.0);
  const auto no_positives = compute_metrics({0, 0}, {0, 0});
  EXPECT_FALSE(no_positives.recall.has_value());
  const auto empty = compute_metrics({}, {});
  EXPECT_FALSE(empty.accuracy.has_value());
  const auto j = none_predicted.to_json();
  EXPECT_TRUE(j.at("precision").is_null());
  const auto back = Metrics::from_json(j);
  EXPECT_FALSE(back.precision.has_value());
  EXPECT_EQ(back.counts, none_predicted.counts);
}

TEST(Metrics, RejectsBadInput) {
  EXPECT_EQ(code_of([] { compute_metrics({1, 0}, {1}); }), ErrorCode::kDimension);
  EXPECT_EQ(code_of([] { compute_metrics({2}, {1}); }), ErrorCode::kValidation);
}

TEST(Metrics, IdentitiesHoldOnRandomInputs) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> p(37), y(37);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = coin(rng);
      y[i] = coin(rng);
    }
    const auto m = compute_metrics(p, y);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < p.size(); ++i) tp += p[i] == 1 && y[i] == 1;
    EXPECT_EQ(m.counts.tp, tp);
    expect_identities(m, p.size());
  }
}

// ---- dataset files ----

TEST(DatasetIo, CsvRoundTripIsBitExact) {
  attack::FeatureLayout layout{{"P_inj@1", "Q_flow@2->3"}};
  std::vector<attack::LabeledSample> rows{{{0.1, -1.0 / 3.0}, 0}, {{1e-300, 123456.789}, 1}};
  const auto csv = harness::samples_to_csv(layout, rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "P_inj@1,Q_flow@2->3,label");
  const auto back = harness::samples_from_csv(csv);
  EXPECT_EQ(back.layout, layout);
  ASSERT_EQ(back.rows.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.rows[i].features, rows[i].features);
    EXPECT_EQ(back.rows[i].label, rows[i].label);
  }
}

TEST(DatasetIo, MalformedCsvIsAParseError) {
  EXPECT_EQ(code_of([] { harness::samples_from_csv(""); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { harness::samples_from_csv("a,b\n1,2\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { harness::samples_from_csv("a,label\nx,1\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { harness::samples_from_csv("a,b,label\n1,1\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { harness::samples_from_csv("a,label\n1,2\n"); }), ErrorCode::kParse);
}

TEST(DatasetIo, TamperedCsvFailsDigestCheck) {
  fedgrid::testing::TempDir dir("dsio");
  attack::ClientDataset ds;
  ds.client_id = 0;
  ds.client = {2, 2, 3};
  ds.layout = {{"a", "b"}};
  ds.train = {{{1.0, 2.0}, 0}, {{3.0, 4.0}, 1}};
  ds.test = {{{5.0, 6.0}, 1}};
  harness::DatasetSidecar base;
  base.strength = "strong";
  const auto side = harness::write_split(dir.path(), ds, "train", base);
  harness::write_split(dir.path(), ds, "test", base);
  EXPECT_EQ(side.digest, util::git_blob_digest(harness::read_text_file(harness::dataset_csv_path(dir.path(), 0, "train"))));
  const auto back = harness::read_client_dataset(dir.path(), 0);
  EXPECT_EQ(back.train.size(), 2u);
  EXPECT_EQ(back.client.branch_to, 3);

  const auto csv = harness::dataset_csv_path(dir.path(), 0, "test");
  harness::write_text_file(csv, "a,b,label\n5,6.5,1\n");
  EXPECT_EQ(code_of([&] { harness::read_client_dataset(dir.path(), 0); }), ErrorCode::kValidation);
  fs::remove(csv);
  EXPECT_EQ(code_of([&] { harness::read_client_dataset(dir.path(), 0); }), ErrorCode::kIo);
}

// ---- configuration ----

TEST(ExperimentConfigTest, JsonRoundTripAndHash) {
  ExperimentConfig c;
  c.strength = attack::Strength::kWeak;
  c.noise_levels = {0.0, 0.05};
  c.federation.rounds = 3;
  const auto back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  c.seed = 2;
  EXPECT_NE(back.hash(), c.hash());
}

TEST(ExperimentConfigTest, DeskDefaultsAndFullSizes) {
  ExperimentConfig c;
  EXPECT_EQ(c.sizes.train_per_class, 2000u);
  EXPECT_EQ(c.sizes.test_per_class, 500u);
  EXPECT_EQ(c.federation.train.epochs, 50);
  EXPECT_EQ(c.noise_levels, (std::vector<double>{0.01, 0.02, 0.03, 0.04}));
  c.use_full_sizes();
  EXPECT_EQ(c.sizes.train_per_class, 10000u);
  EXPECT_EQ(c.sizes.test_per_class, 1000u);
}

TEST(ExperimentConfigTest, InvalidConfigsAreConfigErrors) {
  auto base = ExperimentConfig().to_json();
  auto with = [&](const char* key, nlohmann::json v) {
    auto j = base;
    j[key] = v;
    return j;
  };
  EXPECT_EQ(code_of([&] { ExperimentConfig::from_json(with("colour", 1)); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { ExperimentConfig::from_json(with("noise_levels", {0.2})); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { ExperimentConfig::from_json(with("strength", "extreme")); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { ExperimentConfig::from_json(with("sizes", {{"train_per_class", 0}})); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { ExperimentConfig::from_json(with("federation", {{"rounds", 10}})); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { ExperimentConfig::from_json(with("clients", {{{"bus", 2}, {"branch", {2, 3}}}})); }),
            ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { ExperimentConfig::from_json(with("model", {{"architecture", "cnn"}})); }), ErrorCode::kConfig);
  EXPECT_EQ(code_of([&] { ExperimentConfig::from_json(with("model", {{"d_model", 30}, {"num_heads", 4}})); }),
            ErrorCode::kConfig);
  EXPECT_EQ(code_of([] { ExperimentConfig::load("/nonexistent/config.json"); }), ErrorCode::kConfig);
}

TEST(ExperimentConfigTest, MissingCaseFileIsConfigError) {
  fedgrid::testing::TempDir ws("cfg");
  ExperimentConfig c;
  c.case_path = "absent.case";
  EXPECT_EQ(code_of([&] { c.validate(harness::Workspace{ws.path()}); }), ErrorCode::kConfig);
}

TEST(WorkspaceTest, FlagThenEnvironmentThenCwd) {
  fedgrid::testing::TempDir a("wsa"), b("wsb");
  ::setenv(harness::kWorkspaceEnv, b.path().c_str(), 1);
  EXPECT_EQ(harness::Workspace::resolve(a.path().string()).root, fs::absolute(a.path()));
  EXPECT_EQ(harness::Workspace::resolve(std::nullopt).root, fs::absolute(b.path()));
  ::unsetenv(harness::kWorkspaceEnv);
  EXPECT_EQ(harness::Workspace::resolve(std::nullopt).root, fs::current_path());
  EXPECT_EQ(code_of([] { harness::Workspace::resolve(std::string("/nonexistent/dir")); }), ErrorCode::kConfig);
  const harness::Workspace ws{a.path()};
  EXPECT_EQ(ws("x/y"), a.path() / "x/y");
  EXPECT_EQ(ws("/abs"), fs::path("/abs"));
}

// ---- end-to-end ----

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.case_path = fedgrid::testing::data_path("cases/ieee14.case");
  c.sizes = {30, 15};
  c.clients = {{2, 2, 3}, {9, 9, 14}};
  c.model = {{"architecture", "transformer"}, {"d_model", 8}, {"num_heads", 2}, {"num_blocks", 1},
             {"ff_hidden", 8}, {"head_hidden", 4}};
  c.federation.rounds = 2;
  c.federation.train.epochs = 2;
  c.federation.train.batch_size = 16;
  c.federation.train.learning_rate = 1e-3;
  c.key_bits = 64;
  c.output_dir = "out";
  return c;
}

void run_pipeline(harness::Experiment& exp) {
  exp.keygen();
  exp.generate_data();
  exp.train_local(true);
  exp.train_federated();
  exp.evaluate();
  exp.noise_sweep();
  exp.report();
}

TEST(ExperimentPipeline, ReportsAreReproducibleByteForByte) {
  fedgrid::testing::TempDir a("pipea"), b("pipeb");
  harness::Experiment ea(tiny_config(), {a.path()});
  harness::Experiment eb(tiny_config(), {b.path()});
  run_pipeline(ea);
  run_pipeline(eb);
  for (const char* f : {harness::paths::kReport, harness::paths::kRoundCurve, harness::paths::kNoiseCurve,
                        harness::paths::kMetrics, harness::paths::kMetricsCsv, harness::paths::kNoiseSweep})
    EXPECT_EQ(harness::read_text_file(ea.output(f)), harness::read_text_file(eb.output(f))) << f;
  for (int k = 0; k < 2; ++k)
    EXPECT_EQ(harness::read_text_file(harness::dataset_csv_path(ea.output("data"), k, "train")),
              harness::read_text_file(harness::dataset_csv_path(eb.output("data"), k, "train")));
  // Keys are fresh per workspace, yet nothing downstream depends on them.
  EXPECT_NE(harness::read_text_file(ea.output(harness::paths::kPublicKey)),
            harness::read_text_file(eb.output(harness::paths::kPublicKey)));
}

TEST(ExperimentPipeline, EmittedReportsSatisfyMetricIdentities) {
  fedgrid::testing::TempDir ws("ident");
  harness::Experiment exp(tiny_config(), {ws.path()});
  run_pipeline(exp);
  const auto metrics = exp.evaluate();
  EXPECT_EQ(metrics.entries.size(), 6u);  // local, federated, ideal for two clients
  for (const auto& e : metrics.entries) expect_identities(e.metrics, 30);
  const auto sweep = exp.noise_sweep();
  ASSERT_EQ(sweep.entries.size(), 8u);
  for (std::size_t i = 0; i < sweep.entries.size(); ++i) {
    EXPECT_DOUBLE_EQ(sweep.entries[i].noise_level, (std::vector<double>{0.01, 0.02, 0.03, 0.04})[i % 4]);
    expect_identities(sweep.entries[i].metrics, 30);
  }
  const auto report = exp.report();
  EXPECT_EQ(report.at("config_hash"), tiny_config().hash());
  EXPECT_EQ(report.at("schema_version"), harness::kReportSchemaVersion);
  EXPECT_EQ(report.at("datasets").size(), 4u);
  EXPECT_EQ(report.at("rounds").size(), 2u + 4u);
  for (const auto& r : report.at("rounds")) expect_identities(Metrics::from_json(r.at("post")), 30);
  const auto digest = report.at("datasets")[0].at("digest").get<std::string>();
  EXPECT_EQ(digest, util::git_blob_digest(harness::read_text_file(harness::dataset_csv_path(exp.output("data"), 0, "train"))));
  // Report carries no timing fields.
  EXPECT_EQ(report.dump().find("timings"), std::string::npos);
}

TEST(ExperimentPipeline, UntrainedModelIsAtChance) {
  fedgrid::testing::TempDir ws("chance");
  auto cfg = tiny_config();
  cfg.sizes = {30, 200};
  harness::Experiment exp(cfg, {ws.path()});
  exp.generate_data();
  const auto ds = harness::read_client_dataset(exp.output("data"), 0);
  auto mc = cfg.model;
  mc["input_features"] = ds.layout.size();
  const auto model = detector::make_classifier(mc);
  const auto x = detector::FeatureScaler::fit(detector::make_batch(ds.train).x).apply(detector::make_batch(ds.test).x);
  // A single draw can correlate with the attack direction; flipping the
  // output layer's sign is equally likely, so chance holds over draws.
  double mean = 0.0;
  constexpr int kDraws = 10;
  for (int seed = 1; seed <= kDraws; ++seed) {
    const auto preds = detector::predict(*model, model->init_weights(static_cast<std::uint64_t>(seed)), x);
    std::vector<int> p, y;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      p.push_back(preds[i].label);
      y.push_back(ds.test[i].label);
    }
    mean += *compute_metrics(p, y).accuracy / kDraws;
  }
  EXPECT_NEAR(mean, 0.5, 0.05);
}

TEST(ExperimentPipeline, StaleOrMissingInputsAreDataErrors) {
  fedgrid::testing::TempDir ws("stale");
  harness::Experiment exp(tiny_config(), {ws.path()});
  EXPECT_EQ(code_of([&] { exp.train_local(); }), ErrorCode::kIo);
  EXPECT_EQ(code_of([&] { exp.train_federated(); }), ErrorCode::kIo);
  EXPECT_EQ(code_of([&] { exp.report(); }), ErrorCode::kIo);
  exp.generate_data();
  auto other = tiny_config();
  other.seed = 99;
  harness::Experiment stale(other, {ws.path()});
  EXPECT_EQ(code_of([&] { stale.train_local(); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { exp.evaluate(); }), ErrorCode::kIo);
  EXPECT_EQ(code_of([&] { exp.noise_sweep("best"); }), ErrorCode::kConfig);
}

TEST(ExperimentPipeline, KeygenRejectsKeysTooSmallForTheEncoding) {
  fedgrid::testing::TempDir ws("smallkey");
  harness::Experiment exp(tiny_config(), {ws.path()});
  EXPECT_EQ(code_of([&] { exp.keygen(16u); }), ErrorCode::kConfig);
}

TEST(ExperimentPipeline, ErrorsNameTheFailingStage) {
  fedgrid::testing::TempDir ws("stage");
  harness::Experiment exp(tiny_config(), {ws.path()});
  try {
    exp.train_federated();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("train-federated:", 0), 0u) << e.what();
  }
}

TEST(ExperimentPipeline, FullSizesGiveExpectedRowCounts) {
  fedgrid::testing::TempDir ws("full");
  auto cfg = tiny_config();
  cfg.use_full_sizes();
  harness::Experiment exp(cfg, {ws.path()});
  exp.generate_data();
  for (int k = 0; k < 2; ++k) {
    harness::DatasetSidecar meta;
    const auto ds = harness::read_client_dataset(exp.output("data"), k, &meta);
    EXPECT_EQ(ds.train.size(), 20000u);
    EXPECT_EQ(ds.test.size(), 2000u);
    EXPECT_EQ(meta.rows, 20000u);
  }
}

}  // namespace
