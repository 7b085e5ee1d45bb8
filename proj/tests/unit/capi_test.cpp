// Exercises the shared library through its C header only.
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fedgrid/fedgrid.h"
#include "temp_dir.hpp"

namespace {

using fedgrid::testing::TempDir;

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::string tiny_config_json() {
  return std::string(R"({"case": ")") + FEDGRID_DATA_DIR + R"(/cases/ieee14.case",
    "strength": "weak", "sizes": {"train_per_class": 20, "test_per_class": 10},
    "clients": [{"bus": 2, "branch": [2, 3]}, {"bus": 4, "branch": [4, 5]}],
    "model": {"architecture": "mlp", "hidden1": 8, "hidden2": 4},
    "federation": {"rounds": 1, "train": {"epochs": 1, "batch_size": 8}},
    "key_bits": 64, "output_dir": "out"})";
}

TEST(CApi, StatusNamesAndVersion) {
  EXPECT_STREQ(fedgrid_status_name(FEDGRID_OK), "ok");
  EXPECT_STREQ(fedgrid_status_name(FEDGRID_ERR_NUMERIC), "numeric failure");
  EXPECT_EQ(FEDGRID_ERR_CONFIG, 2);
  EXPECT_EQ(FEDGRID_ERR_DATA, 3);
  EXPECT_EQ(FEDGRID_ERR_NUMERIC, 4);
  EXPECT_GT(std::string(fedgrid_version()).size(), 0u);
}

TEST(CApi, ComputeMetrics) {
  const int p[] = {1, 1, 0, 0, 1};
  const int y[] = {1, 0, 0, 1, 1};
  fedgrid_metrics m{};
  ASSERT_EQ(fedgrid_compute_metrics(p, y, 5, &m), FEDGRID_OK);
  EXPECT_STREQ(fedgrid_last_error(), "");
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.tn, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.6);
  EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3.0);

  const int none[] = {0, 0};
  const int neg[] = {0, 0};
  ASSERT_EQ(fedgrid_compute_metrics(none, neg, 2, &m), FEDGRID_OK);
  EXPECT_EQ(m.has_precision, 0);
  EXPECT_TRUE(std::isnan(m.precision));
  EXPECT_EQ(m.has_accuracy, 1);

  const int bad[] = {3};
  EXPECT_EQ(fedgrid_compute_metrics(bad, y, 1, &m), FEDGRID_ERR_DATA);
  EXPECT_NE(std::string(fedgrid_last_error()).find("0 or 1"), std::string::npos);
  EXPECT_EQ(fedgrid_compute_metrics(p, y, 5, nullptr), FEDGRID_ERR_CONFIG);
}

TEST(CApi, SecureAverageMatchesPlainMean) {
  fedgrid_keypair* keys = nullptr;
  ASSERT_EQ(fedgrid_keypair_generate(64, 7, &keys), FEDGRID_OK);
  char id[32];
  size_t needed = 0;
  ASSERT_EQ(fedgrid_keypair_id(keys, id, sizeof id, &needed), FEDGRID_OK);
  EXPECT_EQ(std::string(id).size(), 16u);
  EXPECT_EQ(fedgrid_keypair_id(keys, id, 4, &needed), FEDGRID_ERR_CONFIG);
  EXPECT_EQ(needed, 17u);

  constexpr size_t kClients = 3, kDims = 500;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> w(kClients * kDims), out(kDims);
  for (double& v : w) v = u(rng);
  ASSERT_EQ(fedgrid_secure_average(keys, w.data(), kClients, kDims, out.data()), FEDGRID_OK);
  for (size_t d = 0; d < kDims; ++d)
    EXPECT_NEAR(out[d], (w[d] + w[kDims + d] + w[2 * kDims + d]) / 3.0, 1e-7);

  w[0] = std::nan("");
  EXPECT_EQ(fedgrid_secure_average(keys, w.data(), kClients, kDims, out.data()), FEDGRID_ERR_NUMERIC);
  fedgrid_keypair_free(keys);
}

TEST(CApi, TooSmallKeyIsConfigError) {
  fedgrid_keypair* keys = nullptr;
  ASSERT_EQ(fedgrid_keypair_generate(16, 3, &keys), FEDGRID_OK);
  const double w[] = {0.5, 0.25};
  double out[1];
  EXPECT_EQ(fedgrid_secure_average(keys, w, 2, 1, out), FEDGRID_ERR_CONFIG);
  fedgrid_keypair_free(keys);
}

TEST(CApi, NullHandlesAreRejected) {
  EXPECT_EQ(fedgrid_generate_data(nullptr), FEDGRID_ERR_CONFIG);
  EXPECT_EQ(fedgrid_report(nullptr), FEDGRID_ERR_CONFIG);
  fedgrid_experiment_close(nullptr);
  fedgrid_keypair_free(nullptr);
}

TEST(CApi, OpenFailuresAreConfigErrors) {
  TempDir ws("capi-open");
  fedgrid_experiment* exp = reinterpret_cast<fedgrid_experiment*>(0x1);
  EXPECT_EQ(fedgrid_experiment_open("missing.json", ws.path().c_str(), 0, &exp), FEDGRID_ERR_CONFIG);
  EXPECT_EQ(exp, nullptr);
  write_file(ws.path() / "bad.json", "{not json");
  EXPECT_EQ(fedgrid_experiment_open("bad.json", ws.path().c_str(), 0, &exp), FEDGRID_ERR_CONFIG);
  write_file(ws.path() / "unknown.json", R"({"learning": 1})");
  EXPECT_EQ(fedgrid_experiment_open("unknown.json", ws.path().c_str(), 0, &exp), FEDGRID_ERR_CONFIG);
  EXPECT_NE(std::string(fedgrid_last_error()).find("learning"), std::string::npos);
}

TEST(CApi, PipelineThroughHandles) {
  TempDir ws("capi-run");
  write_file(ws.path() / "exp.json", tiny_config_json());
  fedgrid_experiment* exp = nullptr;
  ASSERT_EQ(fedgrid_experiment_open("exp.json", ws.path().c_str(), 0, &exp), FEDGRID_OK) << fedgrid_last_error();
  std::vector<std::string> messages;
  fedgrid_experiment_set_logger(
      exp, [](const char* m, void* u) { static_cast<std::vector<std::string>*>(u)->push_back(m); }, &messages);

  char hash[32];
  ASSERT_EQ(fedgrid_experiment_config_hash(exp, hash, sizeof hash, nullptr), FEDGRID_OK);
  EXPECT_EQ(std::string(hash).size(), 16u);

  EXPECT_EQ(fedgrid_train_federated(exp), FEDGRID_ERR_DATA);  // no keys yet
  ASSERT_EQ(fedgrid_keygen(exp, 0), FEDGRID_OK) << fedgrid_last_error();
  ASSERT_EQ(fedgrid_generate_data(exp), FEDGRID_OK) << fedgrid_last_error();
  ASSERT_EQ(fedgrid_train_local(exp, 0), FEDGRID_OK) << fedgrid_last_error();
  ASSERT_EQ(fedgrid_train_federated(exp), FEDGRID_OK) << fedgrid_last_error();
  ASSERT_EQ(fedgrid_evaluate(exp), FEDGRID_OK) << fedgrid_last_error();
  ASSERT_EQ(fedgrid_noise_sweep(exp, nullptr), FEDGRID_OK) << fedgrid_last_error();
  EXPECT_EQ(fedgrid_noise_sweep(exp, "ideal"), FEDGRID_ERR_DATA);
  ASSERT_EQ(fedgrid_report(exp), FEDGRID_OK) << fedgrid_last_error();
  EXPECT_FALSE(messages.empty());
  EXPECT_TRUE(std::filesystem::exists(ws.path() / "out/reports/report.json"));

  // Tampering with a dataset is a data error.
  write_file(ws.path() / "out/data/client1_train.csv", "x,label\n1,0\n");
  EXPECT_EQ(fedgrid_train_local(exp, 0), FEDGRID_ERR_DATA);
  EXPECT_NE(std::string(fedgrid_last_error()).find("train-local"), std::string::npos);
  fedgrid_experiment_close(exp);
}

}  // namespace
