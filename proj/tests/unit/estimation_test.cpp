#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedgrid/error.hpp"
#include "fedgrid/estimation/wls.hpp"
#include "fedgrid/grid/power_flow.hpp"
#include "test_util.hpp"

namespace fedgrid::estimation {
namespace {

using grid::MeasurementSchema;

class Ieee14Estimation : public ::testing::Test {
 protected:
  void SetUp() override {
    net_ = grid::load_case(testing::data_path("cases/ieee14.case"));
    schema_ = MeasurementSchema::default_for(net_, kSigma);
    auto pf = grid::solve_base_case(net_);
    ASSERT_TRUE(pf.converged);
    truth_ = pf.state;
    clean_ = grid::measurement_function(truth_, net_, schema_);
  }

  Eigen::VectorXd noisy(std::mt19937_64& rng) const {
    std::normal_distribution<double> noise(0.0, kSigma);
    Eigen::VectorXd z = clean_;
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) += noise(rng);
    return z;
  }

  static constexpr double kSigma = 0.01;
  grid::NetworkCase net_ = grid::load_case(testing::data_path("cases/ieee14.case"));
  MeasurementSchema schema_;
  grid::StateVector truth_;
  Eigen::VectorXd clean_;
};

TEST_F(Ieee14Estimation, ZeroNoiseRecoversTrueState) {
  const auto result = wls_estimate(clean_, net_, schema_);
  EXPECT_TRUE(result.converged);
  EXPECT_LT((result.estimated_state.voltage_mag - truth_.voltage_mag).lpNorm<Eigen::Infinity>(), 1e-8);
  EXPECT_LT((result.estimated_state.voltage_ang - truth_.voltage_ang).lpNorm<Eigen::Infinity>(), 1e-8);
  EXPECT_LT(result.residual_norm, 1e-8);
}

TEST_F(Ieee14Estimation, ObjectiveNonIncreasingAcrossIterations) {
  std::mt19937_64 rng(4);
  const auto z = noisy(rng);
  double previous = std::numeric_limits<double>::infinity();
  for (int iters = 1; iters <= 8; ++iters) {
    WlsOptions opts;
    opts.max_iterations = iters;
    const auto r = wls_estimate(z, net_, schema_, grid::StateVector::flat(net_), opts);
    EXPECT_LE(r.objective, previous * (1.0 + 1e-12));
    previous = r.objective;
  }
}

TEST_F(Ieee14Estimation, ResidualSquareFollowsChiSquare) {
  const std::size_t dof = schema_.size() - net_.num_states();
  std::mt19937_64 rng(2024);
  const int trials = 1000;
  double sum = 0.0;
  int flagged = 0;
  const double tau = chi_square_threshold(dof, 0.99);
  for (int t = 0; t < trials; ++t) {
    const auto r = wls_estimate(noisy(rng), net_, schema_);
    ASSERT_TRUE(r.converged);
    sum += r.residual_norm * r.residual_norm;
    flagged += r.residual_norm > tau;
  }
  EXPECT_NEAR(sum / trials, static_cast<double>(dof), 0.05 * static_cast<double>(dof));
  // 1% nominal false-alarm rate; binomial sd over 1000 trials is ~0.3%.
  EXPECT_LE(flagged, 25);
}

TEST_F(Ieee14Estimation, CleanMeasurementsPassBddAtConfidence) {
  const auto config = BddConfig::derive(net_, schema_, 0.99);
  EXPECT_EQ(config.degrees_of_freedom, schema_.size() - net_.num_states());
  std::mt19937_64 rng(99);
  int normal = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t)
    normal += bdd_check(noisy(rng), net_, schema_, config).verdict == BddVerdict::kNormal;
  EXPECT_NEAR(static_cast<double>(normal) / trials, 0.99, 0.015);
}

TEST_F(Ieee14Estimation, GrossErrorIsFlagged) {
  const auto config = BddConfig::derive(net_, schema_);
  std::mt19937_64 rng(5);
  for (std::size_t m = 0; m < schema_.size(); m += 7) {
    auto z = noisy(rng);
    z(static_cast<Eigen::Index>(m)) += 20.0 * kSigma;
    EXPECT_EQ(bdd_check(z, net_, schema_, config).verdict, BddVerdict::kFlagged) << "entry " << m;
  }
}

TEST_F(Ieee14Estimation, UnobservableSchemaIsSingular) {
  using grid::MeasurementKind;
  std::vector<grid::MeasurementEntry> entries;
  // Enough rows to pass the count check, but all at one bus.
  for (int rep = 0; rep < 14; ++rep) {
    entries.push_back({MeasurementKind::kPInjection, 3, 0, grid::BranchEnd::kFrom, 1.0});
    entries.push_back({MeasurementKind::kQInjection, 3, 0, grid::BranchEnd::kFrom, 1.0});
  }
  MeasurementSchema one_bus(entries);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(one_bus.size()));
  try {
    wls_estimate(z, net_, one_bus);
    FAIL() << "expected singular gain";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSingular);
  }
  MeasurementSchema two_rows({entries[0], entries[1]});
  EXPECT_THROW(wls_estimate(Eigen::VectorXd::Zero(2), net_, two_rows), Error);
}

TEST(ResidualNorm, ZeroAndUnitVector) {
  std::mt19937_64 rng(8);
  const auto net = testing::random_case(rng);
  const auto schema = testing::full_schema(net);
  const auto x = testing::random_state(rng, net);
  Eigen::VectorXd z = grid::measurement_function(x, net, schema);
  EXPECT_EQ(residual_norm(z, x, net, schema), 0.0);
  z(2) += 1.0;
  EXPECT_NEAR(residual_norm(z, x, net, schema), 1.0, 1e-12);
}

TEST(ResidualNorm, MatchesPerElementRecomputation) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd(0.0, 0.3);
  const auto net = testing::random_case(rng);
  std::vector<grid::MeasurementEntry> entries = testing::full_schema(net).entries();
  std::uniform_real_distribution<double> w(0.5, 3.0);
  for (auto& e : entries) e.weight = w(rng);
  const MeasurementSchema schema(entries);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = testing::random_state(rng, net);
    const Eigen::VectorXd h = grid::measurement_function(x, net, schema);
    Eigen::VectorXd z(h.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = nd(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < schema.size(); ++i) {
      const double d = z(static_cast<Eigen::Index>(i)) - h(static_cast<Eigen::Index>(i));
      acc += schema[i].weight * d * d;
    }
    EXPECT_NEAR(residual_norm(z, x, net, schema), std::sqrt(acc), 1e-12);
  }
  EXPECT_THROW(residual_norm(Eigen::VectorXd::Zero(1), testing::random_state(rng, net), net, schema),
               Error);
}

TEST(ChiSquareThreshold, TableValues) {
  EXPECT_NEAR(chi_square_threshold(1, 0.95), std::sqrt(3.841459), 1e-5);
  EXPECT_NEAR(chi_square_threshold(1, 0.95), 1.960, 5e-4);
  EXPECT_NEAR(chi_square_threshold(10, 0.99), std::sqrt(23.209251), 1e-5);
  EXPECT_NEAR(chi_square_threshold(10, 0.99), 4.817, 1e-3);
}

TEST(ChiSquareThreshold, MonotoneInConfidenceAndRejectsBadInput) {
  double prev = 0.0;
  for (double c : {0.5, 0.9, 0.99, 0.999, 0.99999, 0.9999999}) {
    const double tau = chi_square_threshold(5, c);
    EXPECT_GT(tau, prev);
    prev = tau;
  }
  EXPECT_GT(prev, 6.0);
  EXPECT_THROW(chi_square_threshold(0, 0.9), Error);
  EXPECT_THROW(chi_square_threshold(3, 1.0), Error);
  EXPECT_THROW(chi_square_threshold(3, 0.0), Error);
  EXPECT_THROW(BddConfig::with_threshold(-1.0, 3), Error);
}

}  // namespace
}  // namespace fedgrid::estimation
