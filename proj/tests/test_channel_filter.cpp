#include <random>

#include <gtest/gtest.h>

#include "feedcap/channel_filter.hpp"
#include "support/gaussian_oracle.hpp"
#include "support/random_models.hpp"

using namespace feedcap;

TEST(OutputStep, ZeroInputKeepsKZero) {
  const auto r = build_arma11(0.5, 0.1, 1.0, 3);
  const auto noise = run_noise_filter(r);
  const auto step = output_riccati_step(r, 0, Matrix::Zero(1, 1), noise.M[0], noise.K_Ihat[0],
                                        RowVector::Zero(1), 0.0);
  EXPECT_NEAR(step.K_next(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(step.K_I, noise.K_Ihat[0], 1e-15);
}

TEST(OutputStep, DitherOnlyClosedForm) {
  const auto r = build_arma11(0.5, 0.1, 1.0, 3);
  const auto noise = run_noise_filter(r);
  const double kappa = 0.7, m = noise.M[0](0), ki = noise.K_Ihat[0];
  const auto step = output_riccati_step(r, 0, Matrix::Zero(1, 1), noise.M[0], ki,
                                        RowVector::Zero(1), kappa);
  EXPECT_NEAR(step.K_next(0, 0), m * m * ki * kappa / (ki + kappa), 1e-14);
  EXPECT_NEAR(step.F(0), m * ki / (ki + kappa), 1e-14);
}

TEST(OutputStep, InnovationVarianceIgnoresLambdaWhenKZero) {
  const auto r = build_arma11(0.5, 0.1, 1.0, 3);
  for (double l : {-3.0, 0.0, 5.0}) {
    EXPECT_DOUBLE_EQ(output_innovation_variance(r, 0, Matrix::Zero(1, 1), 1.3, RowVector::Constant(1, l), 0.2),
                     1.5);
  }
}

TEST(OutputStep, RejectsIndefiniteK) {
  const auto r = build_arma11(0.5, 0.1, 1.0, 3);
  const auto noise = run_noise_filter(r);
  EXPECT_THROW(output_riccati_step(r, 0, Matrix::Constant(1, 1, -1.0), noise.M[0], noise.K_Ihat[0],
                                   RowVector::Zero(1), 0.0),
               std::invalid_argument);
}

TEST(OutputFilter, ZeroStrategy) {
  const auto r = build_arma11(0.5, 0.1, 1.0, 6);
  const auto noise = run_noise_filter(r);
  const auto out = run_output_filter(r, noise, SequentialStrategy::zero(6, 1));
  for (int t = 0; t < 6; ++t) {
    EXPECT_NEAR(out.K[t](0, 0), 0.0, 1e-14);
    EXPECT_NEAR(out.K_I[t], noise.K_Ihat[t], 1e-14);
    EXPECT_EQ(out.power[t], 0.0);
  }
}

TEST(OutputFilter, WhiteNoiseAnyLambda) {
  const auto r = build_white_noise(1.0, 5);
  const auto noise = run_noise_filter(r);
  SequentialStrategy s = SequentialStrategy::no_feedback(5, 1, 0.3);
  for (auto& l : s.Lambda) l(0) = 2.5;
  const auto out = run_output_filter(r, noise, s);
  for (int t = 0; t < 5; ++t) {
    EXPECT_EQ(out.K[t](0, 0), 0.0);
    EXPECT_NEAR(out.power[t], 0.3, 1e-15);
  }
}

TEST(OutputFilter, ArmaAgainstBruteForce) {
  const auto r = build_arma11(0.5, 0.1, 1.0, 5);
  SequentialStrategy s{std::vector<RowVector>(5, RowVector::Ones(1)), std::vector<double>(5, 0.5)};
  const auto out = run_output_filter(r, run_noise_filter(r), s);
  const auto bf = testkit::brute_force_loop(r, s);
  for (int t = 0; t < 5; ++t) {
    EXPECT_NEAR(out.K[t](0, 0), bf.K[t](0, 0), 1e-10);
    EXPECT_NEAR(out.K_I[t], bf.K_I[t], 1e-10);
    EXPECT_NEAR(out.power[t], bf.power[t], 1e-10);
  }
}

TEST(OutputFilter, RandomAgainstBruteForce) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = testkit::random_model(rng, 1 + trial % 6);
    const auto s = testkit::random_strategy(rng, r.n, r.n_s);
    const auto out = run_output_filter(r, run_noise_filter(r), s);
    const auto bf = testkit::brute_force_loop(r, s);
    for (int t = 0; t < r.n; ++t) {
      const double scale = 1.0 + bf.K[t].norm();
      EXPECT_LE(max_abs_diff(out.K[t], bf.K[t]), 1e-8 * scale) << "trial " << trial << " t " << t;
      EXPECT_NEAR(out.K_I[t], bf.K_I[t], 1e-8 * (1.0 + bf.K_I[t]));
      EXPECT_NEAR(out.power[t], bf.power[t], 1e-8 * (1.0 + bf.power[t]));
    }
  }
}

TEST(OutputFilter, RandomStaysPsdWithNonnegativeRates) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto r = testkit::random_model(rng, 1 + trial % 12, {.n_s_max = 4});
    const auto s = testkit::random_strategy(rng, r.n, r.n_s);
    const auto noise = run_noise_filter(r);
    const auto out = run_output_filter(r, noise, s);
    ASSERT_EQ(out.K[0].norm(), 0.0);
    for (int t = 0; t < r.n; ++t) {
      ASSERT_GE(min_eigenvalue(out.K[t]), -1e-9);
      ASSERT_GE(out.K_I[t], (noise.K_Ihat[t] + s.K_Z[t]) * (1 - 1e-9));
      ASSERT_GE(out.power[t], 0.0);
    }
  }
}

TEST(OutputFilter, StrategyShapeChecked) {
  const auto r = build_arma11(0.5, 0.1, 1.0, 3);
  const auto noise = run_noise_filter(r);
  EXPECT_THROW(run_output_filter(r, noise, SequentialStrategy::zero(2, 1)), std::invalid_argument);
  auto s = SequentialStrategy::zero(3, 1);
  s.K_Z[1] = -0.1;
  EXPECT_THROW(run_output_filter(r, noise, s), std::invalid_argument);
}
