#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "feedcap/capacity.hpp"
#include "feedcap/mc_sim.hpp"
#include "feedcap/oracle.hpp"
#include "support/random_models.hpp"

using namespace feedcap;

TEST(CpObjective, ScalarAwgn) {
  CoverPombraStrategy s{Matrix::Zero(1, 1), Matrix::Constant(1, 1, 3.0)};
  const auto v = cp_objective(Matrix::Identity(1, 1), s);
  EXPECT_NEAR(v.value, 0.5 * std::log(4.0), 1e-15);
  EXPECT_NEAR(v.avg_power, 3.0, 1e-15);
}

TEST(CpObjective, ZeroStrategy) {
  const Matrix K_V = assemble_noise_covariance(build_arma11(0.5, 0.1, 1.0, 3));
  const auto v = cp_objective(K_V, CoverPombraStrategy::zero(3));
  EXPECT_NEAR(v.value, 0.0, 1e-14);
  EXPECT_EQ(v.avg_power, 0.0);
}

TEST(CpObjective, ArmaAgainstSampledEntropy) {
  const auto r = build_arma11(0.5, 0.1, 1.0, 2);
  const Matrix K_V = assemble_noise_covariance(r);
  CoverPombraStrategy s = CoverPombraStrategy::zero(2);
  s.B(1, 0) = 0.3;
  s.K_Zbar = 0.5 * Matrix::Identity(2, 2);
  const auto v = cp_objective(K_V, s);
  const Matrix BI = s.B + Matrix::Identity(2, 2);
  const Matrix KY = BI * K_V * BI.transpose() + s.K_Zbar;
  EXPECT_NEAR(v.value, 0.5 * std::log(KY.determinant() / K_V.determinant()), 1e-14);
  EXPECT_NEAR(v.avg_power, (s.B * K_V * s.B.transpose() + s.K_Zbar).trace() / 2.0, 1e-15);

  // Gaussian entropy of the sampled output covariance.
  const auto tr = simulate(r, s, 200000, 5);
  const Matrix KY_hat = empirical_covariance(tr.Y);
  const double sampled = 0.5 * std::log(KY_hat.determinant() / K_V.determinant());
  EXPECT_NEAR(sampled, v.value, 0.02);
}

TEST(CpObjective, SingularNoiseThrows) {
  EXPECT_THROW(cp_objective(Matrix::Zero(2, 2), CoverPombraStrategy::zero(2)), std::invalid_argument);
}

TEST(CpObjective, RejectsAnticausalB) {
  CoverPombraStrategy s = CoverPombraStrategy::zero(2);
  s.B(0, 1) = 0.1;
  EXPECT_THROW(cp_objective(Matrix::Identity(2, 2), s), std::invalid_argument);
}

TEST(Unroll, NoFeedbackIsDiagonal) {
  const auto r = build_arma11(0.5, 0.1, 1.0, 4);
  SequentialStrategy s = SequentialStrategy::no_feedback(4, 1, 0.0);
  s.K_Z = {0.1, 0.2, 0.3, 0.4};
  const auto cp = unroll_sequential(r, s, run_noise_filter(r));
  EXPECT_TRUE(cp.B.isZero(0.0));
  EXPECT_TRUE(cp.K_Zbar.isApprox(Vector::LinSpaced(4, 0.1, 0.4).asDiagonal().toDenseMatrix()));
}

TEST(Unroll, TwoStepHandElimination) {
  // n = 2, scalar state, K_1 = 0: X_2 = Λ_2(Ŝ_2 - Ŝ̂_2) + Z_2 with
  // Ŝ_2 - μ = M_1 (V_1 - E V_1) and Ŝ̂_2 - μ = F_1 (Y_1 - E Y_1),
  // Y_1 = V_1 + Z_1 (Λ_1 has no effect at K_1 = 0).
  const auto r = build_arma11(0.5, 0.1, 1.0, 2);
  const auto noise = run_noise_filter(r);
  SequentialStrategy s{{RowVector::Constant(1, 0.7), RowVector::Constant(1, 1.3)}, {0.4, 0.6}};
  const auto out = run_output_filter(r, noise, s);
  const auto cp = unroll_sequential(r, s, noise);
  const double m = noise.M[0](0), f = out.F[0](0), l = 1.3;
  EXPECT_NEAR(cp.B(1, 0), l * (m - f), 1e-14);
  EXPECT_EQ(cp.B(0, 0), 0.0);
  EXPECT_EQ(cp.B(0, 1), 0.0);
  EXPECT_EQ(cp.B(1, 1), 0.0);
  // Z̄_2 = -Λ_2 F_1 Z_1 + Z_2.
  EXPECT_NEAR(cp.K_Zbar(0, 0), 0.4, 1e-15);
  EXPECT_NEAR(cp.K_Zbar(1, 0), -l * f * 0.4, 1e-14);
  EXPECT_NEAR(cp.K_Zbar(1, 1), l * f * l * f * 0.4 + 0.6, 1e-14);
}

TEST(Unroll, EquivalenceOverRandomPairs) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 500; ++trial) {
    const auto r = testkit::random_model(rng, 1 + trial % 6);
    const auto s = testkit::random_strategy(rng, r.n, r.n_s);
    const auto noise = run_noise_filter(r);
    const auto cp = unroll_sequential(r, s, noise);
    ASSERT_TRUE(cp.B.triangularView<Eigen::Upper>().toDenseMatrix().isZero(0.0));
    const auto seq = evaluate_rate(r, s);
    const auto mat = cp_objective(assemble_noise_covariance(r), cp);
    EXPECT_NEAR(mat.value, seq.value, 1e-9) << "trial " << trial;
    EXPECT_NEAR(mat.avg_power, seq.avg_power, 1e-9 * (1 + seq.avg_power)) << "trial " << trial;
  }
}

TEST(Unroll, OutputEntropyFactorizes) {
  std::mt19937_64 rng(52);
  const double c = std::log(2 * std::numbers::pi * std::numbers::e);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = testkit::random_model(rng, 1 + trial % 6);
    const auto s = testkit::random_strategy(rng, r.n, r.n_s);
    const auto noise = run_noise_filter(r);
    const auto out = run_output_filter(r, noise, s);
    const Matrix joint = joint_covariance(assemble_noise_covariance(r), unroll_sequential(r, s, noise));
    const Matrix KY = joint.bottomRightCorner(r.n, r.n);
    double h_filter = 0.0;
    for (double k : out.K_I) h_filter += 0.5 * (c + std::log(k));
    EXPECT_NEAR(0.5 * (r.n * c + log_det_spd(KY)), h_filter, 1e-8);
  }
}

TEST(JointCovariance, ZeroStrategy) {
  const Matrix K_V = assemble_noise_covariance(build_arma11(0.5, 0.1, 1.0, 3));
  const Matrix J = joint_covariance(K_V, CoverPombraStrategy::zero(3));
  EXPECT_TRUE(J.topLeftCorner(3, 3).isZero(0.0));
  EXPECT_TRUE(J.bottomRightCorner(3, 3).isApprox(K_V));
}

TEST(Innovations, IndependentDitherNeedsNoCorrection) {
  const Matrix K_V = assemble_noise_covariance(build_arma11(0.5, 0.1, 1.0, 3));
  CoverPombraStrategy s = CoverPombraStrategy::zero(3);
  s.K_Zbar.diagonal() << 0.2, 0.5, 0.9;
  const auto conv = cp_to_innovations_form(K_V, s);
  EXPECT_TRUE(conv.strategy.gamma1_matrix().isZero(1e-14));
  EXPECT_TRUE(conv.strategy.gamma2_matrix().isZero(1e-14));
  EXPECT_NEAR(conv.strategy.K_Z[0], 0.2, 1e-14);
  EXPECT_NEAR(conv.strategy.K_Z[1], 0.5, 1e-14);
  EXPECT_NEAR(conv.strategy.K_Z[2], 0.9, 1e-14);
  EXPECT_FALSE(conv.regularized);
}

TEST(Innovations, TwoStepDiagonal) {
  const Matrix K_V = assemble_noise_covariance(build_arma11(0.5, 0.1, 1.0, 2));
  CoverPombraStrategy s = CoverPombraStrategy::zero(2);
  s.B(1, 0) = 0.8;
  s.K_Zbar.diagonal() << 0.3, 0.6;
  const auto conv = cp_to_innovations_form(K_V, s);
  EXPECT_NEAR(conv.strategy.Gamma1[1](0), 0.8, 1e-12);
  EXPECT_NEAR(conv.strategy.Gamma2[1](0), 0.0, 1e-12);
  EXPECT_NEAR(conv.strategy.K_Z[1], 0.6, 1e-12);
}

TEST(Innovations, CorrelatedDitherUsesOutputFeedback) {
  const Matrix K_V = assemble_noise_covariance(build_arma11(0.5, 0.1, 1.0, 2));
  CoverPombraStrategy s = CoverPombraStrategy::zero(2);
  s.K_Zbar << 1.0, 0.4, 0.4, 1.0;
  const auto conv = cp_to_innovations_form(K_V, s);
  EXPECT_GT(std::abs(conv.strategy.Gamma2[1](0)), 1e-3);
  EXPECT_LE(max_abs_diff(joint_covariance(K_V, s), joint_covariance(K_V, conv.strategy)), 1e-9);
}

TEST(Innovations, RoundTripOverRandomStrategies) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = testkit::random_model(rng, 1 + trial % 5);
    const Matrix K_V = assemble_noise_covariance(r);
    const auto s = testkit::random_cover_pombra(rng, r.n);
    const auto conv = cp_to_innovations_form(K_V, s);
    const Matrix a = joint_covariance(K_V, s), b = joint_covariance(K_V, conv.strategy);
    EXPECT_LE(max_abs_diff(a, b), 1e-9 * (1 + a.cwiseAbs().maxCoeff())) << "trial " << trial;
    for (double k : conv.strategy.K_Z) EXPECT_GE(k, 0.0);
  }
}

TEST(Innovations, ToCoverPombraInverts) {
  std::mt19937_64 rng(54);
  const auto r = testkit::random_model(rng, 4);
  const Matrix K_V = assemble_noise_covariance(r);
  const auto s = testkit::random_cover_pombra(rng, 4);
  const auto back = to_cover_pombra(cp_to_innovations_form(K_V, s).strategy);
  EXPECT_LE(max_abs_diff(back.B, s.B), 1e-9);
  EXPECT_LE(max_abs_diff(back.K_Zbar, s.K_Zbar), 1e-9);
}

TEST(CpOptimize, WhiteNoise) {
  OptimizerOptions o;
  o.restarts = 4;
  for (int n : {1, 2, 3}) {
    const auto opt = cp_optimize(Matrix::Identity(n, n), {1.0, n}, o);
    EXPECT_NEAR(opt.value, 0.5 * n * std::log(2.0), 1e-5);
    EXPECT_LE(opt.avg_power, 1.0 + 1e-8);
  }
}

TEST(CpOptimize, SingleStep) {
  const Matrix K_V = Matrix::Constant(1, 1, 1.7);
  EXPECT_NEAR(cp_optimize(K_V, {2.0, 1}).value, 0.5 * std::log(1.0 + 2.0 / 1.7), 1e-12);
}

TEST(CpOptimize, HorizonGuard) {
  EXPECT_THROW(cp_optimize(Matrix::Identity(9, 9), {1.0, 9}), std::invalid_argument);
}

TEST(CpOptimize, OptimumAgreementOnRandomModels) {
  std::mt19937_64 rng(55);
  OptimizerOptions o;
  o.restarts = 8;
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 1 + trial % 3;
    const auto r = testkit::random_model(rng, n);
    const auto seq = optimize_strategy(r, {1.0, n}, o);
    const auto cp = cp_optimize(assemble_noise_covariance(r), {1.0, n}, o);
    EXPECT_NEAR(seq.value, cp.value, 1e-4) << "trial " << trial;
  }
}
