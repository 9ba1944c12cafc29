#pragma once

// Monte Carlo simulation of the closed loop Y_t = X_t + V_t under any of the
// three input forms. Primitive randomness comes from GaussianStreams, so two
// strategy forms simulated with the same seed see the same S_1, W^n and
// dither draws ξ^n.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <variant>
#include <vector>

#include <Eigen/QR>

#include "feedcap/channel_filter.hpp"
#include "feedcap/linalg.hpp"
#include "feedcap/model.hpp"
#include "feedcap/noise_filter.hpp"
#include "feedcap/oracle.hpp"
#include "feedcap/philox.hpp"

namespace feedcap {

using AnyStrategy = std::variant<SequentialStrategy, CoverPombraStrategy, InnovationsFormStrategy>;

/// Sample paths, one row per sample. Vector processes store component i of
/// step t in column t * dim + i.
struct SimulationTrace {
  int n = 0, n_s = 0, n_w = 0;
  int n_samples = 0;
  std::uint64_t seed = 0;
  Matrix S, W, S_hat, S_hathat;
  Matrix V, I_hat, X, Z, Y, I;
};

namespace detail {

/// X = B (V - E V) + G ξ with ξ the standard normals of the dither stream.
struct LinearInput {
  Matrix B;
  Matrix G;
};

inline LinearInput linear_input(const PoSsRealization& r, const AnyStrategy& strategy,
                                const NoiseFilterTrace& noise) {
  const int n = r.n;
  if (const auto* seq = std::get_if<SequentialStrategy>(&strategy)) {
    const auto cp = unroll_sequential(r, *seq, noise);
    // K_Z̄ = G diag(K_Z) Gᵀ with G unit lower triangular; its semidefinite
    // Cholesky factor is G diag(√K_Z) whenever every K_Z_t > 0.
    return {cp.B, psd_cholesky(cp.K_Zbar)};
  }
  if (const auto* cp = std::get_if<CoverPombraStrategy>(&strategy)) {
    check_cover_pombra(*cp, n);
    return {cp->B, psd_cholesky(cp->K_Zbar)};
  }
  const auto& inn = std::get<InnovationsFormStrategy>(strategy);
  const auto cp = to_cover_pombra(inn);
  const Matrix G2 = inn.gamma2_matrix();
  const Matrix T = (Matrix::Identity(n, n) - G2)
                       .triangularView<Eigen::UnitLower>()
                       .solve(Matrix::Identity(n, n));
  Vector root(n);
  for (int t = 0; t < n; ++t) root(t) = std::sqrt(inn.K_Z[t]);
  return {cp.B, T * root.asDiagonal()};
}

/// Coefficients of Ŝ_t - E Ŝ_t on the centered noise, from the filter gains.
inline std::vector<Matrix> noise_estimate_maps(const PoSsRealization& r,
                                               const NoiseFilterTrace& noise) {
  std::vector<Matrix> maps;
  Matrix H = Matrix::Zero(r.n_s, r.n);
  for (int t = 0; t < r.n; ++t) {
    maps.push_back(H);
    if (t + 1 == r.n) break;
    RowVector iV = -r.C[t] * H;
    iV(t) += 1.0;
    H = r.A[t] * H + noise.M[t] * iV;
  }
  return maps;
}

}  // namespace detail

/// Simulates with the encoder-side noise filter given by `noise`; passing a
/// trace other than run_noise_filter(r) models a mis-tuned encoder.
inline SimulationTrace simulate(const PoSsRealization& r, const AnyStrategy& strategy,
                                int n_samples, std::uint64_t seed, const NoiseFilterTrace& noise) {
  require_valid(r);
  if (n_samples < 1) throw std::invalid_argument("n_samples must be at least 1");
  const int n = r.n, n_s = r.n_s, n_w = r.n_w;
  std::visit(
      [&](const auto& s) {
        if (s.horizon() != n) throw std::invalid_argument("strategy horizon does not match the model");
      },
      strategy);

  using Stream = GaussianStreams::Stream;
  const GaussianStreams rng(seed);
  const Matrix init_factor = psd_factor(r.K_S1);
  std::vector<Matrix> driver_factor;
  for (int t = 0; t < n; ++t) driver_factor.push_back(psd_factor(r.K_W[t]));
  const auto means = state_means(r);
  const Vector mu_V = noise_mean(r);

  SimulationTrace tr;
  tr.n = n;
  tr.n_s = n_s;
  tr.n_w = n_w;
  tr.n_samples = n_samples;
  tr.seed = seed;
  tr.S.resize(n_samples, n * n_s);
  tr.W.resize(n_samples, n * n_w);
  tr.S_hat.resize(n_samples, n * n_s);
  tr.S_hathat.resize(n_samples, n * n_s);
  for (Matrix* m : {&tr.V, &tr.I_hat, &tr.X, &tr.Z, &tr.Y, &tr.I}) m->resize(n_samples, n);

  const auto* seq = std::get_if<SequentialStrategy>(&strategy);
  OutputFilterTrace out;
  if (seq) out = run_output_filter(r, noise, *seq);

  // Matrix-form inputs: X = B (V - E V) + G ξ, and the receiver-side
  // quantities come from Gaussian regression on Y^{t-1}.
  detail::LinearInput lin;
  std::vector<RowVector> y_regress;   // E[Y_t - E Y_t | Y^{t-1}] coefficients
  std::vector<Matrix> s_regress;      // E[Ŝ_t - E Ŝ_t | Y^{t-1}] coefficients
  if (!seq) {
    lin = detail::linear_input(r, strategy, noise);
    const Matrix K_V = assemble_noise_covariance(r);
    const Matrix BI = lin.B + Matrix::Identity(n, n);
    const Matrix K_Y = symmetrized(BI * K_V * BI.transpose() + lin.G * lin.G.transpose());
    const auto maps = detail::noise_estimate_maps(r, noise);
    for (int t = 0; t < n; ++t) {
      if (t == 0) {
        y_regress.emplace_back(0);
        s_regress.emplace_back(n_s, 0);
        continue;
      }
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(K_Y.topLeftCorner(t, t));
      y_regress.push_back(cod.solve(K_Y.row(t).head(t).transpose()).transpose());
      const Matrix cross = (maps[t] * K_V * BI.transpose()).leftCols(t);
      s_regress.push_back(cod.solve(cross.transpose()).transpose());
    }
  }

  Vector S(n_s), S_hat(n_s), S_hathat(n_s), W(n_w), xi(n);
  for (int k = 0; k < n_samples; ++k) {
    const auto sample = static_cast<std::uint32_t>(k);
    Vector z1(n_s);
    for (int i = 0; i < n_s; ++i) z1(i) = rng.normal(Stream::InitialState, sample, 0, i);
    S = r.mu_S1 + init_factor * z1;
    S_hat = r.mu_S1;
    S_hathat = r.mu_S1;
    for (int t = 0; t < n; ++t) xi(t) = rng.normal(Stream::Dither, sample, t, 0);
    Vector Vc(n);  // centered noise, needed by the matrix forms

    for (int t = 0; t < n; ++t) {
      Vector w(n_w);
      for (int i = 0; i < n_w; ++i) w(i) = rng.normal(Stream::Driver, sample, t, i);
      W = driver_factor[t] * w;
      const double v = r.C[t].dot(S) + r.N[t].dot(W);
      const double i_hat = v - r.C[t].dot(S_hat);
      Vc(t) = v - mu_V(t);

      double x = 0.0, z = 0.0;
      if (seq) {
        z = std::sqrt(seq->K_Z[t]) * xi(t);
        x = seq->Lambda[t].dot(S_hat - S_hathat) + z;
      } else if (std::holds_alternative<CoverPombraStrategy>(strategy)) {
        z = lin.G(t, t) * xi(t);
        x = lin.B.row(t).head(t).dot(Vc.head(t)) + lin.G.row(t).head(t + 1).dot(xi.head(t + 1));
      } else {
        const auto& inn = std::get<InnovationsFormStrategy>(strategy);
        z = std::sqrt(inn.K_Z[t]) * xi(t);
        const Vector Yc = tr.Y.row(k).head(t).transpose() - mu_V.head(t);
        x = inn.Gamma1[t].dot(Vc.head(t)) + inn.Gamma2[t].dot(Yc) + z;
      }
      const double y = x + v;

      if (!seq) {
        const Vector Yc = tr.Y.row(k).head(t).transpose() - mu_V.head(t);
        S_hathat = means[t] + (t > 0 ? Vector(s_regress[t] * Yc) : Vector::Zero(n_s));
      }
      const double innovation =
          seq ? y - r.C[t].dot(S_hathat)
              : (y - mu_V(t)) - (t > 0 ? y_regress[t].dot(tr.Y.row(k).head(t) - mu_V.head(t).transpose()) : 0.0);

      tr.S.row(k).segment(t * n_s, n_s) = S.transpose();
      tr.W.row(k).segment(t * n_w, n_w) = W.transpose();
      tr.S_hat.row(k).segment(t * n_s, n_s) = S_hat.transpose();
      tr.S_hathat.row(k).segment(t * n_s, n_s) = S_hathat.transpose();
      tr.V(k, t) = v;
      tr.I_hat(k, t) = i_hat;
      tr.X(k, t) = x;
      tr.Z(k, t) = z;
      tr.Y(k, t) = y;
      tr.I(k, t) = innovation;

      if (t + 1 < n) {
        S = r.A[t] * S + r.B[t] * W;
        S_hat = r.A[t] * S_hat + noise.M[t] * i_hat;
        if (seq) S_hathat = r.A[t] * S_hathat + out.F[t] * innovation;
      }
    }
  }
  return tr;
}

inline SimulationTrace simulate(const PoSsRealization& r, const AnyStrategy& strategy,
                                int n_samples, std::uint64_t seed) {
  return simulate(r, strategy, n_samples, seed, run_noise_filter(r));
}

struct OrthogonalityReport {
  double threshold = 0.0;           // 3 / √N
  double noise_innovations = 0.0;   // max |corr(Î_t, Î_s)|, t ≠ s
  double output_innovations = 0.0;  // max |corr(I_t, I_s)|, t ≠ s
  double noise_innovation_vs_past_noise = 0.0;  // max |corr(Î_t, V_j)|, j < t
  double dither_vs_past_output = 0.0;           // max |corr(Z_t, Y_j)|, j < t

  bool noise_innovations_ok() const { return noise_innovations < threshold; }
  bool output_innovations_ok() const { return output_innovations < threshold; }
  bool noise_vs_past_ok() const { return noise_innovation_vs_past_noise < threshold; }
  bool dither_vs_past_ok() const { return dither_vs_past_output < threshold; }
  bool all_pass() const {
    return noise_innovations_ok() && output_innovations_ok() && noise_vs_past_ok() &&
           dither_vs_past_ok();
  }
};

namespace detail {

/// Sample correlation of two columns; 0 when either is (numerically) constant.
inline double sample_correlation(const Matrix& a, int i, const Matrix& b, int j) {
  const auto x = a.col(i).array() - a.col(i).mean();
  const auto y = b.col(j).array() - b.col(j).mean();
  const double sxx = (x * x).sum(), syy = (y * y).sum();
  if (sxx <= 1e-300 || syy <= 1e-300) return 0.0;
  return (x * y).sum() / std::sqrt(sxx * syy);
}

}  // namespace detail

inline OrthogonalityReport check_orthogonality(const SimulationTrace& tr) {
  OrthogonalityReport rep;
  rep.threshold = 3.0 / std::sqrt(static_cast<double>(tr.n_samples));
  for (int t = 0; t < tr.n; ++t) {
    for (int s = 0; s < t; ++s) {
      auto upd = [](double& m, double c) { m = std::max(m, std::abs(c)); };
      upd(rep.noise_innovations, detail::sample_correlation(tr.I_hat, t, tr.I_hat, s));
      upd(rep.output_innovations, detail::sample_correlation(tr.I, t, tr.I, s));
      upd(rep.noise_innovation_vs_past_noise, detail::sample_correlation(tr.I_hat, t, tr.V, s));
      upd(rep.dither_vs_past_output, detail::sample_correlation(tr.Z, t, tr.Y, s));
    }
  }
  return rep;
}

struct Estimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Gaussian plug-in rate ½ Σ_t log(m̂(I_t²) / m̂(Î_t²)) with a delta-method
/// standard error that keeps every cross-time correlation.
inline Estimate empirical_rate(const SimulationTrace& tr) {
  const double N = tr.n_samples;
  Estimate est;
  Vector influence = Vector::Zero(tr.n_samples);
  for (int t = 0; t < tr.n; ++t) {
    const Vector i2 = tr.I.col(t).array().square();
    const Vector h2 = tr.I_hat.col(t).array().square();
    const double mi = i2.mean(), mh = h2.mean();
    est.value += 0.5 * std::log(mi / mh);
    influence.array() += 0.5 * ((i2.array() - mi) / mi - (h2.array() - mh) / mh);
  }
  est.standard_error = std::sqrt(influence.squaredNorm() / (N - 1.0) / N);
  return est;
}

/// Average power (1/n) Σ_t X_t² over samples and steps.
inline Estimate empirical_power(const SimulationTrace& tr) {
  const Vector per_sample = tr.X.array().square().rowwise().mean();
  Estimate est;
  est.value = per_sample.mean();
  const double var = (per_sample.array() - est.value).square().sum() / (tr.n_samples - 1.0);
  est.standard_error = std::sqrt(var / tr.n_samples);
  return est;
}

/// Sample covariance of the columns of `paths`.
inline Matrix empirical_covariance(const Matrix& paths) {
  const Matrix centered = paths.rowwise() - paths.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(paths.rows() - 1);
}

}  // namespace feedcap
