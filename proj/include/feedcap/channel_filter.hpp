#pragma once

// Second generalized Kalman filter: tracks the decoder-side estimate of the
// noise-filter state Ŝ_t from the channel output Y^{t-1}, under the input
// law X_t = Λ_t (Ŝ_t - E[Ŝ_t | Y^{t-1}]) + Z_t.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "feedcap/linalg.hpp"
#include "feedcap/model.hpp"
#include "feedcap/noise_filter.hpp"

namespace feedcap {

struct SequentialStrategy {
  std::vector<RowVector> Lambda;  // n entries, 1 x n_s
  std::vector<double> K_Z;        // n entries, >= 0

  int horizon() const { return static_cast<int>(K_Z.size()); }

  static SequentialStrategy zero(int n, int n_s) {
    return {std::vector<RowVector>(n, RowVector::Zero(n_s)), std::vector<double>(n, 0.0)};
  }

  /// Λ = 0 with constant dither variance.
  static SequentialStrategy no_feedback(int n, int n_s, double k_z) {
    return {std::vector<RowVector>(n, RowVector::Zero(n_s)), std::vector<double>(n, k_z)};
  }

  double lambda_norm() const {
    double acc = 0.0;
    for (const auto& l : Lambda) acc += l.squaredNorm();
    return std::sqrt(acc);
  }
};

inline void check_strategy(const PoSsRealization& r, const SequentialStrategy& s) {
  if (s.horizon() != r.n || static_cast<int>(s.Lambda.size()) != r.n) {
    throw std::invalid_argument("strategy horizon does not match the model");
  }
  for (int t = 0; t < r.n; ++t) {
    if (s.Lambda[t].size() != r.n_s) throw std::invalid_argument("Lambda_t dimension mismatch");
    if (!(s.K_Z[t] >= 0.0) || !std::isfinite(s.K_Z[t]) || !s.Lambda[t].allFinite()) {
      throw std::invalid_argument("strategy entries must be finite with K_Z >= 0");
    }
  }
}

struct OutputFilterTrace {
  std::vector<Matrix> K;      // n entries: cov(Ŝ_t | Y^{t-1}), K_1 = 0
  std::vector<Vector> F;      // n-1 entries
  std::vector<double> K_I;    // n entries: output innovations variances
  std::vector<double> power;  // n entries: E[X_t²]
};

struct OutputRiccatiStep {
  Matrix K_next;
  Vector F;
  double K_I = 0.0;
};

/// K_I_t = (Λ_t + C_t) K_t (Λ_t + C_t)ᵀ + K_Î_t + K_Z_t.
inline double output_innovation_variance(const PoSsRealization& r, int t, const Matrix& K,
                                         double K_Ihat, const RowVector& Lambda, double K_Z) {
  const RowVector g = Lambda + r.C[t];
  return g.dot(K * g.transpose()) + K_Ihat + K_Z;
}

namespace detail {

inline OutputRiccatiStep output_step(const PoSsRealization& r, int t, const Matrix& K,
                                     const Vector& M, double K_Ihat, const RowVector& Lambda,
                                     double K_Z) {
  const Matrix& A = r.A[t];
  const RowVector g = Lambda + r.C[t];
  const double inner = g.dot(K * g.transpose()) + K_Ihat + K_Z;
  if (!(inner > 0.0)) throw NumericalError("output filter: innovations variance not positive");
  const Vector cross = A * K * g.transpose() + M * K_Ihat;
  OutputRiccatiStep out;
  out.K_I = inner;
  out.F = cross / inner;
  // Joseph form: e_{t+1} = (A - F g) e_t + (M - F) Î_t - F Z_t.
  const Matrix closed = A - out.F * g;
  const Vector leak = M - out.F;
  out.K_next = symmetrized(closed * K * closed.transpose() + K_Ihat * leak * leak.transpose() +
                           K_Z * out.F * out.F.transpose());
  return out;
}

}  // namespace detail

/// One step of the output Riccati map, defined for t < n-1.
inline OutputRiccatiStep output_riccati_step(const PoSsRealization& r, int t, const Matrix& K,
                                             const Vector& M, double K_Ihat,
                                             const RowVector& Lambda, double K_Z) {
  if (t < 0 || t + 1 >= r.n) throw std::out_of_range("output_riccati_step: t out of range");
  require_psd_state(K, "K_t");
  return detail::output_step(r, t, K, M, K_Ihat, Lambda, K_Z);
}

inline OutputFilterTrace run_output_filter(const PoSsRealization& r, const NoiseFilterTrace& noise,
                                           const SequentialStrategy& s) {
  check_strategy(r, s);
  if (static_cast<int>(noise.K_Ihat.size()) != r.n) {
    throw std::invalid_argument("noise trace horizon does not match the model");
  }
  OutputFilterTrace tr;
  tr.K.reserve(r.n);
  tr.K.push_back(Matrix::Zero(r.n_s, r.n_s));
  for (int t = 0; t < r.n; ++t) {
    const Matrix& K = tr.K.back();
    tr.power.push_back(s.Lambda[t].dot(K * s.Lambda[t].transpose()) + s.K_Z[t]);
    if (t + 1 == r.n) {
      tr.K_I.push_back(output_innovation_variance(r, t, K, noise.K_Ihat[t], s.Lambda[t], s.K_Z[t]));
      break;
    }
    auto step = detail::output_step(r, t, K, noise.M[t], noise.K_Ihat[t], s.Lambda[t], s.K_Z[t]);
    tr.K_I.push_back(step.K_I);
    tr.F.push_back(std::move(step.F));
    tr.K.push_back(std::move(step.K_next));
  }
  return tr;
}

}  // namespace feedcap
