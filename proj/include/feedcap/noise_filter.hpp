#pragma once

// Generalized Kalman filter of the noise V^n given its own past. The state
// and observation noises are correlated through B_t K_W N_tᵀ, so the gain and
// the Riccati map carry the cross term.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "feedcap/linalg.hpp"
#include "feedcap/model.hpp"

namespace feedcap {

struct NoiseFilterTrace {
  std::vector<Matrix> Sigma;   // n entries: cov(S_t | V^{t-1})
  std::vector<Vector> M;       // n-1 entries: filter gains
  std::vector<double> K_Ihat;  // n entries: innovations variances
};

struct NoiseRiccatiStep {
  Matrix Sigma_next;
  Vector M;
  double K_Ihat = 0.0;
};

inline double noise_innovation_variance(const PoSsRealization& r, int t, const Matrix& Sigma) {
  return r.C[t].dot(Sigma * r.C[t].transpose()) + r.feedthrough_variance(t);
}

inline void require_psd_state(const Matrix& m, const char* what) {
  if (!is_psd(m, kTracePsdTolerance)) {
    throw std::invalid_argument(std::string(what) + " is not symmetric PSD");
  }
}

/// One step of the noise Riccati map, defined for t < n-1.
inline NoiseRiccatiStep noise_riccati_step(const PoSsRealization& r, int t, const Matrix& Sigma) {
  if (t < 0 || t + 1 >= r.n) throw std::out_of_range("noise_riccati_step: t out of range");
  require_psd_state(Sigma, "Sigma_t");
  const Matrix& A = r.A[t];
  const double inner = noise_innovation_variance(r, t, Sigma);
  if (!(inner > 0.0)) throw NumericalError("noise filter: innovations variance not positive");
  const Vector cross = A * Sigma * r.C[t].transpose() + r.B[t] * r.K_W[t] * r.N[t].transpose();
  NoiseRiccatiStep out;
  out.K_Ihat = inner;
  out.M = cross / inner;
  // Joseph form of the same update: a sum of PSD terms, so rounding cannot
  // push Σ_{t+1} off the cone the way the subtractive form can.
  const Matrix closed = A - out.M * r.C[t];
  const Matrix drive = r.B[t] - out.M * r.N[t];
  out.Sigma_next = symmetrized(closed * Sigma * closed.transpose() +
                               drive * r.K_W[t] * drive.transpose());
  return out;
}

inline NoiseFilterTrace run_noise_filter(const PoSsRealization& r) {
  require_valid(r);
  NoiseFilterTrace tr;
  tr.Sigma.reserve(r.n);
  tr.Sigma.push_back(symmetrized(r.K_S1));
  for (int t = 0; t + 1 < r.n; ++t) {
    auto step = noise_riccati_step(r, t, tr.Sigma.back());
    tr.K_Ihat.push_back(step.K_Ihat);
    tr.M.push_back(std::move(step.M));
    tr.Sigma.push_back(std::move(step.Sigma_next));
  }
  tr.K_Ihat.push_back(noise_innovation_variance(r, r.n - 1, tr.Sigma.back()));
  if (!(tr.K_Ihat.back() > 0.0)) {
    throw NumericalError("noise filter: innovations variance not positive");
  }
  return tr;
}

struct EntropyReport {
  double total = 0.0;             // nats
  std::vector<double> per_step;   // H(Î_t), nats
};

/// H(V^n) = Σ_t ½ log(2πe K_Î_t), in nats.
inline EntropyReport noise_entropy(const NoiseFilterTrace& tr) {
  EntropyReport rep;
  rep.per_step.reserve(tr.K_Ihat.size());
  for (double k : tr.K_Ihat) {
    if (!(k > 0.0)) throw std::invalid_argument("noise_entropy: non-positive innovations variance");
    const double h = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * k);
    rep.per_step.push_back(h);
    rep.total += h;
  }
  return rep;
}

inline double nats_to_bits(double nats) { return nats / std::numbers::ln2; }

}  // namespace feedcap
