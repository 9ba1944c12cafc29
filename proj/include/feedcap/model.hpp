#pragma once

// Partially observable state-space (PO-SS) description of the channel noise
//
//   S_{t+1} = A_t S_t + B_t W_t,      t = 1..n-1
//   V_t     = C_t S_t + N_t W_t,      t = 1..n
//   S_1 ~ N(mu_S1, K_S1),  W_t ~ N(0, K_W_t) independent,
//
// with scalar output V_t. All time indices in the C++ API are zero-based:
// index t addresses time step t+1. Files and CSV output use one-based steps.

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "feedcap/linalg.hpp"

namespace feedcap {

struct PoSsRealization {
  int n = 0;
  int n_s = 0;
  int n_w = 0;
  std::vector<Matrix> A;     // n-1 entries, n_s x n_s
  std::vector<Matrix> B;     // n-1 entries, n_s x n_w
  std::vector<RowVector> C;  // n entries, 1 x n_s
  std::vector<RowVector> N;  // n entries, 1 x n_w
  std::vector<Matrix> K_W;   // n entries, n_w x n_w
  Vector mu_S1;
  Matrix K_S1;
  // Set by builders that could not find a stationary initial law.
  bool unstable_initialization = false;

  /// R_t = N_t K_W_t N_tᵀ.
  double feedthrough_variance(int t) const {
    return (N[t] * K_W[t] * N[t].transpose())(0, 0);
  }

  bool is_time_invariant() const {
    auto all_equal = [](const auto& seq) {
      for (std::size_t i = 1; i < seq.size(); ++i) {
        if (seq[i] != seq[0]) return false;
      }
      return true;
    };
    return all_equal(A) && all_equal(B) && all_equal(C) && all_equal(N) && all_equal(K_W);
  }
};

/// Builds a realization whose matrices repeat at every step.
inline PoSsRealization time_invariant_realization(int n, const Matrix& A, const Matrix& B,
                                                  const RowVector& C, const RowVector& N,
                                                  const Matrix& K_W, const Vector& mu_S1,
                                                  const Matrix& K_S1) {
  if (n < 1) throw std::invalid_argument("horizon n must be at least 1");
  PoSsRealization r;
  r.n = n;
  r.n_s = static_cast<int>(A.rows());
  r.n_w = static_cast<int>(K_W.rows());
  r.A.assign(n - 1, A);
  r.B.assign(n - 1, B);
  r.C.assign(n, C);
  r.N.assign(n, N);
  r.K_W.assign(n, K_W);
  r.mu_S1 = mu_S1;
  r.K_S1 = K_S1;
  return r;
}

/// Re-horizons a time-invariant realization.
inline PoSsRealization with_horizon(const PoSsRealization& r, int n) {
  if (!r.is_time_invariant()) {
    throw std::invalid_argument("with_horizon requires a time-invariant realization");
  }
  const Matrix A = r.A.empty() ? Matrix::Zero(r.n_s, r.n_s) : r.A.front();
  const Matrix B = r.B.empty() ? Matrix::Zero(r.n_s, r.n_w) : r.B.front();
  PoSsRealization out =
      time_invariant_realization(n, A, B, r.C.front(), r.N.front(), r.K_W.front(), r.mu_S1, r.K_S1);
  out.unstable_initialization = r.unstable_initialization;
  return out;
}

/// First n steps of a (possibly time-varying) realization.
inline PoSsRealization truncated(const PoSsRealization& r, int n) {
  if (n < 1 || n > r.n) throw std::invalid_argument("truncation horizon out of range");
  PoSsRealization out = r;
  out.n = n;
  out.A.resize(n - 1);
  out.B.resize(n - 1);
  out.C.resize(n);
  out.N.resize(n);
  out.K_W.resize(n);
  return out;
}

struct ChannelConfig {
  double kappa = 0.0;
  int n = 1;
};

inline void check_config(const ChannelConfig& cfg) {
  if (!(cfg.kappa >= 0.0) || !std::isfinite(cfg.kappa)) {
    throw std::invalid_argument("power budget kappa must be finite and >= 0");
  }
  if (cfg.n < 1) throw std::invalid_argument("horizon n must be at least 1");
}

struct Violation {
  std::string what;
  int t = -1;  // one-based time index, -1 when not tied to a step

  std::string describe() const {
    if (t < 0) return what;
    std::ostringstream os;
    os << what << " at t=" << t;
    return os.str();
  }
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }

  bool mentions(const std::string& fragment) const {
    for (const auto& v : violations) {
      if (v.what.find(fragment) != std::string::npos) return true;
    }
    return false;
  }

  std::string summary() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < violations.size(); ++i) {
      if (i) os << "; ";
      os << violations[i].describe();
    }
    return os.str();
  }
};

inline ValidationReport validate_realization(const PoSsRealization& r) {
  ValidationReport rep;
  auto add = [&rep](std::string what, int t = -1) { rep.violations.push_back({std::move(what), t}); };

  if (r.n < 1) add("horizon n must be positive");
  if (r.n_s < 1) add("state dimension n_s must be positive");
  if (r.n_w < 1) add("driver dimension n_w must be positive");
  if (!rep.ok()) return rep;

  const auto steps = static_cast<std::size_t>(r.n);
  if (r.A.size() != steps - 1) add("A must have n-1 entries");
  if (r.B.size() != steps - 1) add("B must have n-1 entries");
  if (r.C.size() != steps) add("C must have n entries");
  if (r.N.size() != steps) add("N must have n entries");
  if (r.K_W.size() != steps) add("K_W must have n entries");
  if (r.mu_S1.size() != r.n_s) add("mu_S1 must have n_s entries");
  if (r.K_S1.rows() != r.n_s || r.K_S1.cols() != r.n_s) add("K_S1 must be n_s x n_s");
  if (!rep.ok()) return rep;

  for (int t = 0; t + 1 < r.n; ++t) {
    if (r.A[t].rows() != r.n_s || r.A[t].cols() != r.n_s) add("A_t dimension mismatch", t + 1);
    if (r.B[t].rows() != r.n_s || r.B[t].cols() != r.n_w) add("B_t dimension mismatch", t + 1);
  }
  bool shapes_ok = rep.ok();
  for (int t = 0; t < r.n; ++t) {
    if (r.C[t].size() != r.n_s) add("C_t dimension mismatch", t + 1), shapes_ok = false;
    if (r.N[t].size() != r.n_w) add("N_t dimension mismatch", t + 1), shapes_ok = false;
    if (r.K_W[t].rows() != r.n_w || r.K_W[t].cols() != r.n_w) {
      add("K_W_t dimension mismatch", t + 1);
      shapes_ok = false;
    }
  }
  if (!shapes_ok) return rep;

  bool finite = r.mu_S1.allFinite() && r.K_S1.allFinite();
  for (const auto& m : r.A) finite = finite && m.allFinite();
  for (const auto& m : r.B) finite = finite && m.allFinite();
  for (const auto& m : r.C) finite = finite && m.allFinite();
  for (const auto& m : r.N) finite = finite && m.allFinite();
  for (const auto& m : r.K_W) finite = finite && m.allFinite();
  if (!finite) {
    add("non-finite entries");
    return rep;
  }

  if (!is_psd(r.K_S1)) add("K_S1 not PSD");
  for (int t = 0; t < r.n; ++t) {
    const bool psd = is_psd(r.K_W[t]);
    if (!psd) add("K_W not PSD", t + 1);
    if (!(r.feedthrough_variance(t) > 0.0)) add("R_t not positive", t + 1);
  }
  return rep;
}

inline void require_valid(const PoSsRealization& r) {
  const auto rep = validate_realization(r);
  if (!rep.ok()) throw std::invalid_argument("invalid realization: " + rep.summary());
}

/// ARMA(1,1) noise V_t = c V_{t-1} + W_t - a W_{t-1} in state-space form
/// S_{t+1} = c S_t + W_t, V_t = (c - a) S_t + W_t. The initial state takes the
/// stationary variance when |c| < 1; otherwise it is deterministic (K_S1 = 0)
/// and `unstable_initialization` is set.
inline PoSsRealization build_arma11(double c, double a, double sigma_w, int n) {
  if (sigma_w < 0.0) throw std::invalid_argument("sigma_w must be >= 0");
  const double q = sigma_w * sigma_w;
  const bool stable = std::abs(c) < 1.0;
  Matrix K_S1(1, 1);
  K_S1(0, 0) = stable ? q / (1.0 - c * c) : 0.0;
  PoSsRealization r = time_invariant_realization(
      n, Matrix::Constant(1, 1, c), Matrix::Constant(1, 1, 1.0), RowVector::Constant(1, c - a),
      RowVector::Constant(1, 1.0), Matrix::Constant(1, 1, q), Vector::Zero(1), K_S1);
  r.unstable_initialization = !stable;
  return r;
}

/// Per-step gains of two independent driver sequences. Each vector holds
/// either a single entry (applied at every step) or one entry per step
/// (n-1 for the state gains, n for the feedthrough gains).
struct DriverSplit {
  std::vector<Matrix> B1, B2;
  std::vector<RowVector> N1, N2;
};

/// Replaces the base driver by two independent copies W = (W¹, W²), each with
/// the base covariance: B_t W_t = B¹_t W¹_t + B²_t W²_t and
/// N_t W_t = N¹_t W¹_t + N²_t W²_t.
inline PoSsRealization build_two_driver(const PoSsRealization& base, const DriverSplit& split) {
  const int n = base.n;
  auto pick = [](const auto& seq, int t, std::size_t expected, const char* name) {
    if (seq.size() == 1) return seq.front();
    if (seq.size() != expected) {
      throw std::invalid_argument(std::string("two-driver split: wrong number of ") + name +
                                  " entries");
    }
    return seq[t];
  };
  PoSsRealization r = base;
  r.n_w = 2 * base.n_w;
  for (int t = 0; t + 1 < n; ++t) {
    const Matrix b1 = pick(split.B1, t, n - 1, "B1");
    const Matrix b2 = pick(split.B2, t, n - 1, "B2");
    if (b1.rows() != base.n_s || b2.rows() != base.n_s || b1.cols() != base.n_w ||
        b2.cols() != base.n_w) {
      throw std::invalid_argument("two-driver split: state gain dimension mismatch");
    }
    r.B[t].resize(base.n_s, r.n_w);
    r.B[t] << b1, b2;
  }
  for (int t = 0; t < n; ++t) {
    const RowVector n1 = pick(split.N1, t, n, "N1");
    const RowVector n2 = pick(split.N2, t, n, "N2");
    if (n1.size() != base.n_w || n2.size() != base.n_w) {
      throw std::invalid_argument("two-driver split: feedthrough gain dimension mismatch");
    }
    r.N[t].resize(r.n_w);
    r.N[t] << n1, n2;
    Matrix kw = Matrix::Zero(r.n_w, r.n_w);
    kw.topLeftCorner(base.n_w, base.n_w) = base.K_W[t];
    kw.bottomRightCorner(base.n_w, base.n_w) = base.K_W[t];
    r.K_W[t] = kw;
  }
  return r;
}

/// The scalar two-driver model S_{t+1} = a S_t + W¹_t, V_t = c S_t + W²_t
/// with unit-variance independent drivers.
inline PoSsRealization build_scalar_two_driver(double a, double c, int n, double K_S1 = 0.0) {
  const PoSsRealization base = time_invariant_realization(
      n, Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, 1.0), RowVector::Constant(1, c),
      RowVector::Constant(1, 1.0), Matrix::Identity(1, 1), Vector::Zero(1),
      Matrix::Constant(1, 1, K_S1));
  DriverSplit split;
  split.B1 = {Matrix::Constant(1, 1, 1.0)};
  split.B2 = {Matrix::Constant(1, 1, 0.0)};
  split.N1 = {RowVector::Constant(1, 0.0)};
  split.N2 = {RowVector::Constant(1, 1.0)};
  return build_two_driver(base, split);
}

/// White noise V_t = sigma_w W_t.
inline PoSsRealization build_white_noise(double sigma_w, int n) {
  return time_invariant_realization(n, Matrix::Zero(1, 1), Matrix::Zero(1, 1), RowVector::Zero(1),
                                    RowVector::Constant(1, sigma_w), Matrix::Identity(1, 1),
                                    Vector::Zero(1), Matrix::Zero(1, 1));
}

/// E[S_t] for t = 0..n-1.
inline std::vector<Vector> state_means(const PoSsRealization& r) {
  std::vector<Vector> m(r.n);
  m[0] = r.mu_S1;
  for (int t = 0; t + 1 < r.n; ++t) m[t + 1] = r.A[t] * m[t];
  return m;
}

/// E[V_t] for t = 0..n-1.
inline Vector noise_mean(const PoSsRealization& r) {
  const auto m = state_means(r);
  Vector out(r.n);
  for (int t = 0; t < r.n; ++t) out(t) = r.C[t].dot(m[t]);
  return out;
}

/// Covariance of V^n by exact propagation of the state second moments.
inline Matrix assemble_noise_covariance(const PoSsRealization& r) {
  require_valid(r);
  const int n = r.n;
  Matrix K_V = Matrix::Zero(n, n);
  Matrix P = symmetrized(r.K_S1);  // cov(S_t)
  for (int t = 0; t < n; ++t) {
    const Vector PC = P * r.C[t].transpose();
    K_V(t, t) = r.C[t].dot(PC) + r.feedthrough_variance(t);
    if (t + 1 == n) break;
    // G = cov(S_s, V_t) for s = t+1, t+2, ...
    Vector G = r.A[t] * PC + r.B[t] * r.K_W[t] * r.N[t].transpose();
    for (int s = t + 1; s < n; ++s) {
      const double c = r.C[s].dot(G);
      K_V(s, t) = c;
      K_V(t, s) = c;
      if (s + 1 < n) G = r.A[s] * G;
    }
    P = symmetrized(r.A[t] * P * r.A[t].transpose() + r.B[t] * r.K_W[t] * r.B[t].transpose());
  }
  return K_V;
}

}  // namespace feedcap
