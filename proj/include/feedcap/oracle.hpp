#pragma once

// Matrix-form (Cover–Pombra) characterization of the n-block feedback
// capacity, used as an independent reference for the sequential engine:
//
//   X^n = B V^n + Z̄^n,  B strictly lower triangular,  Z̄^n ~ N(0, K_Z̄) ⊥ V^n
//   value = ½ log det((B+I) K_V (B+I)ᵀ + K_Z̄) - ½ log det K_V
//   power = (1/n) trace(B K_V Bᵀ + K_Z̄)

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/QR>

#include "feedcap/capacity.hpp"
#include "feedcap/channel_filter.hpp"
#include "feedcap/linalg.hpp"
#include "feedcap/model.hpp"
#include "feedcap/noise_filter.hpp"
#include "feedcap/optimizer.hpp"

namespace feedcap {

struct CoverPombraStrategy {
  Matrix B;        // n x n, strictly lower triangular
  Matrix K_Zbar;   // n x n, PSD

  int horizon() const { return static_cast<int>(B.rows()); }

  static CoverPombraStrategy zero(int n) { return {Matrix::Zero(n, n), Matrix::Zero(n, n)}; }
};

/// X_t = Γ¹_t V^{t-1} + Γ²_t Y^{t-1} + Z_t with independent Z_t ~ N(0, K_Z_t).
/// Gamma1[t] and Gamma2[t] have t entries (zero-based t), so both are empty
/// at the first step.
struct InnovationsFormStrategy {
  std::vector<RowVector> Gamma1;
  std::vector<RowVector> Gamma2;
  std::vector<double> K_Z;

  int horizon() const { return static_cast<int>(K_Z.size()); }

  /// Strictly lower-triangular n x n embeddings of Γ¹ and Γ².
  Matrix gamma1_matrix() const { return embed(Gamma1); }
  Matrix gamma2_matrix() const { return embed(Gamma2); }

 private:
  Matrix embed(const std::vector<RowVector>& rows) const {
    const int n = horizon();
    Matrix m = Matrix::Zero(n, n);
    for (int t = 0; t < n; ++t) m.row(t).head(t) = rows[t];
    return m;
  }
};

inline void check_cover_pombra(const CoverPombraStrategy& s, int n) {
  if (s.B.rows() != n || s.B.cols() != n || s.K_Zbar.rows() != n || s.K_Zbar.cols() != n) {
    throw std::invalid_argument("Cover-Pombra strategy dimension mismatch");
  }
  for (int t = 0; t < n; ++t) {
    for (int j = t; j < n; ++j) {
      if (s.B(t, j) != 0.0) throw std::invalid_argument("B must be strictly lower triangular");
    }
  }
  if (!is_psd(s.K_Zbar)) throw std::invalid_argument("K_Zbar must be symmetric PSD");
}

inline void check_innovations_form(const InnovationsFormStrategy& s) {
  const int n = s.horizon();
  if (static_cast<int>(s.Gamma1.size()) != n || static_cast<int>(s.Gamma2.size()) != n) {
    throw std::invalid_argument("innovations-form strategy horizon mismatch");
  }
  for (int t = 0; t < n; ++t) {
    if (s.Gamma1[t].size() != t || s.Gamma2[t].size() != t) {
      throw std::invalid_argument("Gamma_t must have t-1 entries at step t");
    }
    if (!(s.K_Z[t] >= 0.0)) throw std::invalid_argument("K_Z must be >= 0");
  }
}

struct CoverPombraValue {
  double value = 0.0;  // nats
  double avg_power = 0.0;
};

inline CoverPombraValue cp_objective(const Matrix& K_V, const CoverPombraStrategy& s) {
  const int n = static_cast<int>(K_V.rows());
  check_cover_pombra(s, n);
  Eigen::LLT<Matrix> llt(symmetrized(K_V));
  if (llt.info() != Eigen::Success) throw std::invalid_argument("K_V must be positive definite");
  const Matrix BI = s.B + Matrix::Identity(n, n);
  const Matrix K_Y = BI * K_V * BI.transpose() + s.K_Zbar;
  CoverPombraValue out;
  out.value = 0.5 * (log_det_spd(K_Y) - log_det_spd(K_V));
  out.avg_power = (s.B * K_V * s.B.transpose() + s.K_Zbar).trace() / n;
  return out;
}

/// Equivalent strictly-causal linear form of an innovations-form strategy:
/// X = B̃ V + Z̃ with B̃ = (I - Γ²)⁻¹(Γ¹ + Γ²) and cov Z̃ = (I - Γ²)⁻¹ diag(K_Z) (I - Γ²)⁻ᵀ.
inline CoverPombraStrategy to_cover_pombra(const InnovationsFormStrategy& s) {
  check_innovations_form(s);
  const int n = s.horizon();
  const Matrix G1 = s.gamma1_matrix();
  const Matrix G2 = s.gamma2_matrix();
  const Matrix T = (Matrix::Identity(n, n) - G2)
                       .triangularView<Eigen::UnitLower>()
                       .solve(Matrix::Identity(n, n));
  CoverPombraStrategy out;
  out.B = T * (G1 + G2);
  out.B.triangularView<Eigen::Upper>().setZero();
  const Vector kz = Eigen::Map<const Vector>(s.K_Z.data(), n);
  out.K_Zbar = symmetrized(T * kz.asDiagonal() * T.transpose());
  return out;
}

/// Covariance of (X^n, Y^n), ordered [X_1..X_n, Y_1..Y_n].
inline Matrix joint_covariance(const Matrix& K_V, const CoverPombraStrategy& s) {
  const int n = static_cast<int>(K_V.rows());
  check_cover_pombra(s, n);
  const Matrix K_X = s.B * K_V * s.B.transpose() + s.K_Zbar;
  const Matrix K_XV = s.B * K_V;
  Matrix J(2 * n, 2 * n);
  J.topLeftCorner(n, n) = K_X;
  J.topRightCorner(n, n) = K_X + K_XV;
  J.bottomLeftCorner(n, n) = (K_X + K_XV).transpose();
  J.bottomRightCorner(n, n) = K_X + K_XV + K_XV.transpose() + K_V;
  return symmetrized(J);
}

inline Matrix joint_covariance(const Matrix& K_V, const InnovationsFormStrategy& s) {
  if (s.horizon() != K_V.rows()) throw std::invalid_argument("strategy horizon mismatch");
  return joint_covariance(K_V, to_cover_pombra(s));
}

struct InnovationsConversion {
  InnovationsFormStrategy strategy;
  bool regularized = false;  // a conditioning block was rank deficient
  std::vector<int> regularized_steps;
};

/// Z_t = Z̄_t - E[Z̄_t | V^{t-1}, Y^{t-1}]; the conditional mean is absorbed
/// into Γ¹_t, Γ²_t and K_Z_t is the residual variance.
inline InnovationsConversion cp_to_innovations_form(const Matrix& K_V,
                                                    const CoverPombraStrategy& s) {
  const int n = static_cast<int>(K_V.rows());
  check_cover_pombra(s, n);
  Eigen::LLT<Matrix> llt(symmetrized(K_V));
  if (llt.info() != Eigen::Success) throw std::invalid_argument("K_V must be positive definite");

  const Matrix BI = s.B + Matrix::Identity(n, n);
  const Matrix K_VY = K_V * BI.transpose();
  const Matrix K_YY = BI * K_V * BI.transpose() + s.K_Zbar;
  const Matrix& K_ZY = s.K_Zbar;  // cov(Z̄, Y); cov(Z̄, V) = 0

  InnovationsConversion out;
  auto& st = out.strategy;
  st.Gamma1.resize(n);
  st.Gamma2.resize(n);
  st.K_Z.resize(n);
  st.Gamma1[0] = RowVector(0);
  st.Gamma2[0] = RowVector(0);
  st.K_Z[0] = std::max(0.0, s.K_Zbar(0, 0));

  for (int t = 1; t < n; ++t) {
    // Conditioning vector c = (V^{t-1}, Y^{t-1}).
    Matrix S_cc(2 * t, 2 * t);
    S_cc.topLeftCorner(t, t) = K_V.topLeftCorner(t, t);
    S_cc.topRightCorner(t, t) = K_VY.topLeftCorner(t, t);
    S_cc.bottomLeftCorner(t, t) = K_VY.topLeftCorner(t, t).transpose();
    S_cc.bottomRightCorner(t, t) = K_YY.topLeftCorner(t, t);
    S_cc = symmetrized(S_cc);
    RowVector S_zc(2 * t);
    S_zc.head(t).setZero();
    S_zc.tail(t) = K_ZY.row(t).head(t);

    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(S_cc);
    cod.setThreshold(1e-12);
    if (cod.rank() < 2 * t) {
      out.regularized = true;
      out.regularized_steps.push_back(t + 1);
    }
    const RowVector beta = cod.solve(S_zc.transpose()).transpose();
    st.Gamma1[t] = s.B.row(t).head(t) + beta.head(t);
    st.Gamma2[t] = beta.tail(t);
    st.K_Z[t] = std::max(0.0, s.K_Zbar(t, t) - beta.dot(S_zc));
  }
  return out;
}

/// Exact (B, K_Z̄) induced by a sequential strategy. Every filter quantity is
/// a linear map of the centered noise V^n and the dither Z^n; X_t's V-part
/// gives row t of B and its Z-part gives row t of a unit lower-triangular G
/// with K_Z̄ = G diag(K_Z) Gᵀ.
inline CoverPombraStrategy unroll_sequential(const PoSsRealization& r, const SequentialStrategy& s,
                                             const NoiseFilterTrace& noise) {
  const int n = r.n, n_s = r.n_s;
  const auto out = run_output_filter(r, noise, s);
  Matrix Hs = Matrix::Zero(n_s, n);   // Ŝ_t - E Ŝ_t over V
  Matrix Hv = Matrix::Zero(n_s, n);   // Ŝ̂_t - E Ŝ̂_t over V
  Matrix Hz = Matrix::Zero(n_s, n);   // Ŝ̂_t over Z
  Matrix B = Matrix::Zero(n, n);
  Matrix G = Matrix::Zero(n, n);
  for (int t = 0; t < n; ++t) {
    const RowVector& L = s.Lambda[t];
    RowVector xV = L * (Hs - Hv);
    RowVector xZ = -L * Hz;
    xZ(t) += 1.0;
    B.row(t) = xV;
    G.row(t) = xZ;
    if (t + 1 == n) break;
    RowVector iV = -r.C[t] * Hs;  // Î_t = V_t - C_t Ŝ_t
    iV(t) += 1.0;
    RowVector yV = xV;  // Y_t = X_t + V_t
    yV(t) += 1.0;
    const RowVector IV = yV - r.C[t] * Hv;  // I_t = Y_t - C_t Ŝ̂_t
    const RowVector IZ = xZ - r.C[t] * Hz;
    Hs = r.A[t] * Hs + noise.M[t] * iV;
    Hv = r.A[t] * Hv + out.F[t] * IV;
    Hz = r.A[t] * Hz + out.F[t] * IZ;
  }
  // Causality is structural; clear rounding residue above the diagonal.
  B.triangularView<Eigen::Upper>().setZero();
  G.triangularView<Eigen::StrictlyUpper>().setZero();
  const Vector kz = Eigen::Map<const Vector>(s.K_Z.data(), n);
  return {B, symmetrized(G * kz.asDiagonal() * G.transpose())};
}

struct CoverPombraOptimum {
  CoverPombraStrategy strategy;
  double value = 0.0;
  double avg_power = 0.0;
  OptimizerDiagnostics diag;
};

inline constexpr int kCoverPombraMaxHorizon = 8;

namespace detail {

// θ = [strictly lower entries of B (row-major), lower entries of L (row-major)]
// with K_Z̄ = L Lᵀ.
inline CoverPombraStrategy unpack_cover_pombra(const Vector& x, int n) {
  Matrix B = Matrix::Zero(n, n), L = Matrix::Zero(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) B(i, j) = x(k++);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) L(i, j) = x(k++);
  return {B, L * L.transpose()};
}

inline int cover_pombra_dimension(int n) { return n * (n - 1) / 2 + n * (n + 1) / 2; }

}  // namespace detail

/// Multi-start maximization of the matrix-form objective under the trace budget.
inline CoverPombraOptimum cp_optimize(const Matrix& K_V, const ChannelConfig& cfg,
                                      const OptimizerOptions& opts = {},
                                      int max_horizon = kCoverPombraMaxHorizon) {
  check_config(cfg);
  const int n = static_cast<int>(K_V.rows());
  if (n != cfg.n) throw std::invalid_argument("K_V size does not match the horizon");
  if (n > max_horizon) {
    throw std::invalid_argument("cp_optimize: horizon exceeds the guard of " +
                                std::to_string(max_horizon));
  }
  const Matrix KV = symmetrized(K_V);
  Eigen::LLT<Matrix> llt_v(KV);
  if (llt_v.info() != Eigen::Success) throw std::invalid_argument("K_V must be positive definite");
  const double log_det_v = log_det_spd(KV);
  const double kappa = cfg.kappa;

  CoverPombraOptimum res;
  if (kappa == 0.0 || n == 1) {
    res.strategy = CoverPombraStrategy::zero(n);
    res.strategy.K_Zbar = kappa * Matrix::Identity(n, n);
    const auto v = cp_objective(KV, res.strategy);
    res.value = v.value;
    res.avg_power = v.avg_power;
    res.diag.converged = true;
    res.diag.message = kappa == 0.0 ? "zero budget" : "single step";
    return res;
  }

  PowerConstrainedProblem prob;
  prob.dimension = detail::cover_pombra_dimension(n);
  prob.kappa = kappa;
  const int b_count = n * (n - 1) / 2;
  // tr(B K_V Bᵀ + L Lᵀ) is homogeneous of degree two in θ, so one scalar
  // puts any nonzero raw point on the budget.
  prob.evaluate = [&, b_count](const Vector& raw, Vector* canonical) {
    Vector x = raw;
    const auto s0 = detail::unpack_cover_pombra(raw, n);
    const double q = (s0.B * KV * s0.B.transpose() + s0.K_Zbar).trace();
    if (q > 0.0) {
      x *= std::sqrt(n * kappa / q);
    } else {
      x.setZero();
      for (int i = 0; i < n; ++i) x(b_count + i * (i + 1) / 2 + i) = std::sqrt(kappa);
    }
    if (canonical) *canonical = x;
    const auto s = detail::unpack_cover_pombra(x, n);
    const Matrix BI = s.B + Matrix::Identity(n, n);
    const Matrix K_Y = BI * KV * BI.transpose() + s.K_Zbar;
    Eigen::LLT<Matrix> llt(K_Y);
    RateAndPower v;
    v.power = (s.B * KV * s.B.transpose() + s.K_Zbar).trace() / n;
    if (llt.info() != Eigen::Success) {
      v.rate = -std::numeric_limits<double>::infinity();
      return v;
    }
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += std::log(llt.matrixLLT()(i, i));
    v.rate = acc - 0.5 * log_det_v;
    return v;
  };
  prob.initial_point = [n, b_count, kappa](int k, std::mt19937_64& rng) {
    Vector x = Vector::Zero(detail::cover_pombra_dimension(n));
    int idx = b_count;
    if (k == 0) {
      for (int i = 0; i < n; ++i) {
        x(idx + i * (i + 1) / 2 + i) = std::sqrt(kappa);
      }
      return x;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < b_count; ++i) x(i) = 0.5 * normal(rng);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j <= i; ++j) {
        const double scale = std::sqrt(kappa) * (i == j ? 1.0 : 0.3);
        x(idx + i * (i + 1) / 2 + j) = scale * normal(rng);
      }
    }
    return x;
  };
  prob.tie_break_norm = [b_count](const Vector& x) { return x.head(b_count).norm(); };

  const auto outcome = maximize_under_power(prob, opts);
  res.strategy = detail::unpack_cover_pombra(outcome.x, n);
  res.strategy.K_Zbar = symmetrized(res.strategy.K_Zbar);
  const auto v = cp_objective(KV, res.strategy);
  res.value = v.value;
  res.avg_power = v.avg_power;
  res.diag = outcome.diag;
  return res;
}

}  // namespace feedcap
