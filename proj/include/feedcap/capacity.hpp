#pragma once

// n-block feedback capacity through the two Riccati recursions:
//
//   C_n(κ) = sup ½ Σ_t log(K_I_t / K_Î_t)
//            over (Λ_t, K_Z_t) with (1/n) Σ_t (Λ_t K_t Λ_tᵀ + K_Z_t) <= κ.

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "feedcap/channel_filter.hpp"
#include "feedcap/linalg.hpp"
#include "feedcap/model.hpp"
#include "feedcap/noise_filter.hpp"
#include "feedcap/optimizer.hpp"

namespace feedcap {

struct CapacityResult {
  double value = 0.0;  // nats
  std::vector<double> rate_per_step;
  double avg_power = 0.0;
  SequentialStrategy strategy;
  OptimizerDiagnostics optimizer_diag;
};

namespace detail {

inline CapacityResult rate_from_variances(const std::vector<double>& K_I,
                                          const std::vector<double>& K_Ihat,
                                          const std::vector<double>& power) {
  CapacityResult res;
  for (std::size_t t = 0; t < K_I.size(); ++t) {
    const double term = 0.5 * std::log(K_I[t] / K_Ihat[t]);
    res.rate_per_step.push_back(term);
    res.value += term;
    res.avg_power += power[t];
  }
  res.avg_power /= static_cast<double>(K_I.size());
  return res;
}

/// Canonical parameter θ = [Λ_1, ..., Λ_n, u_1, ..., u_n] with K_Z_t = u_t².
inline SequentialStrategy unpack_sequential(const Vector& x, int n, int n_s) {
  SequentialStrategy s;
  s.Lambda.reserve(n);
  s.K_Z.reserve(n);
  for (int t = 0; t < n; ++t) s.Lambda.push_back(x.segment(t * n_s, n_s).transpose());
  for (int t = 0; t < n; ++t) {
    const double u = x(n * n_s + t);
    s.K_Z.push_back(u * u);
  }
  return s;
}

// Raw optimizer parameter: [v_1..v_n, a_1..a_n, w_1..w_n]. Step t receives the
// share n·κ·w_t² / Σ w² of the budget, split between feedback and dither in
// the proportion of v_t K_t v_tᵀ to a_t²: (Λ_t, u_t) = c_t (v_t, a_t) with c_t
// chosen so that Λ_t K_t Λ_tᵀ + u_t² equals the share. Since K_t depends
// only on earlier steps, the walk is sequential and lands exactly on the budget.
//
// `base(t)` is the part of K_I_t that does not depend on the input, `ref(t)`
// the denominator of the rate term and `advance(t, K, g, k_i, k_z)` the
// error-covariance update.
template <class Base, class Ref, class Advance>
RateAndPower budget_walk(const PoSsRealization& r, double kappa, const Vector& raw,
                         Vector* canonical, Base base, Ref ref, Advance advance) {
  const int n = r.n, n_s = r.n_s;
  const Eigen::Index a_off = static_cast<Eigen::Index>(n) * n_s, w_off = a_off + n;
  const double w_total = raw.segment(w_off, n).squaredNorm();
  if (canonical) canonical->resize(a_off + n);
  Matrix K = Matrix::Zero(n_s, n_s);
  RateAndPower out;
  for (int t = 0; t < n; ++t) {
    const double w = raw(w_off + t);
    const double share = n * kappa * (w_total > 0.0 ? w * w / w_total : 1.0 / n);
    RowVector lambda = raw.segment(t * n_s, n_s).transpose();
    double u = raw(a_off + t);
    const double q = lambda.dot(K * lambda.transpose()) + u * u;
    if (t > 0 && q > 0.0) {
      const double c = std::sqrt(share / q);
      lambda *= c;
      u *= c;
    } else {
      // K_1 = 0: the first feedback gain carries no power and has no effect.
      lambda.setZero();
      u = std::sqrt(share);
    }
    const double k_z = u * u;
    const RowVector g = lambda + r.C[t];
    const double k_i = g.dot(K * g.transpose()) + base(t) + k_z;
    out.power += lambda.dot(K * lambda.transpose()) + k_z;
    out.rate += 0.5 * std::log(k_i / ref(t));
    if (canonical) {
      canonical->segment(t * n_s, n_s) = lambda.transpose();
      (*canonical)(a_off + t) = u;
    }
    if (t + 1 < n) K = advance(t, K, g, k_i, k_z);
  }
  out.power /= n;
  return out;
}

/// Restart 0 is the no-feedback baseline (equal shares, all dither). The
/// others draw Gaussian shares and a feedback direction whose weight against
/// the dither spans several orders of magnitude.
inline Vector budget_walk_start(int k, std::mt19937_64& rng, int n, int n_s) {
  const Eigen::Index a_off = static_cast<Eigen::Index>(n) * n_s;
  Vector x = Vector::Zero(a_off + 2 * n);
  x.tail(2 * n).setOnes();
  if (k == 0) return x;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> log_weight(-2.0, 2.0);
  for (int t = 0; t < n; ++t) {
    const double weight = std::pow(10.0, log_weight(rng));
    for (int i = 0; i < n_s; ++i) x(t * n_s + i) = weight * normal(rng);
    x(a_off + t) = normal(rng);
    x(a_off + n + t) = normal(rng);
  }
  return x;
}

inline void check_horizon(const PoSsRealization& r, const ChannelConfig& cfg) {
  check_config(cfg);
  if (cfg.n != r.n) throw std::invalid_argument("channel horizon does not match the model");
}

}  // namespace detail

/// Runs both filters for a given strategy. The power budget is not enforced.
inline CapacityResult evaluate_rate(const PoSsRealization& r, const SequentialStrategy& s) {
  const auto noise = run_noise_filter(r);
  const auto out = run_output_filter(r, noise, s);
  CapacityResult res = detail::rate_from_variances(out.K_I, noise.K_Ihat, out.power);
  res.strategy = s;
  return res;
}

/// Maximizes the sequential objective under the average-power budget.
inline CapacityResult optimize_strategy(const PoSsRealization& r, const ChannelConfig& cfg,
                                        const OptimizerOptions& opts = {}) {
  detail::check_horizon(r, cfg);
  const auto noise = run_noise_filter(r);
  const int n = r.n, n_s = r.n_s;
  const double kappa = cfg.kappa;

  if (kappa == 0.0) {
    CapacityResult res = evaluate_rate(r, SequentialStrategy::zero(n, n_s));
    res.optimizer_diag.converged = true;
    res.optimizer_diag.message = "zero budget";
    return res;
  }
  if (n == 1) {
    // K_1 = 0, so Λ_1 has no effect and the whole budget goes to the dither.
    CapacityResult res = evaluate_rate(r, SequentialStrategy::no_feedback(1, n_s, kappa));
    res.optimizer_diag.converged = true;
    res.optimizer_diag.message = "single step";
    return res;
  }

  PowerConstrainedProblem prob;
  prob.dimension = n * n_s + 2 * n;
  prob.kappa = kappa;
  prob.evaluate = [&](const Vector& raw, Vector* canonical) {
    auto innovation = [&](int t) { return noise.K_Ihat[t]; };
    auto advance = [&](int t, const Matrix& K, const RowVector& g, double, double k_z) {
      const RowVector lambda = g - r.C[t];
      return detail::output_step(r, t, K, noise.M[t], noise.K_Ihat[t], lambda, k_z).K_next;
    };
    return detail::budget_walk(r, kappa, raw, canonical, innovation, innovation, advance);
  };
  prob.initial_point = [n, n_s](int k, std::mt19937_64& rng) {
    return detail::budget_walk_start(k, rng, n, n_s);
  };
  prob.tie_break_norm = [n, n_s](const Vector& x) { return x.head(n * n_s).norm(); };

  const auto outcome = maximize_under_power(prob, opts);
  CapacityResult res = evaluate_rate(r, detail::unpack_sequential(outcome.x, n, n_s));
  res.optimizer_diag = outcome.diag;
  return res;
}

struct SteadyStateResult {
  Matrix Sigma_star;
  Matrix K_star;
  bool converged = false;
  bool diverged = false;
  int iterations = 0;
};

/// Iterates both Riccati maps of a time-invariant model and strategy until
/// successive iterates differ by less than `tol` (max-abs) or `max_iterations`.
inline SteadyStateResult steady_state_riccati(const PoSsRealization& r,
                                              const SequentialStrategy& s, double tol = 1e-12,
                                              int max_iterations = 100000) {
  require_valid(r);
  if (r.n < 2) throw std::invalid_argument("steady_state_riccati needs a horizon of at least 2");
  if (!r.is_time_invariant()) throw std::invalid_argument("steady state needs a time-invariant model");
  if (s.horizon() < 1 || s.Lambda.size() != s.K_Z.size()) {
    throw std::invalid_argument("steady state needs a non-empty strategy");
  }
  for (std::size_t t = 1; t < s.K_Z.size(); ++t) {
    if (s.Lambda[t] != s.Lambda[0] || s.K_Z[t] != s.K_Z[0]) {
      throw std::invalid_argument("steady state needs a time-invariant strategy");
    }
  }
  if (s.Lambda[0].size() != r.n_s || !(s.K_Z[0] >= 0.0)) {
    throw std::invalid_argument("strategy does not match the model");
  }

  // A one-step model lets the step functions run at t = 0 indefinitely.
  const PoSsRealization one = with_horizon(r, 2);
  SteadyStateResult res;
  Matrix Sigma = symmetrized(r.K_S1);
  Matrix K = Matrix::Zero(r.n_s, r.n_s);
  for (int it = 1; it <= max_iterations; ++it) {
    res.iterations = it;
    const auto ns = noise_riccati_step(one, 0, Sigma);
    const auto os = detail::output_step(one, 0, K, ns.M, ns.K_Ihat, s.Lambda[0], s.K_Z[0]);
    const double delta = std::max(max_abs_diff(ns.Sigma_next, Sigma), max_abs_diff(os.K_next, K));
    Sigma = ns.Sigma_next;
    K = os.K_next;
    if (!Sigma.allFinite() || !K.allFinite() || Sigma.cwiseAbs().maxCoeff() > 1e150 ||
        K.cwiseAbs().maxCoeff() > 1e150) {
      res.diverged = true;
      break;
    }
    if (delta < tol) {
      res.converged = true;
      break;
    }
  }
  res.Sigma_star = Sigma;
  res.K_star = K;
  return res;
}

struct AsymptoticRow {
  int n = 0;
  double capacity = 0.0;  // C_n, nats
  double per_step = 0.0;  // C_n / n
  double difference = std::numeric_limits<double>::quiet_NaN();  // vs previous row
  double avg_power = 0.0;
  bool converged = false;
};

/// Optimizes each horizon of `n_grid` and reports C_n / n with successive
/// differences. No convergence claim is made.
inline std::vector<AsymptoticRow> asymptotic_rate_estimate(const PoSsRealization& r, double kappa,
                                                           const std::vector<int>& n_grid,
                                                           const OptimizerOptions& opts = {}) {
  if (!r.is_time_invariant()) throw std::invalid_argument("asymptotic estimate needs a time-invariant model");
  std::vector<AsymptoticRow> rows;
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (i > 0 && n_grid[i] <= n_grid[i - 1]) {
      throw std::invalid_argument("horizon grid must be strictly increasing");
    }
    const auto model = with_horizon(r, n_grid[i]);
    const auto res = optimize_strategy(model, {kappa, n_grid[i]}, opts);
    AsymptoticRow row;
    row.n = n_grid[i];
    row.capacity = res.value;
    row.per_step = res.value / n_grid[i];
    row.avg_power = res.avg_power;
    row.converged = res.optimizer_diag.converged;
    if (!rows.empty()) row.difference = row.per_step - rows.back().per_step;
    rows.push_back(row);
  }
  return rows;
}

// Perfect state knowledge at the encoder: X_t = Λ_t (S_t - E[S_t | Y^{t-1}]) + Z_t
// with the initial state S_1 known to both ends. K_t = cov(S_t | Y^{t-1}, S_1)
// follows the Riccati map obtained by replacing Ŝ_t with S_t.

struct PerfectStateTrace {
  std::vector<Matrix> K;
  std::vector<double> K_I;
  std::vector<double> power;
  std::vector<double> K_Ihat;  // noise innovations given S_1
};

namespace detail {

inline PoSsRealization with_known_initial_state(const PoSsRealization& r) {
  PoSsRealization out = r;
  out.K_S1 = Matrix::Zero(r.n_s, r.n_s);
  return out;
}

/// e_{t+1} = (A - F g) e_t + (B - F N) W_t - F Z_t, in Joseph form.
inline Matrix perfect_state_step(const PoSsRealization& r, int t, const Matrix& K,
                                 const RowVector& g, double k_i, double k_z) {
  const Vector F = (r.A[t] * K * g.transpose() + r.B[t] * r.K_W[t] * r.N[t].transpose()) / k_i;
  const Matrix closed = r.A[t] - F * g;
  const Matrix drive = r.B[t] - F * r.N[t];
  return symmetrized(closed * K * closed.transpose() + drive * r.K_W[t] * drive.transpose() +
                     k_z * F * F.transpose());
}

}  // namespace detail

inline PerfectStateTrace run_perfect_state_filter(const PoSsRealization& r,
                                                  const SequentialStrategy& s) {
  check_strategy(r, s);
  const auto noise = run_noise_filter(detail::with_known_initial_state(r));
  PerfectStateTrace tr;
  tr.K_Ihat = noise.K_Ihat;
  Matrix K = Matrix::Zero(r.n_s, r.n_s);
  for (int t = 0; t < r.n; ++t) {
    tr.K.push_back(K);
    const RowVector g = s.Lambda[t] + r.C[t];
    const double k_i = g.dot(K * g.transpose()) + r.feedthrough_variance(t) + s.K_Z[t];
    tr.K_I.push_back(k_i);
    tr.power.push_back(s.Lambda[t].dot(K * s.Lambda[t].transpose()) + s.K_Z[t]);
    if (t + 1 < r.n) {
      K = detail::perfect_state_step(r, t, K, g, k_i, s.K_Z[t]);
    }
  }
  return tr;
}

inline CapacityResult perfect_state_evaluate(const PoSsRealization& r, const SequentialStrategy& s) {
  const auto tr = run_perfect_state_filter(r, s);
  CapacityResult res = detail::rate_from_variances(tr.K_I, tr.K_Ihat, tr.power);
  res.strategy = s;
  return res;
}

/// Optimized rate of the perfect-state input law, for comparison with
/// optimize_strategy on the same model.
inline CapacityResult perfect_state_rate(const PoSsRealization& r, const ChannelConfig& cfg,
                                         const OptimizerOptions& opts = {}) {
  detail::check_horizon(r, cfg);
  require_valid(r);
  const int n = r.n, n_s = r.n_s;
  const double kappa = cfg.kappa;
  if (kappa == 0.0) {
    CapacityResult res = perfect_state_evaluate(r, SequentialStrategy::zero(n, n_s));
    res.optimizer_diag.converged = true;
    res.optimizer_diag.message = "zero budget";
    return res;
  }
  const auto K_Ihat = run_noise_filter(detail::with_known_initial_state(r)).K_Ihat;

  PowerConstrainedProblem prob;
  prob.dimension = n * n_s + 2 * n;
  prob.kappa = kappa;
  prob.evaluate = [&](const Vector& raw, Vector* canonical) {
    auto base = [&](int t) { return r.feedthrough_variance(t); };
    auto ref = [&](int t) { return K_Ihat[t]; };
    auto advance = [&](int t, const Matrix& K, const RowVector& g, double k_i, double k_z) {
      return detail::perfect_state_step(r, t, K, g, k_i, k_z);
    };
    return detail::budget_walk(r, kappa, raw, canonical, base, ref, advance);
  };
  prob.initial_point = [n, n_s](int k, std::mt19937_64& rng) {
    return detail::budget_walk_start(k, rng, n, n_s);
  };
  prob.tie_break_norm = [n, n_s](const Vector& x) { return x.head(n * n_s).norm(); };

  const auto outcome = maximize_under_power(prob, opts);
  CapacityResult res = perfect_state_evaluate(r, detail::unpack_sequential(outcome.x, n, n_s));
  res.optimizer_diag = outcome.diag;
  return res;
}

}  // namespace feedcap
