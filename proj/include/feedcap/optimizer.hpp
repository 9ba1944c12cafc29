#pragma once

// Multi-start maximization of a smooth rate under an average-power budget.
//
// Each problem maps an unconstrained raw parameter onto the budget surface
// (average power exactly kappa) and reports the rate there. The optimizer runs
// BFGS with central-difference gradients on the raw parameter, so every
// iterate is feasible and no multiplier search is needed. Spending the full
// budget is never worse than spending part of it, since unused power can
// always be moved into the dither.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "feedcap/linalg.hpp"

namespace feedcap {

struct OptimizerOptions {
  int restarts = 16;
  int max_iterations = 500;  // per inner solve
  double tolerance = 1e-9;   // gradient infinity norm
  double fd_step = 1e-5;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct OptimizerDiagnostics {
  int iterations = 0;          // inner iterations of the selected restart
  double gradient_norm = 0.0;  // Lagrangian gradient at the selected point
  int restarts = 0;
  int converged_restarts = 0;
  int best_restart = -1;
  bool converged = false;
  std::string message;
};

struct RateAndPower {
  double rate = 0.0;
  double power = 0.0;  // average power per step
};

struct PowerConstrainedProblem {
  int dimension = 0;
  double kappa = 0.0;
  /// Rate and power at the projection of a raw point; writes the projected
  /// (canonical) parameter when the pointer is non-null.
  std::function<RateAndPower(const Vector& raw, Vector* canonical)> evaluate;
  std::function<Vector(int, std::mt19937_64&)> initial_point;  // raw
  std::function<double(const Vector&)> tie_break_norm;         // canonical
};

struct OptimizationOutcome {
  Vector x;  // canonical
  RateAndPower value;
  OptimizerDiagnostics diag;
};

namespace detail {

struct InnerResult {
  Vector x;
  double objective = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

inline Vector central_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                               double h) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x(i)));
    probe(i) = x(i) + step;
    const double up = f(probe);
    probe(i) = x(i) - step;
    const double down = f(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

/// BFGS minimization with Armijo backtracking.
inline InnerResult bfgs_minimize(const std::function<double(const Vector&)>& f, Vector x,
                                 const OptimizerOptions& opts) {
  const Eigen::Index d = x.size();
  InnerResult res;
  double fx = f(x);
  Vector g = central_gradient(f, x, opts.fd_step);
  Matrix H = Matrix::Identity(d, d);
  int stalls = 0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    res.iterations = it + 1;
    if (!g.allFinite() || !std::isfinite(fx)) break;
    if (g.lpNorm<Eigen::Infinity>() < opts.tolerance) {
      res.converged = true;
      break;
    }
    Vector p = -H * g;
    double slope = g.dot(p);
    if (!(slope < 0.0)) {
      H.setIdentity();
      p = -g;
      slope = -g.squaredNorm();
    }
    double alpha = 1.0;
    double f_new = fx;
    Vector x_new = x;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + alpha * p;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (H.isIdentity()) break;  // no descent along -g at working precision
      H.setIdentity();
      continue;
    }
    const Vector g_new = central_gradient(f, x_new, opts.fd_step);
    const Vector s = x_new - x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    const double improvement = fx - f_new;
    x = x_new;
    g = g_new;
    fx = f_new;
    if (sy > 1e-14 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Matrix I = Matrix::Identity(d, d);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) +
          rho * s * s.transpose();
    }
    if (improvement <= 1e-15 * (1.0 + std::abs(fx))) {
      if (++stalls >= 4) {
        // Progress is below working precision; accept when the gradient is
        // at the finite-difference noise floor.
        res.converged = g.lpNorm<Eigen::Infinity>() < std::sqrt(opts.tolerance);
        break;
      }
    } else {
      stalls = 0;
    }
  }
  res.x = std::move(x);
  res.objective = fx;
  res.gradient_norm = g.lpNorm<Eigen::Infinity>();
  if (res.gradient_norm < opts.tolerance) res.converged = true;
  return res;
}

inline OptimizationOutcome solve_from(const PowerConstrainedProblem& prob, const Vector& x0,
                                      const OptimizerOptions& opts) {
  auto negative_rate = [&](const Vector& x) { return -prob.evaluate(x, nullptr).rate; };
  const auto r = bfgs_minimize(negative_rate, x0, opts);
  OptimizationOutcome out;
  out.value = prob.evaluate(r.x, &out.x);
  out.diag.iterations = r.iterations;
  out.diag.gradient_norm = r.gradient_norm;
  out.diag.converged = r.converged;
  if (!r.converged) out.diag.message = "iteration limit reached";
  return out;
}

}  // namespace detail

/// Runs every restart and merges deterministically: highest rate first, then
/// (within 1e-9) the smallest tie-break norm, then the lowest restart index.
inline OptimizationOutcome maximize_under_power(const PowerConstrainedProblem& prob,
                                                const OptimizerOptions& opts) {
  const int restarts = std::max(1, opts.restarts);
  auto run_one = [&](int k) {
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed & 0xffffffffu),
                      static_cast<std::uint32_t>(opts.seed >> 32), static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    return detail::solve_from(prob, prob.initial_point(k, rng), opts);
  };

  std::vector<OptimizationOutcome> results(restarts);
  const int threads = std::max(1, opts.threads);
  if (threads == 1) {
    for (int k = 0; k < restarts; ++k) results[k] = run_one(k);
  } else {
    for (int base = 0; base < restarts; base += threads) {
      std::vector<std::future<OptimizationOutcome>> batch;
      for (int k = base; k < std::min(restarts, base + threads); ++k) {
        batch.push_back(std::async(std::launch::async, run_one, k));
      }
      for (std::size_t i = 0; i < batch.size(); ++i) results[base + i] = batch[i].get();
    }
  }

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : results) {
    if (std::isfinite(r.value.rate) && r.value.power <= prob.kappa + 1e-8) {
      best = std::max(best, r.value.rate);
    }
  }
  int chosen = -1;
  double chosen_norm = std::numeric_limits<double>::infinity();
  int converged = 0;
  for (int k = 0; k < restarts; ++k) {
    const auto& r = results[k];
    if (r.diag.converged) ++converged;
    if (!std::isfinite(r.value.rate) || r.value.power > prob.kappa + 1e-8) continue;
    if (r.value.rate < best - 1e-9) continue;
    const double norm = prob.tie_break_norm(r.x);
    if (norm < chosen_norm) {
      chosen = k;
      chosen_norm = norm;
    }
  }
  if (chosen < 0) throw NumericalError("optimizer: no restart produced a feasible point");
  OptimizationOutcome out = results[chosen];
  out.diag.restarts = restarts;
  out.diag.converged_restarts = converged;
  out.diag.best_restart = chosen;
  if (!out.diag.converged && out.diag.message.empty()) out.diag.message = "not converged";
  return out;
}

}  // namespace feedcap
