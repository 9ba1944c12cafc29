// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "feedcap/capacity.hpp"
#include "feedcap/mc_sim.hpp"
#include "feedcap/oracle.hpp"
#include "support/gaussian_oracle.hpp"
#include "support/random_models.hpp"

using namespace feedcap;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

Outcome determinant_identity() {
  std::mt19937_64 rng(1001);
  const auto start = Clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 50);
    const auto r = testkit::random_model(rng, n, {.n_s_max = 4});
    double sum = 0.0;
    for (double k : run_noise_filter(r).K_Ihat) sum += std::log(k);
    worst = std::max(worst, std::abs(sum - testkit::noise_log_det(r)));
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-8 && elapsed < 10.0, fmt("max |error| %.3g, %.2f s", worst, elapsed)};
}

Outcome unroll_equivalence() {
  std::mt19937_64 rng(1002);
  double worst_rate = 0.0, worst_power = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto r = testkit::random_model(rng, 1 + trial % 6);
    const auto s = testkit::random_strategy(rng, r.n, r.n_s);
    const auto seq = evaluate_rate(r, s);
    const auto mat = cp_objective(assemble_noise_covariance(r), unroll_sequential(r, s, run_noise_filter(r)));
    worst_rate = std::max(worst_rate, std::abs(mat.value - seq.value));
    worst_power = std::max(worst_power, std::abs(mat.avg_power - seq.avg_power));
  }
  return {worst_rate <= 1e-9 && worst_power <= 1e-9,
          fmt("max |rate diff| %.3g, max |power diff| %.3g", worst_rate, worst_power)};
}

Outcome innovations_round_trip() {
  std::mt19937_64 rng(1003);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = testkit::random_model(rng, 1 + trial % 5);
    const Matrix K_V = assemble_noise_covariance(r);
    const auto s = testkit::random_cover_pombra(rng, r.n);
    const auto conv = cp_to_innovations_form(K_V, s);
    worst = std::max(worst, max_abs_diff(joint_covariance(K_V, s), joint_covariance(K_V, conv.strategy)));
  }
  return {worst <= 1e-9, fmt("max |joint covariance diff| %.3g", worst)};
}

Outcome cross_engine() {
  std::mt19937_64 rng(1004);
  OptimizerOptions opts;
  opts.restarts = 16;
  const auto start = Clock::now();
  double worst = 0.0;
  int cases = 0;
  for (int m = 0; m < 20; ++m) {
    const int n = 1 + m % 3;
    const auto r = testkit::random_model(rng, n);
    const Matrix K_V = assemble_noise_covariance(r);
    for (double kappa : {0.5, 1.0, 4.0}) {
      const double seq = optimize_strategy(r, {kappa, n}, opts).value;
      const double mat = cp_optimize(K_V, {kappa, n}, opts).value;
      worst = std::max(worst, std::abs(seq - mat));
      ++cases;
    }
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-4 && elapsed < 300.0,
          fmt("%.0f cases, max |difference| %.3g nats, %.1f s", cases, worst, elapsed)};
}

Outcome white_noise() {
  double worst = 0.0, worst_lambda = 0.0;
  for (int n = 1; n <= 10; ++n) {
    const auto res = optimize_strategy(build_white_noise(1.0, n), {1.0, n});
    worst = std::max(worst, std::abs(res.value / n - 0.5 * std::log(2.0)));
    for (const auto& l : res.strategy.Lambda) worst_lambda = std::max(worst_lambda, l.norm());
  }
  return {worst <= 1e-5 && worst_lambda <= 1e-3,
          fmt("max |C_n/n - log(2)/2| %.3g, max |Lambda| %.3g", worst, worst_lambda)};
}

Outcome perfect_state_gap() {
  const auto r = build_scalar_two_driver(0.5, 1.0, 8);
  const double partial = optimize_strategy(r, {1.0, 8}).value;
  const double perfect = perfect_state_rate(r, {1.0, 8}).value;
  const double margin = perfect - partial;
  return {margin > 1e-6, fmt("perfect-state %.6f, partial %.6f, margin %.6f nats", perfect, partial, margin)};
}

Outcome statistical_suite() {
  const auto r = build_arma11(0.5, 0.1, 1.0, 4);
  OptimizerOptions opts;
  opts.restarts = 4;
  const auto opt = optimize_strategy(r, {1.0, 4}, opts);
  const auto tr = simulate(r, opt.strategy, 100000, 7);
  const auto orth = check_orthogonality(tr);
  const auto est = empirical_rate(tr);
  const double z = std::abs(est.value - opt.value) / est.standard_error;
  std::ostringstream os;
  os << "orthogonality " << (orth.all_pass() ? "ok" : "violated") << " (threshold "
     << orth.threshold << "), empirical " << est.value << " vs " << opt.value << " nats, "
     << z << " SE";
  return {orth.all_pass() && z <= 3.0, os.str()};
}

Outcome riccati_robustness() {
  std::mt19937_64 rng(1008);
  double min_eig = std::numeric_limits<double>::infinity();
  double min_rate = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 1000; ++trial) {
    const auto r = testkit::random_model(rng, 1 + trial % 20, {.n_s_max = 4});
    const auto s = testkit::random_strategy(rng, r.n, r.n_s);
    const auto noise = run_noise_filter(r);
    const auto out = run_output_filter(r, noise, s);
    for (int t = 0; t < r.n; ++t) {
      min_eig = std::min({min_eig, min_eigenvalue(noise.Sigma[t]), min_eigenvalue(out.K[t])});
      min_rate = std::min(min_rate, 0.5 * std::log(out.K_I[t] / noise.K_Ihat[t]));
    }
  }
  return {min_eig >= -1e-9 && min_rate >= 0.0,
          fmt("min eigenvalue %.3g, min per-step rate %.3g", min_eig, min_rate)};
}

Outcome steady_state() {
  const auto r = build_scalar_two_driver(0.5, 1.0, 2);
  const auto res = steady_state_riccati(r, SequentialStrategy::zero(1, 1), 1e-13, 10000);
  const double root = 0.5 * (0.25 + std::sqrt(0.0625 + 4.0));
  const double err = std::abs(res.Sigma_star(0, 0) - root);
  return {res.converged && err <= 1e-9 && res.iterations < 10000,
          fmt("Sigma* %.9f, error %.3g, %.0f iterations", res.Sigma_star(0, 0), err, res.iterations)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"determinant identity", determinant_identity},
      {"unrolling equivalence", unroll_equivalence},
      {"innovations round trip", innovations_round_trip},
      {"cross-engine optimum agreement", cross_engine},
      {"memoryless exactness", white_noise},
      {"perfect-state gap", perfect_state_gap},
      {"statistical suite", statistical_suite},
      {"Riccati robustness", riccati_robustness},
      {"steady-state fixed point", steady_state},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
