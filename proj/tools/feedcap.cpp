// feedcap: command-line front end for the feedback-capacity library.
//
// Every command writes results.csv, summary.json and plotdata.csv into the
// output directory. Exit status: 0 success, 1 user error, 2 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "feedcap/capacity.hpp"
#include "feedcap/io.hpp"
#include "feedcap/mc_sim.hpp"
#include "feedcap/oracle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace feedcap;

namespace {

struct RunConfig {
  std::string command;
  std::string model_path;
  double kappa = 1.0;
  std::optional<int> n;
  OptimizerOptions opts;
  std::string out_dir = ".";
  bool bits = false;
  // simulate
  int samples = 100000;
  std::string strategy = "optimized";
  bool export_paths = false;
  // steady-state
  std::vector<double> lambda;
  double k_z = 0.0;
  // asymptotic
  std::vector<int> grid{2, 4, 8, 16};
  // capacity
  bool perfect_state = false;
};

class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("FEEDCAP_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UserError("FEEDCAP_SEED must be a non-negative integer");
    }
  }
  return 0;
}

PoSsRealization load_with_horizon(const RunConfig& cfg) {
  PoSsRealization r = load_model(cfg.model_path);
  if (!cfg.n || *cfg.n == r.n) return r;
  if (*cfg.n < 1) throw UserError("--n must be positive");
  if (r.is_time_invariant() && r.n >= 2) return with_horizon(r, *cfg.n);
  if (*cfg.n > r.n) throw UserError("--n exceeds the horizon of a time-varying model");
  return truncated(r, *cfg.n);
}

double unit(const RunConfig& cfg, double nats) { return cfg.bits ? nats_to_bits(nats) : nats; }

void write_summary(const RunConfig& cfg, json summary) {
  summary["command"] = cfg.command;
  summary["units"] = cfg.bits ? "bits" : "nats";
  std::ofstream out(fs::path(cfg.out_dir) / "summary.json");
  out << summary.dump(2) << '\n';
}

json diagnostics_json(const OptimizerDiagnostics& d) {
  return {{"iterations", d.iterations},        {"gradient_norm", d.gradient_norm},
          {"restarts", d.restarts},            {"converged_restarts", d.converged_restarts},
          {"best_restart", d.best_restart},    {"converged", d.converged},
          {"message", d.message}};
}

json options_json(const OptimizerOptions& o) {
  return {{"restarts", o.restarts},
          {"max_iterations", o.max_iterations},
          {"tolerance", o.tolerance},
          {"seed", o.seed}};
}

void write_rate_series(const RunConfig& cfg, const PoSsRealization& r, const CapacityResult& res) {
  const auto noise = run_noise_filter(r);
  const auto out = run_output_filter(r, noise, res.strategy);
  std::vector<std::string> header{"t", "rate", "power", "K_Ihat", "K_I", "K_Z"};
  for (int i = 0; i < r.n_s; ++i) header.push_back("Lambda_" + std::to_string(i + 1));
  for (int i = 0; i < r.n_s; ++i)
    for (int j = 0; j < r.n_s; ++j)
      header.push_back("Sigma_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
  for (int i = 0; i < r.n_s; ++i)
    for (int j = 0; j < r.n_s; ++j)
      header.push_back("K_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
  CsvWriter csv(fs::path(cfg.out_dir) / "results.csv", header);
  for (int t = 0; t < r.n; ++t) {
    std::vector<double> row{static_cast<double>(t + 1), unit(cfg, res.rate_per_step[t]),
                            out.power[t], noise.K_Ihat[t], out.K_I[t], res.strategy.K_Z[t]};
    for (int i = 0; i < r.n_s; ++i) row.push_back(res.strategy.Lambda[t](i));
    for (int i = 0; i < r.n_s; ++i)
      for (int j = 0; j < r.n_s; ++j) row.push_back(noise.Sigma[t](i, j));
    for (int i = 0; i < r.n_s; ++i)
      for (int j = 0; j < r.n_s; ++j) row.push_back(out.K[t](i, j));
    csv.write_numbers(row);
  }
  CsvWriter plot(fs::path(cfg.out_dir) / "plotdata.csv", {"series", "x", "y"});
  double cumulative = 0.0;
  for (int t = 0; t < r.n; ++t) {
    plot.write_row({"rate_vs_t", std::to_string(t + 1), format_number(unit(cfg, res.rate_per_step[t]))});
  }
  for (int t = 0; t < r.n; ++t) {
    cumulative += res.rate_per_step[t];
    plot.write_row({"cumulative_rate_vs_t", std::to_string(t + 1), format_number(unit(cfg, cumulative))});
  }
}

int cmd_filter(const RunConfig& cfg) {
  const auto r = load_with_horizon(cfg);
  const auto noise = run_noise_filter(r);
  const auto h = noise_entropy(noise);
  const Matrix K_V = assemble_noise_covariance(r);
  double sum_log = 0.0;
  for (double k : noise.K_Ihat) sum_log += std::log(k);
  const double log_det = log_det_spd(K_V);

  write_noise_trace_csv(fs::path(cfg.out_dir) / "results.csv", noise);
  CsvWriter plot(fs::path(cfg.out_dir) / "plotdata.csv", {"series", "x", "y"});
  for (int t = 0; t < r.n; ++t) {
    plot.write_row({"K_Ihat_vs_t", std::to_string(t + 1), format_number(noise.K_Ihat[t])});
  }
  for (int t = 0; t < r.n; ++t) {
    plot.write_row({"entropy_vs_t", std::to_string(t + 1), format_number(unit(cfg, h.per_step[t]))});
  }
  write_summary(cfg, {{"n", r.n},
                      {"noise_entropy", unit(cfg, h.total)},
                      {"sum_log_K_Ihat", sum_log},
                      {"log_det_K_V", log_det},
                      {"determinant_identity_delta", std::abs(sum_log - log_det)}});
  return 0;
}

int cmd_capacity(const RunConfig& cfg) {
  const auto r = load_with_horizon(cfg);
  const auto res = optimize_strategy(r, {cfg.kappa, r.n}, cfg.opts);
  const auto baseline = evaluate_rate(r, SequentialStrategy::no_feedback(r.n, r.n_s, cfg.kappa));
  write_rate_series(cfg, r, res);
  write_strategy_csv(fs::path(cfg.out_dir) / "strategy.csv", res.strategy);
  json summary{{"n", r.n},
               {"kappa", cfg.kappa},
               {"value", unit(cfg, res.value)},
               {"value_per_step", unit(cfg, res.value / r.n)},
               {"avg_power", res.avg_power},
               {"no_feedback_value", unit(cfg, baseline.value)},
               {"lambda_norm", res.strategy.lambda_norm()},
               {"options", options_json(cfg.opts)},
               {"diagnostics", diagnostics_json(res.optimizer_diag)}};
  if (cfg.perfect_state) {
    const auto ps = perfect_state_rate(r, {cfg.kappa, r.n}, cfg.opts);
    summary["perfect_state_value"] = unit(cfg, ps.value);
    summary["perfect_state_margin"] = unit(cfg, ps.value - res.value);
    summary["perfect_state_diagnostics"] = diagnostics_json(ps.optimizer_diag);
  }
  write_summary(cfg, summary);
  return 0;
}

int cmd_oracle_compare(const RunConfig& cfg) {
  const auto r = load_with_horizon(cfg);
  if (r.n > kCoverPombraMaxHorizon) {
    throw UserError("oracle-compare is limited to n <= " + std::to_string(kCoverPombraMaxHorizon));
  }
  const auto seq = optimize_strategy(r, {cfg.kappa, r.n}, cfg.opts);
  const Matrix K_V = assemble_noise_covariance(r);
  const auto cp = cp_optimize(K_V, {cfg.kappa, r.n}, cfg.opts);
  const auto unrolled = unroll_sequential(r, seq.strategy, run_noise_filter(r));
  const auto unrolled_value = cp_objective(K_V, unrolled);

  write_rate_series(cfg, r, seq);
  write_strategy_csv(fs::path(cfg.out_dir) / "strategy.csv", seq.strategy);
  write_cover_pombra_csv(fs::path(cfg.out_dir) / "cover_pombra.csv", cp.strategy);
  write_summary(cfg, {{"n", r.n},
                      {"kappa", cfg.kappa},
                      {"sequential_value", unit(cfg, seq.value)},
                      {"sequential_avg_power", seq.avg_power},
                      {"cover_pombra_value", unit(cfg, cp.value)},
                      {"cover_pombra_avg_power", cp.avg_power},
                      {"delta", unit(cfg, seq.value - cp.value)},
                      {"abs_delta", unit(cfg, std::abs(seq.value - cp.value))},
                      {"unrolled_objective_delta", unit(cfg, std::abs(unrolled_value.value - seq.value))},
                      {"unrolled_power_delta", std::abs(unrolled_value.avg_power - seq.avg_power)},
                      {"options", options_json(cfg.opts)},
                      {"sequential_diagnostics", diagnostics_json(seq.optimizer_diag)},
                      {"cover_pombra_diagnostics", diagnostics_json(cp.diag)}});
  return 0;
}

int cmd_steady_state(const RunConfig& cfg) {
  const auto r = load_with_horizon(cfg);
  if (!r.is_time_invariant()) throw UserError("steady-state needs a time-invariant model");
  RowVector lambda = RowVector::Zero(r.n_s);
  if (!cfg.lambda.empty()) {
    if (static_cast<int>(cfg.lambda.size()) != r.n_s) {
      throw UserError("--lambda needs n_s = " + std::to_string(r.n_s) + " values");
    }
    for (int i = 0; i < r.n_s; ++i) lambda(i) = cfg.lambda[i];
  }
  if (cfg.k_z < 0.0) throw UserError("--kz must be >= 0");
  const SequentialStrategy s{{lambda}, {cfg.k_z}};
  const auto model = r.n >= 2 ? r : with_horizon(r, 2);
  const auto ss = steady_state_riccati(model, s);

  // Transient of both recursions up to convergence, for plotting.
  const int steps = std::min(ss.iterations + 1, 200);
  const auto long_model = with_horizon(model, steps + 1);
  const auto noise = run_noise_filter(long_model);
  const auto out = run_output_filter(
      long_model, noise,
      SequentialStrategy{std::vector<RowVector>(steps + 1, lambda), std::vector<double>(steps + 1, cfg.k_z)});
  std::vector<std::string> header{"t"};
  for (int i = 0; i < r.n_s; ++i)
    for (int j = 0; j < r.n_s; ++j)
      header.push_back("Sigma_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
  for (int i = 0; i < r.n_s; ++i)
    for (int j = 0; j < r.n_s; ++j)
      header.push_back("K_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
  CsvWriter csv(fs::path(cfg.out_dir) / "results.csv", header);
  CsvWriter plot(fs::path(cfg.out_dir) / "plotdata.csv", {"series", "x", "y"});
  for (int t = 0; t <= steps; ++t) {
    std::vector<double> row{static_cast<double>(t + 1)};
    for (int i = 0; i < r.n_s; ++i)
      for (int j = 0; j < r.n_s; ++j) row.push_back(noise.Sigma[t](i, j));
    for (int i = 0; i < r.n_s; ++i)
      for (int j = 0; j < r.n_s; ++j) row.push_back(out.K[t](i, j));
    csv.write_numbers(row);
    plot.write_row({"trace_Sigma_vs_t", std::to_string(t + 1), format_number(noise.Sigma[t].trace())});
  }
  for (int t = 0; t <= steps; ++t) {
    plot.write_row({"trace_K_vs_t", std::to_string(t + 1), format_number(out.K[t].trace())});
  }
  write_summary(cfg, {{"Sigma_star", detail::matrix_to_json(ss.Sigma_star)},
                      {"K_star", detail::matrix_to_json(ss.K_star)},
                      {"converged", ss.converged},
                      {"diverged", ss.diverged},
                      {"iterations", ss.iterations}});
  return ss.diverged ? 2 : 0;
}

int cmd_simulate(const RunConfig& cfg) {
  const auto r = load_with_horizon(cfg);
  if (cfg.samples < 2) throw UserError("--samples must be at least 2");
  SequentialStrategy s;
  double analytic_value = 0.0;
  if (cfg.strategy == "optimized") {
    const auto res = optimize_strategy(r, {cfg.kappa, r.n}, cfg.opts);
    s = res.strategy;
  } else if (cfg.strategy == "no-feedback") {
    s = SequentialStrategy::no_feedback(r.n, r.n_s, cfg.kappa);
  } else if (cfg.strategy == "zero") {
    s = SequentialStrategy::zero(r.n, r.n_s);
  } else {
    throw UserError("unknown --strategy '" + cfg.strategy + "'");
  }
  const auto eval = evaluate_rate(r, s);
  analytic_value = eval.value;
  const auto trace = simulate(r, s, cfg.samples, cfg.opts.seed);
  const auto orth = check_orthogonality(trace);
  const auto rate = empirical_rate(trace);
  const auto power = empirical_power(trace);

  CsvWriter csv(fs::path(cfg.out_dir) / "results.csv",
                {"t", "var_V", "var_I_hat", "var_I", "mean_X2", "K_Ihat", "K_I", "power"});
  const auto noise = run_noise_filter(r);
  const auto out = run_output_filter(r, noise, s);
  CsvWriter plot(fs::path(cfg.out_dir) / "plotdata.csv", {"series", "x", "y"});
  for (int t = 0; t < r.n; ++t) {
    const double var_i = trace.I.col(t).array().square().mean();
    const double var_h = trace.I_hat.col(t).array().square().mean();
    csv.write_numbers({static_cast<double>(t + 1),
                       (trace.V.col(t).array() - trace.V.col(t).mean()).square().mean(), var_h,
                       var_i, trace.X.col(t).array().square().mean(), noise.K_Ihat[t], out.K_I[t],
                       out.power[t]});
    plot.write_row({"empirical_rate_vs_t", std::to_string(t + 1),
                    format_number(unit(cfg, 0.5 * std::log(var_i / var_h)))});
  }
  for (int t = 0; t < r.n; ++t) {
    plot.write_row({"rate_vs_t", std::to_string(t + 1), format_number(unit(cfg, eval.rate_per_step[t]))});
  }
  if (cfg.export_paths) write_simulation_csv(fs::path(cfg.out_dir) / "paths.csv", trace);
  write_strategy_csv(fs::path(cfg.out_dir) / "strategy.csv", s);

  write_summary(cfg, {{"n", r.n},
                      {"kappa", cfg.kappa},
                      {"strategy", cfg.strategy},
                      {"samples", cfg.samples},
                      {"seed", cfg.opts.seed},
                      {"analytic_value", unit(cfg, analytic_value)},
                      {"empirical_value", unit(cfg, rate.value)},
                      {"empirical_standard_error", unit(cfg, rate.standard_error)},
                      {"analytic_avg_power", eval.avg_power},
                      {"empirical_avg_power", power.value},
                      {"empirical_power_standard_error", power.standard_error},
                      {"orthogonality",
                       {{"threshold", orth.threshold},
                        {"noise_innovations", orth.noise_innovations},
                        {"output_innovations", orth.output_innovations},
                        {"noise_innovation_vs_past_noise", orth.noise_innovation_vs_past_noise},
                        {"dither_vs_past_output", orth.dither_vs_past_output},
                        {"all_pass", orth.all_pass()}}}});
  return 0;
}

int cmd_asymptotic(const RunConfig& cfg) {
  auto r = load_model(cfg.model_path);
  if (!r.is_time_invariant() || r.n < 2) {
    throw UserError("asymptotic needs a time-invariant model with n >= 2");
  }
  const auto rows = asymptotic_rate_estimate(r, cfg.kappa, cfg.grid, cfg.opts);
  CsvWriter csv(fs::path(cfg.out_dir) / "results.csv",
                {"n", "capacity", "capacity_per_step", "difference", "avg_power"});
  CsvWriter plot(fs::path(cfg.out_dir) / "plotdata.csv", {"series", "x", "y"});
  json table = json::array();
  for (const auto& row : rows) {
    csv.write_row({std::to_string(row.n), format_number(unit(cfg, row.capacity)),
                   format_number(unit(cfg, row.per_step)),
                   std::isnan(row.difference) ? "" : format_number(unit(cfg, row.difference)),
                   format_number(row.avg_power)});
    plot.write_row({"cn_over_n_vs_n", std::to_string(row.n), format_number(unit(cfg, row.per_step))});
    json entry{{"n", row.n},
               {"capacity", unit(cfg, row.capacity)},
               {"capacity_per_step", unit(cfg, row.per_step)},
               {"converged", row.converged}};
    if (!std::isnan(row.difference)) entry["difference"] = unit(cfg, row.difference);
    table.push_back(entry);
  }
  write_summary(cfg, {{"kappa", cfg.kappa}, {"options", options_json(cfg.opts)}, {"table", table}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feedback capacity of Gaussian channels with partially observable state-space noise"};
  app.require_subcommand(1);
  RunConfig cfg;
  try {
    cfg.opts.seed = default_seed();
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  auto common = [&](CLI::App* sub, bool needs_kappa) {
    sub->add_option("--model", cfg.model_path, "Model JSON file")->required();
    if (needs_kappa) sub->add_option("--kappa", cfg.kappa, "Average power budget")->check(CLI::NonNegativeNumber);
    sub->add_option("--n", cfg.n, "Horizon override");
    sub->add_option("--out", cfg.out_dir, "Output directory");
    sub->add_flag("--bits", cfg.bits, "Report rates in bits instead of nats");
    sub->add_option("--restarts", cfg.opts.restarts, "Optimizer restarts")->check(CLI::PositiveNumber);
    sub->add_option("--max-iter", cfg.opts.max_iterations, "Inner iterations per solve")->check(CLI::PositiveNumber);
    sub->add_option("--tol", cfg.opts.tolerance, "Gradient tolerance")->check(CLI::PositiveNumber);
    sub->add_option("--seed", cfg.opts.seed, "Seed (default: FEEDCAP_SEED or 0)");
    sub->add_option("--threads", cfg.opts.threads, "Concurrent restarts")->check(CLI::PositiveNumber);
  };

  auto* filter = app.add_subcommand("filter", "Run the noise filter and report H(V^n)");
  common(filter, false);
  auto* capacity = app.add_subcommand("capacity", "Optimize the sequential characterization");
  common(capacity, true);
  capacity->add_flag("--perfect-state", cfg.perfect_state, "Also optimize the perfect-state input law");
  auto* oracle = app.add_subcommand("oracle-compare", "Compare against the matrix-form optimum");
  common(oracle, true);
  auto* steady = app.add_subcommand("steady-state", "Fixed points of both Riccati recursions");
  common(steady, false);
  steady->add_option("--lambda", cfg.lambda, "Time-invariant input gain (n_s values)")->delimiter(',');
  steady->add_option("--kz", cfg.k_z, "Time-invariant dither variance");
  auto* sim = app.add_subcommand("simulate", "Monte Carlo validation of a strategy");
  common(sim, true);
  sim->add_option("--samples", cfg.samples, "Number of sample paths");
  sim->add_option("--strategy", cfg.strategy, "optimized | no-feedback | zero");
  sim->add_flag("--export-paths", cfg.export_paths, "Write paths.csv (limited sample count)");
  auto* asym = app.add_subcommand("asymptotic", "C_n/n over a grid of horizons");
  common(asym, true);
  asym->add_option("--grid", cfg.grid, "Increasing horizons")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  cfg.command = app.get_subcommands().front()->get_name();
  try {
    if (!fs::exists(cfg.model_path)) throw UserError("model file not found: " + cfg.model_path);
    fs::create_directories(cfg.out_dir);
    if (cfg.command == "filter") return cmd_filter(cfg);
    if (cfg.command == "capacity") return cmd_capacity(cfg);
    if (cfg.command == "oracle-compare") return cmd_oracle_compare(cfg);
    if (cfg.command == "steady-state") return cmd_steady_state(cfg);
    if (cfg.command == "simulate") return cmd_simulate(cfg);
    if (cfg.command == "asymptotic") return cmd_asymptotic(cfg);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
