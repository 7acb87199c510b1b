#pragma once

#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smckq/controller.hpp"
#include "smckq/problems.hpp"

namespace smckq {

enum class Experiment {
  kToySweep,
  kToySmcKq,
  kToySmcKqKl,
  kOde,
  kBachDiagnostic,
  kHaltonCompare,
  kSbqDemo,
};

std::string_view to_string(Experiment e) noexcept;

/// Batch-run configuration. Every field can be set from the JSON config
/// through the dotted key shown next to it.
struct RunConfig {
  Experiment experiment = Experiment::kToySweep;  // experiment
  std::uint64_t seed = 0;                         // seed
  std::size_t replicates = 1;                     // replicates
  std::size_t threads = 1;                        // threads
  std::string output_dir;                         // output
  bool record_wall_time = false;                  // output.wall_time

  // Toy family.
  int toy_d = 1;                                  // toy.d
  double toy_frequency = 2.0 * std::numbers::pi;  // toy.frequency
  std::vector<double> toy_sigmas{1.0, 2.0, 3.0, 5.0};  // toy.sigmas
  std::vector<std::size_t> toy_ns{10, 25, 50, 75};     // toy.ns
  double toy_ref_std = 8.0;                       // toy.ref_std
  bool toy_mc_baseline = false;                   // toy.mc_baseline (toy-sweep MC rows)

  // Kernel.
  double lengthscale = 0.0;       // kernel.lengthscale (0: problem default)
  double fit_lower = 0.05;        // kernel.fit_lower
  double fit_upper = 5.0;         // kernel.fit_upper
  bool fit_isotropic = true;      // kernel.isotropic
  NuggetPolicy nugget;            // nugget.initial_jitter, nugget.growth, nugget.max_attempts

  // SMC-KQ method parameters.
  std::size_t n = 75;             // method.n
  std::size_t N = 300;            // method.N
  std::size_t M_boot = 20;        // method.M_boot
  double rho = 0.95;              // method.rho
  double delta = 0.1;             // method.delta
  std::string proposal;           // method.proposal (empty: experiment default)
  double rw_scale = 0.5;          // method.rw_scale
  int sweeps = 1;                 // method.sweeps
  int refit_every = 1;            // method.refit_every

  // ODE problem.
  double ode_noise_std = 0.4;                    // ode.noise_std
  std::vector<double> ode_theta{1.0, 3.75, 2.5, 0.5};  // ode.theta
  std::size_t ode_n_times = 20;                  // ode.n_times
  double ode_t_max = 10.0;                       // ode.t_max
  double ode_horizon = 12.0;                     // ode.horizon
  double ode_prior_scale = 0.5;                  // ode.prior_scale
  double ode_prior_location = 0.0;               // ode.prior_location
  std::uint64_t ode_data_seed = 1;               // ode.data_seed
  double ode_box_upper = 10.0;                   // ode.box_upper
  double ode_lengthscale = 1.0;                  // ode.lengthscale
  std::string ode_benchmark_file;                // ode.benchmark_file
  std::size_t ode_chain_length = 200000;         // ode.chain_length
  std::size_t ode_burn_in = 20000;               // ode.burn_in
  double ode_step = 0.08;                        // ode.step
  std::size_t ode_kq_chain_length = 20000;       // ode.kq_chain_length
  std::size_t ode_kq_burn_in = 5000;             // ode.kq_burn_in

  // Bach diagnostic.
  double bach_lambda = 1e-15;       // bach.lambda
  int bach_truncation = 100;        // bach.truncation
  std::size_t grid_points = 401;    // grid.points
  double grid_lower = -4.0;         // grid.lower
  double grid_upper = 4.0;          // grid.upper

  // SBQ demo.
  std::vector<double> sbq_lengthscales{0.01, 1.0};  // sbq.lengthscales
  std::size_t sbq_n = 30;                           // sbq.n
  double sbq_seed_point = 0.0;                      // sbq.seed_point

  void validate() const;
  SmcKqConfig smc_config() const;
  ToyProblem toy_problem() const;
  /// kernel.lengthscale if set; otherwise 0.25 for d > 1 or frequency 4pi,
  /// 0.15 for frequency 8pi and 1 for the base toy problem.
  double toy_lengthscale() const;
  ODEProblem ode_problem() const;  // data generated from ode.data_seed
};

/// Parses a JSON config document. Errors are Error(kConfig) whose message
/// starts with "line N:".
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// One output line of results.csv.
struct ResultRow {
  std::string experiment;
  std::size_t replicate = 0;
  std::string method;
  std::size_t n = 0;
  double estimate = 0.0;
  std::optional<double> abs_error;
  std::optional<double> t_star;
  std::size_t total_f_evals = 0;
  double nugget_used = 0.0;
  std::optional<double> wall_time_ms;
  std::uint64_t seed = 0;
};

std::string results_csv_header();
std::string to_csv_line(const ResultRow& row);

/// sqrt(mean(abs_error^2)); rows without abs_error are an error.
double rmse_aggregate(std::span<const ResultRow> rows);

/// Everything one replicate produces.
struct ReplicateOutput {
  std::vector<ResultRow> rows;
  std::vector<TraceEntry> trace;  // SMC-KQ runs only
};

/// Data shared by all replicates of a run (ODE data, benchmark truth).
struct ExperimentContext {
  std::optional<ODEProblem> ode;
  std::optional<double> ode_truth;
};

ExperimentContext prepare_context(const RunConfig& config);

/// Seed of replicate r: a pure function of (config.seed, r).
std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate);

ReplicateOutput run_replicate(const RunConfig& config, const ExperimentContext& context,
                              std::size_t replicate);

/// Runs every replicate and writes results.csv, summary.json and trace files
/// into config.output_dir.
void run(const RunConfig& config);

/// Brute-force ODE benchmark written as JSON to `path`.
void write_ode_benchmark(const RunConfig& config, const std::string& path);

}  // namespace smckq
