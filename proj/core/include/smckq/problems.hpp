#pragma once

#include <cstddef>
#include <functional>
#include <numbers>

#include "smckq/linalg.hpp"
#include "smckq/rng.hpp"
#include "smckq/smc.hpp"

namespace smckq {

/// f(x) = 1 + prod_j sin(frequency * x_j) integrated against N(0, I_d); the
/// true integral is 1.
struct ToyProblem {
  int d = 1;
  double frequency = 2.0 * std::numbers::pi;
  double kernel_lengthscale = 1.0;
  double sampler_std = 1.0;

  void validate() const;
};

double toy_integrand(const ToyProblem& p, const Vector& x);

/// Standard deviation of N(0, ref_std^2)^(1-t) N(0, 1)^t.
double toy_tempered_std(double ref_std, double t);

/// Tempered path from N(0, ref_std^2 I) to N(0, I) in dimension d.
TemperedTarget toy_tempered_target(int d, double ref_std);

/// Damped harmonic oscillator x'' + theta4 x' + theta3 x = 0 with
/// x(0) = theta1, x'(0) = theta2, observed with Gaussian noise.
struct ODEProblem {
  Vector theta_true;     // (theta1, theta2, theta3, theta4)
  double noise_std = 0.4;
  Vector times;
  Vector observations;   // empty until data is generated
  double horizon = 12.0;
  double prior_location = 0.0;
  double prior_scale = 0.5;

  /// theta = (1, 3.75, 2.5, 0.5), sigma = 0.4, 20 equally spaced times on
  /// [0, 10], T = 12; observations left empty.
  static ODEProblem standard();
  void validate() const;
};

/// Closed-form solution at time t for theta1..theta4 (any damping regime).
double ode_solution(const Vector& theta, double t);

/// y_i = x(t_i | theta_true) + noise_std * e_i.
Vector generate_ode_data(const ODEProblem& p, Rng& rng);

/// sum_i log N(y_i | x(t_i | theta), sigma^2).
double ode_log_likelihood(const ODEProblem& p, const Vector& theta);
/// sum_j log LogNormal(theta_j | prior_location, prior_scale); -inf if any theta_j <= 0.
double ode_log_prior(const ODEProblem& p, const Vector& theta);
/// Log-likelihood plus log-prior; -inf outside the positive orthant.
double ode_log_posterior(const ODEProblem& p, const Vector& theta);
/// Gradient of ode_log_posterior. Prior part analytic, trajectory partials by
/// central differences with relative step 1e-6.
Vector ode_score(const ODEProblem& p, const Vector& theta);
/// The quantity of interest x(T | theta).
double ode_integrand(const ODEProblem& p, const Vector& theta);

struct MhChain {
  Matrix samples;  // one row per step (state after the accept/reject)
  std::size_t accepted = 0;
};

/// Random-walk Metropolis-Hastings in log(theta) on the ODE posterior. The
/// proposal increments come from `proposals`; acceptance uniforms from
/// `uniform`, so a chain can be replayed from recorded uniforms.
MhChain ode_log_space_chain(const ODEProblem& p, const Vector& start, std::size_t length,
                            double step, Rng& proposals, const std::function<double()>& uniform);

struct BenchmarkOptions {
  std::size_t chain_length = 200000;
  std::size_t burn_in = 20000;
  double step = 0.08;
  std::size_t batches = 50;
  std::size_t thin = 1;
};

struct BenchmarkResult {
  double mean = 0.0;
  double std_error = 0.0;
  double acceptance_rate = 0.0;
  bool acceptance_warning = false;  // rate outside [0.05, 0.95]
  std::size_t samples = 0;
  Matrix draws;  // post-burn-in states, thinned by options.thin
};

/// Brute-force posterior mean of x(T | theta) with a batch-means standard error.
BenchmarkResult posterior_benchmark(const ODEProblem& p, const BenchmarkOptions& options, Rng& rng);

struct BachDiagnostic {
  double lambda = 1e-15;
  int truncation = 100;

  void validate() const;
};

/// Unnormalised density exp(-x^2) sum_{j<m} h_j(sqrt(3/2) x)^2 / (1 + lambda 2^(j+1)) with
/// h_j the normalised Hermite polynomials H_j / sqrt(2^j j!), for the standard
/// normal measure and unit lengthscale. Requires m <= 120.
double bach_density_truncated(const BachDiagnostic& diag, double x);

/// j-th eigenvalue of the Gaussian kernel integral operator under N(0, sigma^2)
/// with kernel exp(-(x - y)^2 / ell^2).
double shi_eigenvalue(int j, double sigma = 1.0, double ell = 1.0);

}  // namespace smckq
