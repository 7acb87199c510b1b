#pragma once

#include <cmath>
#include <functional>
#include <optional>

#include "smckq/linalg.hpp"
#include "smckq/rng.hpp"

namespace smckq {

using LogDensity = std::function<double(const Vector&)>;

/// Axis-aligned box [lower, upper] (inclusive).
struct Box {
  Vector lower;
  Vector upper;

  bool contains(const Vector& x) const;
};

/// Geometric bridge pi_t = pi_0^(1-t) pi^t between a reference and a target.
/// Both densities may be unnormalised. Outside `support` (when set) every
/// tempered density is zero, including at t = 1.
struct TemperedTarget {
  LogDensity log_ref;
  LogDensity log_target;
  std::optional<Box> support;

  bool in_support(const Vector& x) const;
  /// (1 - t) log pi_0(x) + t log pi(x); -inf outside the support.
  double log_density(const Vector& x, double t) const;
};

/// Weighted particle approximation of pi_t. Besides states and weights it
/// carries the cached log pi_0 and log pi at every state so that reweighting
/// and the CESS search never re-evaluate the densities.
struct ParticleSystem {
  Matrix states;  // N x d
  Vector weights;
  double t = 0.0;
  Vector log_ref;
  Vector log_target;

  Eigen::Index size() const { return states.rows(); }
  Eigen::Index dim() const { return states.cols(); }

  /// Uniform-weight system at temperature t from the given states.
  static ParticleSystem from_states(Matrix states, const TemperedTarget& target, double t);
  void check_invariants() const;
  /// log pi(x_j) - log pi_0(x_j).
  Vector log_ratios() const;
};

struct ProposalPolicy {
  enum class Kind { kAdaptiveGaussianIndependence, kRandomWalkGaussian, kAdaptiveLognormalIndependence };
  Kind kind = Kind::kAdaptiveGaussianIndependence;
  double rw_scale = 0.5;
  int sweeps = 1;

  void validate() const;
};

/// Metropolis-Hastings proposal with parameters frozen for one sweep.
///
/// Independence variants draw N(mean, cov) (or exp of it for the lognormal
/// variant) regardless of the current state; the random walk draws
/// x + rw_scale * N(0, I).
class Proposal {
 public:
  static Proposal gaussian_independence(Vector mean, const Matrix& cov);
  static Proposal lognormal_independence(Vector log_mean, const Matrix& log_cov);
  static Proposal random_walk(Eigen::Index dim, double scale);

  ProposalPolicy::Kind kind() const { return kind_; }
  Vector draw(const Vector& current, Rng& rng) const;
  /// log q(from -> to), up to a constant shared by all (from, to).
  double log_density(const Vector& from, const Vector& to) const;
  /// True when the fitted covariance had to be replaced by its regularised diagonal.
  bool used_diagonal_fallback() const { return diagonal_fallback_; }

 private:
  ProposalPolicy::Kind kind_ = ProposalPolicy::Kind::kRandomWalkGaussian;
  Vector mean_;
  Matrix chol_;      // lower Cholesky factor of the covariance
  Matrix chol_inv_;  // its inverse
  double scale_ = 1.0;
  bool diagonal_fallback_ = false;

  void set_covariance(const Matrix& cov);
};

/// Fit the policy's proposal to the current weighted particle set.
Proposal fit_proposal(const ParticleSystem& system, const ProposalPolicy& policy);

/// 1 / sum w_j^2.
double ess(const Vector& weights);

/// Conditional ESS N (sum w z)^2 / sum w z^2 with z_j = (pi/pi_0)(x_j)^(t_candidate - t).
double cess(const ParticleSystem& system, double t_candidate);

/// Bisection for CESS(t) = N rho on [system.t, 1] to 1e-8 in t, capped at
/// system.t + max_step and at 1.
double next_temperature(const ParticleSystem& system, double rho, double max_step);

/// Importance reweighting to t_next in log space.
ParticleSystem reweight(const ParticleSystem& system, double t_next);

/// Multinomial resampling; resets weights to 1/N.
ParticleSystem resample_multinomial(const ParticleSystem& system, Rng& rng);

/// log of the Metropolis-Hastings ratio for moving x -> x_star under pi_t.
double log_acceptance_ratio(const Proposal& proposal, const Vector& x, double log_pi_t_x,
                            const Vector& x_star, double log_pi_t_x_star);

/// The acceptance rule: accept iff u < r.
inline bool mh_accept(double log_r, double u) { return std::log(u) < log_r; }

struct MoveStats {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  std::size_t out_of_support = 0;
  bool diagonal_fallback = false;

  double acceptance_rate() const {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
};

/// One (or policy.sweeps) Metropolis-Hastings sweeps targeting pi_{system.t}.
/// Proposal parameters are fitted once before the first sweep. Each particle
/// uses its own RNG substream split from a single draw of `rng`, so results
/// do not depend on how particles are scheduled.
ParticleSystem markov_move(const ParticleSystem& system, const TemperedTarget& target,
                           const ProposalPolicy& policy, Rng& rng, MoveStats* stats = nullptr);

/// Sweep with an explicit proposal (used by tests and by markov_move).
ParticleSystem markov_sweep(const ParticleSystem& system, const TemperedTarget& target,
                            const Proposal& proposal, Rng& rng, MoveStats* stats = nullptr);

struct StepInfo {
  double ess_after_reweight = 0.0;
  bool resampled = false;
  MoveStats moves;
};

/// Reweight to t_next, resample iff ESS < N rho, then Markov move.
ParticleSystem smc_step(const ParticleSystem& system, const TemperedTarget& target, double t_next,
                        double rho, const ProposalPolicy& policy, Rng& rng,
                        StepInfo* info = nullptr);

}  // namespace smckq
