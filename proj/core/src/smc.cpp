#include "smckq/smc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smckq/error.hpp"

namespace smckq {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double tempered(double log_ref, double log_target, double t) {
  if (t <= 0.0) return log_ref;
  if (t >= 1.0) return log_target;
  if (log_ref == kNegInf || log_target == kNegInf) return kNegInf;
  return (1.0 - t) * log_ref + t * log_target;
}

// log z_j = delta * (log pi - log pi_0)(x_j); -inf where pi vanishes.
Vector incremental_log_weights(const ParticleSystem& s, double delta) {
  const Vector r = s.log_ratios();
  Vector lz(s.size());
  for (Eigen::Index j = 0; j < s.size(); ++j) lz(j) = r(j) == kNegInf ? kNegInf : delta * r(j);
  return lz;
}

}  // namespace

bool Box::contains(const Vector& x) const {
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (!(x(j) >= lower(j) && x(j) <= upper(j))) return false;
  }
  return true;
}

bool TemperedTarget::in_support(const Vector& x) const { return !support || support->contains(x); }

double TemperedTarget::log_density(const Vector& x, double t) const {
  if (!in_support(x)) return kNegInf;
  const double lr = t < 1.0 ? log_ref(x) : 0.0;
  const double lt = t > 0.0 ? log_target(x) : 0.0;
  return tempered(lr, lt, t);
}

ParticleSystem ParticleSystem::from_states(Matrix states, const TemperedTarget& target, double t) {
  require(states.rows() >= 1, ErrorCode::kEmptyPointSet, "particle system needs N >= 1");
  ParticleSystem s;
  const auto n = states.rows();
  s.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
  s.t = t;
  s.log_ref.resize(n);
  s.log_target.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vector x = states.row(j).transpose();
    const bool inside = target.in_support(x);
    s.log_ref(j) = inside ? target.log_ref(x) : kNegInf;
    s.log_target(j) = inside ? target.log_target(x) : kNegInf;
  }
  s.states = std::move(states);
  return s;
}

void ParticleSystem::check_invariants() const {
  require(size() >= 1, ErrorCode::kEmptyPointSet, "particle system is empty");
  require(weights.size() == size() && log_ref.size() == size() && log_target.size() == size(),
          ErrorCode::kDimensionMismatch, "particle system arrays have inconsistent lengths");
  require((weights.array() >= 0.0).all(), ErrorCode::kDegenerateWeights, "negative weight");
  require(std::abs(weights.sum() - 1.0) <= 1e-12, ErrorCode::kDegenerateWeights,
          "weights do not sum to one");
  require(t >= 0.0 && t <= 1.0, ErrorCode::kInvalidArgument, "temperature outside [0, 1]");
}

Vector ParticleSystem::log_ratios() const {
  Vector r(size());
  for (Eigen::Index j = 0; j < size(); ++j) {
    if (log_target(j) == kNegInf) {
      r(j) = kNegInf;
    } else if (log_ref(j) == kNegInf) {
      // Reference has no mass here; the particle cannot have been drawn from it.
      r(j) = kNegInf;
    } else {
      r(j) = log_target(j) - log_ref(j);
    }
  }
  return r;
}

void ProposalPolicy::validate() const {
  require(rw_scale > 0.0 && std::isfinite(rw_scale), ErrorCode::kInvalidArgument,
          "rw_scale must be > 0");
  require(sweeps >= 1, ErrorCode::kInvalidArgument, "sweeps must be >= 1");
}

void Proposal::set_covariance(const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  bool ok = llt.info() == Eigen::Success && cov.allFinite();
  if (ok) {
    const double min_pivot = llt.matrixLLT().diagonal().minCoeff();
    ok = min_pivot > 0.0 && std::isfinite(min_pivot);
  }
  if (ok) {
    chol_ = llt.matrixL();
  } else {
    Vector diag = cov.diagonal().array().max(0.0) + 1e-8;
    chol_ = diag.array().sqrt().matrix().asDiagonal();
    diagonal_fallback_ = true;
  }
  chol_inv_ = chol_.triangularView<Eigen::Lower>().solve(Matrix::Identity(chol_.rows(), chol_.cols()));
}

Proposal Proposal::gaussian_independence(Vector mean, const Matrix& cov) {
  Proposal p;
  p.kind_ = ProposalPolicy::Kind::kAdaptiveGaussianIndependence;
  p.mean_ = std::move(mean);
  p.set_covariance(cov);
  return p;
}

Proposal Proposal::lognormal_independence(Vector log_mean, const Matrix& log_cov) {
  Proposal p;
  p.kind_ = ProposalPolicy::Kind::kAdaptiveLognormalIndependence;
  p.mean_ = std::move(log_mean);
  p.set_covariance(log_cov);
  return p;
}

Proposal Proposal::random_walk(Eigen::Index dim, double scale) {
  require(scale > 0.0, ErrorCode::kInvalidArgument, "random-walk scale must be > 0");
  Proposal p;
  p.kind_ = ProposalPolicy::Kind::kRandomWalkGaussian;
  p.scale_ = scale;
  p.mean_ = Vector::Zero(dim);
  return p;
}

Vector Proposal::draw(const Vector& current, Rng& rng) const {
  Vector e(mean_.size());
  for (Eigen::Index j = 0; j < e.size(); ++j) e(j) = rng.normal();
  switch (kind_) {
    case ProposalPolicy::Kind::kRandomWalkGaussian:
      return current + scale_ * e;
    case ProposalPolicy::Kind::kAdaptiveGaussianIndependence:
      return mean_ + chol_ * e;
    case ProposalPolicy::Kind::kAdaptiveLognormalIndependence:
      return (mean_ + chol_ * e).array().exp().matrix();
  }
  return current;
}

double Proposal::log_density(const Vector& from, const Vector& to) const {
  switch (kind_) {
    case ProposalPolicy::Kind::kRandomWalkGaussian:
      return -0.5 * (to - from).squaredNorm() / (scale_ * scale_);
    case ProposalPolicy::Kind::kAdaptiveGaussianIndependence:
      return -0.5 * (chol_inv_ * (to - mean_)).squaredNorm();
    case ProposalPolicy::Kind::kAdaptiveLognormalIndependence: {
      if ((to.array() <= 0.0).any()) return kNegInf;
      const Vector y = to.array().log().matrix();
      return -0.5 * (chol_inv_ * (y - mean_)).squaredNorm() - y.sum();
    }
  }
  return 0.0;
}

Proposal fit_proposal(const ParticleSystem& system, const ProposalPolicy& policy) {
  policy.validate();
  if (policy.kind == ProposalPolicy::Kind::kRandomWalkGaussian) {
    return Proposal::random_walk(system.dim(), policy.rw_scale);
  }
  Matrix x = system.states;
  if (policy.kind == ProposalPolicy::Kind::kAdaptiveLognormalIndependence) {
    require((x.array() > 0.0).all(), ErrorCode::kInvalidArgument,
            "lognormal proposal needs strictly positive states");
    x = x.array().log().matrix();
  }
  const Vector& w = system.weights;
  const Vector mean = x.transpose() * w;
  const Matrix centered = x.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * w.asDiagonal() * centered;
  return policy.kind == ProposalPolicy::Kind::kAdaptiveLognormalIndependence
             ? Proposal::lognormal_independence(mean, cov)
             : Proposal::gaussian_independence(mean, cov);
}

double ess(const Vector& weights) {
  const double s2 = weights.squaredNorm();
  require(s2 > 0.0, ErrorCode::kDegenerateWeights, "ess of all-zero weights");
  return 1.0 / s2;
}

double cess(const ParticleSystem& system, double t_candidate) {
  require(t_candidate >= system.t, ErrorCode::kInvalidArgument,
          "cess: candidate temperature below current temperature");
  const auto n = static_cast<double>(system.size());
  if (t_candidate == system.t) return n;
  const Vector lz = incremental_log_weights(system, t_candidate - system.t);
  // Only particles with positive weight contribute; shift by their max.
  double shift = kNegInf;
  for (Eigen::Index j = 0; j < lz.size(); ++j) {
    if (system.weights(j) > 0.0) shift = std::max(shift, lz(j));
  }
  require(shift > kNegInf, ErrorCode::kSupportMismatch,
          "cess: every incremental weight is zero");
  double s1 = 0.0;
  double s2 = 0.0;
  for (Eigen::Index j = 0; j < lz.size(); ++j) {
    const double z = std::exp(lz(j) - shift);
    s1 += system.weights(j) * z;
    s2 += system.weights(j) * z * z;
  }
  return n * s1 * s1 / s2;
}

double next_temperature(const ParticleSystem& system, double rho, double max_step) {
  require(rho > 0.0 && rho < 1.0, ErrorCode::kInvalidArgument, "rho must lie in (0, 1)");
  require(max_step > 0.0, ErrorCode::kInvalidArgument, "max temperature step must be > 0");
  require(system.t < 1.0, ErrorCode::kInvalidArgument, "already at t = 1");
  const double target = rho * static_cast<double>(system.size());
  double solved = 1.0;
  if (cess(system, 1.0) < target) {
    double lo = system.t;
    double hi = 1.0;
    while (hi - lo > 1e-8) {
      const double mid = 0.5 * (lo + hi);
      if (cess(system, mid) >= target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    solved = lo;
    // Guarantee progress when the first step already violates the target.
    if (solved <= system.t) solved = hi;
  }
  return std::min({solved, system.t + max_step, 1.0});
}

ParticleSystem reweight(const ParticleSystem& system, double t_next) {
  require(t_next >= system.t, ErrorCode::kInvalidArgument, "reweight: t_next below current t");
  ParticleSystem out = system;
  out.t = t_next;
  if (t_next == system.t) return out;
  const Vector lz = incremental_log_weights(system, t_next - system.t);
  Vector lw(system.size());
  double shift = kNegInf;
  for (Eigen::Index j = 0; j < lw.size(); ++j) {
    lw(j) = system.weights(j) > 0.0 ? std::log(system.weights(j)) + lz(j) : kNegInf;
    shift = std::max(shift, lw(j));
  }
  require(shift > kNegInf, ErrorCode::kDegenerateWeights, "all weights underflowed to zero");
  for (Eigen::Index j = 0; j < lw.size(); ++j) out.weights(j) = std::exp(lw(j) - shift);
  out.weights /= out.weights.sum();
  return out;
}

ParticleSystem resample_multinomial(const ParticleSystem& system, Rng& rng) {
  const auto n = system.size();
  // Inverse-CDF on sorted uniforms gives i.i.d. multinomial ancestors.
  Vector cdf(n);
  double acc = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    acc += system.weights(j);
    cdf(j) = acc;
  }
  std::vector<Eigen::Index> ancestors(static_cast<std::size_t>(n));
  for (auto& a : ancestors) {
    const double u = rng.uniform() * acc;
    const double* first = cdf.data();
    const double* hit = std::upper_bound(first, first + n, u);
    a = std::min<Eigen::Index>(hit - first, n - 1);
  }
  ParticleSystem out;
  out.t = system.t;
  out.states.resize(n, system.dim());
  out.log_ref.resize(n);
  out.log_target.resize(n);
  out.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto a = ancestors[static_cast<std::size_t>(j)];
    out.states.row(j) = system.states.row(a);
    out.log_ref(j) = system.log_ref(a);
    out.log_target(j) = system.log_target(a);
  }
  return out;
}

double log_acceptance_ratio(const Proposal& proposal, const Vector& x, double log_pi_t_x,
                            const Vector& x_star, double log_pi_t_x_star) {
  if (log_pi_t_x_star == kNegInf) return kNegInf;
  if (proposal.kind() == ProposalPolicy::Kind::kRandomWalkGaussian) {
    return log_pi_t_x_star - log_pi_t_x;
  }
  return log_pi_t_x_star + proposal.log_density(x_star, x) - log_pi_t_x -
         proposal.log_density(x, x_star);
}

ParticleSystem markov_sweep(const ParticleSystem& system, const TemperedTarget& target,
                            const Proposal& proposal, Rng& rng, MoveStats* stats) {
  ParticleSystem out = system;
  const double t = system.t;
  const std::uint64_t sweep_seed = rng();
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    Rng stream(Rng::derive_seed(sweep_seed, static_cast<std::uint64_t>(j)));
    const Vector x = out.states.row(j).transpose();
    const Vector x_star = proposal.draw(x, stream);
    const double u = stream.uniform_open();
    if (stats) ++stats->proposed;

    const double log_x = tempered(out.log_ref(j), out.log_target(j), t);
    double lr_star = kNegInf;
    double lt_star = kNegInf;
    double log_x_star = kNegInf;
    if (target.in_support(x_star) && x_star.allFinite()) {
      lr_star = t < 1.0 ? target.log_ref(x_star) : 0.0;
      lt_star = t > 0.0 ? target.log_target(x_star) : 0.0;
      log_x_star = tempered(lr_star, lt_star, t);
    } else if (stats) {
      ++stats->out_of_support;
    }
    const double log_r = log_acceptance_ratio(proposal, x, log_x, x_star, log_x_star);
    if (mh_accept(log_r, u)) {
      out.states.row(j) = x_star.transpose();
      // Densities not evaluated at the endpoints are filled in lazily.
      out.log_ref(j) = t < 1.0 ? lr_star : target.log_ref(x_star);
      out.log_target(j) = t > 0.0 ? lt_star : target.log_target(x_star);
      if (stats) ++stats->accepted;
    }
  }
  if (stats) stats->diagonal_fallback = stats->diagonal_fallback || proposal.used_diagonal_fallback();
  return out;
}

ParticleSystem markov_move(const ParticleSystem& system, const TemperedTarget& target,
                           const ProposalPolicy& policy, Rng& rng, MoveStats* stats) {
  const Proposal proposal = fit_proposal(system, policy);
  ParticleSystem out = system;
  for (int s = 0; s < policy.sweeps; ++s) out = markov_sweep(out, target, proposal, rng, stats);
  return out;
}

ParticleSystem smc_step(const ParticleSystem& system, const TemperedTarget& target, double t_next,
                        double rho, const ProposalPolicy& policy, Rng& rng, StepInfo* info) {
  require(t_next > system.t && t_next <= 1.0, ErrorCode::kInvalidArgument,
          "smc_step: t_next must lie in (t, 1]");
  ParticleSystem out = reweight(system, t_next);
  const double e = ess(out.weights);
  const bool resample = e < static_cast<double>(out.size()) * rho;
  if (resample) out = resample_multinomial(out, rng);
  StepInfo local;
  local.ess_after_reweight = e;
  local.resampled = resample;
  out = markov_move(out, target, policy, rng, &local.moves);
  if (info) *info = local;
  return out;
}

}  // namespace smckq
