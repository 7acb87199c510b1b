#include "smckq/problems.hpp"

#include <cmath>
#include <limits>

#include "smckq/error.hpp"
#include "smckq/kernel.hpp"

namespace smckq {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void check_theta(const Vector& theta) {
  require(theta.size() == 4, ErrorCode::kDimensionMismatch, "ODE parameter vector must have length 4");
}

}  // namespace

void ToyProblem::validate() const {
  require(d >= 1, ErrorCode::kInvalidArgument, "toy problem needs d >= 1");
  require(frequency > 0.0 && std::isfinite(frequency), ErrorCode::kInvalidArgument,
          "toy frequency must be > 0");
  require(kernel_lengthscale > 0.0, ErrorCode::kInvalidArgument, "toy lengthscale must be > 0");
  require(sampler_std > 0.0, ErrorCode::kInvalidArgument, "toy sampler_std must be > 0");
}

double toy_integrand(const ToyProblem& p, const Vector& x) {
  require(x.size() == p.d, ErrorCode::kDimensionMismatch, "toy_integrand: dimension mismatch");
  double prod = 1.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) prod *= std::sin(p.frequency * x(j));
  return 1.0 + prod;
}

double toy_tempered_std(double ref_std, double t) {
  return 1.0 / std::sqrt((1.0 - t) / (ref_std * ref_std) + t);
}

TemperedTarget toy_tempered_target(int d, double ref_std) {
  const GaussianMeasure ref = GaussianMeasure::isotropic(d, 0.0, ref_std);
  const GaussianMeasure target = GaussianMeasure::standard(d);
  return TemperedTarget{[ref](const Vector& x) { return ref.log_density(x); },
                        [target](const Vector& x) { return target.log_density(x); },
                        std::nullopt};
}

ODEProblem ODEProblem::standard() {
  ODEProblem p;
  p.theta_true = (Vector(4) << 1.0, 3.75, 2.5, 0.5).finished();
  p.times = Vector::LinSpaced(20, 0.0, 10.0);
  return p;
}

void ODEProblem::validate() const {
  check_theta(theta_true);
  require((theta_true.array() > 0.0).all(), ErrorCode::kInvalidArgument,
          "theta_true must be positive");
  require(theta_true(3) * theta_true(3) <= 4.0 * theta_true(2), ErrorCode::kInvalidArgument,
          "theta_true must be underdamped (theta4^2 <= 4 theta3)");
  require(noise_std >= 0.0 && std::isfinite(noise_std), ErrorCode::kInvalidArgument,
          "noise_std must be >= 0");
  require(horizon > 0.0, ErrorCode::kInvalidArgument, "horizon must be > 0");
  require(prior_scale > 0.0, ErrorCode::kInvalidArgument, "prior_scale must be > 0");
  require(observations.size() == 0 || observations.size() == times.size(),
          ErrorCode::kDimensionMismatch, "observations and times differ in length");
  require(observations.allFinite(), ErrorCode::kNonFinite, "observations must be finite");
}

double ode_solution(const Vector& theta, double t) {
  check_theta(theta);
  const double a = theta(0);
  const double b = theta(1);
  const double c = theta(2);
  const double d = theta(3);
  const double disc = c - 0.25 * d * d;
  // x(t) = exp(-d t / 2) (a C(t) + (b + d a / 2) S(t)) with C'' = -disc C,
  // C(0) = 1, C'(0) = 0 and S = integral of C.
  double cc;
  double ss;
  const double q = disc * t * t;
  if (std::abs(q) < 1e-4) {
    cc = 1.0 - q / 2.0 + q * q / 24.0 - q * q * q / 720.0;
    ss = t * (1.0 - q / 6.0 + q * q / 120.0 - q * q * q / 5040.0);
  } else if (disc > 0.0) {
    const double w = std::sqrt(disc);
    cc = std::cos(w * t);
    ss = std::sin(w * t) / w;
  } else {
    const double k = std::sqrt(-disc);
    cc = std::cosh(k * t);
    ss = std::sinh(k * t) / k;
  }
  return std::exp(-0.5 * d * t) * (a * cc + (b + 0.5 * d * a) * ss);
}

Vector generate_ode_data(const ODEProblem& p, Rng& rng) {
  check_theta(p.theta_true);
  Vector y(p.times.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double x = ode_solution(p.theta_true, p.times(i));
    y(i) = x + p.noise_std * rng.normal();
  }
  return y;
}

double ode_log_likelihood(const ODEProblem& p, const Vector& theta) {
  check_theta(theta);
  require(p.observations.size() == p.times.size(), ErrorCode::kDimensionMismatch,
          "ODE problem has no observations");
  require(p.noise_std > 0.0, ErrorCode::kInvalidArgument, "likelihood needs noise_std > 0");
  const double s2 = p.noise_std * p.noise_std;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.times.size(); ++i) {
    const double r = p.observations(i) - ode_solution(theta, p.times(i));
    acc += -0.5 * r * r / s2 - std::log(p.noise_std) - kLogSqrt2Pi;
  }
  return acc;
}

double ode_log_prior(const ODEProblem& p, const Vector& theta) {
  check_theta(theta);
  if ((theta.array() <= 0.0).any()) return kNegInf;
  const double s = p.prior_scale;
  double acc = 0.0;
  for (Eigen::Index j = 0; j < 4; ++j) {
    const double lt = std::log(theta(j));
    const double r = (lt - p.prior_location) / s;
    acc += -lt - std::log(s) - kLogSqrt2Pi - 0.5 * r * r;
  }
  return acc;
}

double ode_log_posterior(const ODEProblem& p, const Vector& theta) {
  const double lp = ode_log_prior(p, theta);
  if (lp == kNegInf) return kNegInf;
  return ode_log_likelihood(p, theta) + lp;
}

Vector ode_score(const ODEProblem& p, const Vector& theta) {
  check_theta(theta);
  require((theta.array() > 0.0).all() && theta.allFinite(), ErrorCode::kInvalidArgument,
          "ode_score needs theta in the open positive orthant");
  const double s2 = p.prior_scale * p.prior_scale;
  Vector u(4);
  for (Eigen::Index j = 0; j < 4; ++j) {
    u(j) = -1.0 / theta(j) - (std::log(theta(j)) - p.prior_location) / (s2 * theta(j));
  }
  if (p.times.size() == 0) return u;
  require(p.observations.size() == p.times.size(), ErrorCode::kDimensionMismatch,
          "ODE problem has no observations");
  const double noise2 = p.noise_std * p.noise_std;
  Vector resid(p.times.size());
  for (Eigen::Index i = 0; i < p.times.size(); ++i) {
    resid(i) = (p.observations(i) - ode_solution(theta, p.times(i))) / noise2;
  }
  for (Eigen::Index j = 0; j < 4; ++j) {
    const double h = 1e-6 * theta(j);
    Vector up = theta;
    Vector dn = theta;
    up(j) += h;
    dn(j) -= h;
    const double width = up(j) - dn(j);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.times.size(); ++i) {
      const double dx = (ode_solution(up, p.times(i)) - ode_solution(dn, p.times(i))) / width;
      acc += resid(i) * dx;
    }
    u(j) += acc;
  }
  return u;
}

double ode_integrand(const ODEProblem& p, const Vector& theta) {
  return ode_solution(theta, p.horizon);
}

MhChain ode_log_space_chain(const ODEProblem& p, const Vector& start, std::size_t length,
                            double step, Rng& proposals, const std::function<double()>& uniform) {
  check_theta(start);
  require(step > 0.0, ErrorCode::kInvalidArgument, "chain step must be > 0");
  require((start.array() > 0.0).all(), ErrorCode::kInvalidArgument, "chain start must be positive");
  // Target in phi = log(theta): log pi(exp(phi)) + sum(phi).
  auto log_density = [&p](const Vector& phi) {
    const double lp = ode_log_posterior(p, phi.array().exp().matrix());
    return lp == kNegInf ? kNegInf : lp + phi.sum();
  };
  MhChain chain;
  chain.samples.resize(static_cast<Eigen::Index>(length), 4);
  Vector phi = start.array().log().matrix();
  double current = log_density(phi);
  require(std::isfinite(current), ErrorCode::kNonFinite, "chain start has zero posterior density");
  for (std::size_t i = 0; i < length; ++i) {
    Vector prop(4);
    for (Eigen::Index j = 0; j < 4; ++j) prop(j) = phi(j) + step * proposals.normal();
    const double cand = log_density(prop);
    if (mh_accept(cand - current, uniform())) {
      phi = prop;
      current = cand;
      ++chain.accepted;
    }
    chain.samples.row(static_cast<Eigen::Index>(i)) = phi.array().exp().matrix().transpose();
  }
  return chain;
}

BenchmarkResult posterior_benchmark(const ODEProblem& p, const BenchmarkOptions& options, Rng& rng) {
  p.validate();
  require(options.chain_length > options.burn_in, ErrorCode::kInvalidArgument,
          "chain_length must exceed burn_in");
  require(options.batches >= 2, ErrorCode::kInvalidArgument, "need at least 2 batches");
  require(options.thin >= 1, ErrorCode::kInvalidArgument, "thin must be >= 1");
  const std::uint64_t s = rng();
  Rng proposals(Rng::derive_seed(s, 0));
  Rng uniforms(Rng::derive_seed(s, 1));
  const MhChain chain = ode_log_space_chain(p, p.theta_true, options.chain_length, options.step,
                                            proposals, [&uniforms] { return uniforms.uniform_open(); });

  const std::size_t kept = options.chain_length - options.burn_in;
  Vector g(static_cast<Eigen::Index>(kept));
  for (std::size_t i = 0; i < kept; ++i) {
    g(static_cast<Eigen::Index>(i)) = ode_integrand(
        p, chain.samples.row(static_cast<Eigen::Index>(options.burn_in + i)).transpose());
  }

  BenchmarkResult out;
  out.samples = kept;
  out.mean = g.mean();
  const std::size_t batches = std::min(options.batches, kept);
  const std::size_t size = kept / batches;
  Vector means(static_cast<Eigen::Index>(batches));
  for (std::size_t b = 0; b < batches; ++b) {
    means(static_cast<Eigen::Index>(b)) =
        g.segment(static_cast<Eigen::Index>(b * size), static_cast<Eigen::Index>(size)).mean();
  }
  const double mb = means.mean();
  const double var = (means.array() - mb).square().sum() / static_cast<double>(batches - 1);
  out.std_error = std::sqrt(var / static_cast<double>(batches));
  out.acceptance_rate = static_cast<double>(chain.accepted) / static_cast<double>(options.chain_length);
  out.acceptance_warning = out.acceptance_rate < 0.05 || out.acceptance_rate > 0.95;

  const std::size_t n_draws = (kept + options.thin - 1) / options.thin;
  out.draws.resize(static_cast<Eigen::Index>(n_draws), 4);
  for (std::size_t i = 0; i < n_draws; ++i) {
    out.draws.row(static_cast<Eigen::Index>(i)) =
        chain.samples.row(static_cast<Eigen::Index>(options.burn_in + i * options.thin));
  }
  return out;
}

void BachDiagnostic::validate() const {
  require(lambda > 0.0 && std::isfinite(lambda), ErrorCode::kInvalidArgument, "lambda must be > 0");
  require(truncation >= 1, ErrorCode::kInvalidArgument, "truncation must be >= 1");
  require(truncation <= 120, ErrorCode::kInvalidArgument, "truncation must be <= 120");
}

double bach_density_truncated(const BachDiagnostic& diag, double x) {
  diag.validate();
  const double y = std::sqrt(1.5) * x;
  double h_prev = 0.0;
  double h = 1.0;  // h_0
  double acc = 0.0;
  for (int j = 0; j < diag.truncation; ++j) {
    acc += h * h / (1.0 + diag.lambda * std::ldexp(1.0, j + 1));
    const double jj = static_cast<double>(j);
    const double next = std::sqrt(2.0 / (jj + 1.0)) * y * h - std::sqrt(jj / (jj + 1.0)) * h_prev;
    h_prev = h;
    h = next;
  }
  return std::exp(-x * x) * acc;
}

double shi_eigenvalue(int j, double sigma, double ell) {
  require(j >= 0, ErrorCode::kInvalidArgument, "eigenvalue index must be >= 0");
  require(sigma > 0.0 && ell > 0.0, ErrorCode::kInvalidArgument, "sigma and ell must be > 0");
  const double beta = 4.0 * sigma * sigma / (ell * ell);
  const double denom = 1.0 + beta + std::sqrt(1.0 + 2.0 * beta);
  return std::sqrt(2.0 / denom) * std::pow(beta / denom, j);
}

}  // namespace smckq
