#include "smckq/controller.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <limits>

#include "smckq/error.hpp"

namespace smckq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInvPhi = 0.6180339887498949;

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

Matrix unique_rows(const Matrix& states) {
  return select_rows(states, unique_row_indices(states));
}

void require_unique(std::size_t available, std::size_t n) {
  require(available >= n, ErrorCode::kInsufficientUniqueStates,
          "need at least n = " + std::to_string(n) + " unique states, have " +
              std::to_string(available));
}

// Golden-section search for the minimum of g on [a, b].
std::pair<double, double> golden_section(const std::function<double(double)>& g, double a,
                                         double b, int iterations) {
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double gc = g(c);
  double gd = g(d);
  for (int i = 0; i < iterations; ++i) {
    if (gc <= gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - kInvPhi * (b - a);
      gc = g(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + kInvPhi * (b - a);
      gd = g(d);
    }
  }
  return gc <= gd ? std::pair{c, gc} : std::pair{d, gd};
}

// One-dimensional minimisation over log-lengthscale in [lo, hi]: coarse grid,
// then golden-section inside the cells adjacent to the best grid node.
std::pair<double, double> minimise_1d(const std::function<double(double)>& g, double lo, double hi,
                                      const KernelFitOptions& opt) {
  const int m = std::max(opt.grid_points, 3);
  std::vector<double> nodes(static_cast<std::size_t>(m));
  std::vector<double> values(static_cast<std::size_t>(m));
  std::size_t best = 0;
  for (int i = 0; i < m; ++i) {
    const auto k = static_cast<std::size_t>(i);
    nodes[k] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m - 1);
    values[k] = g(nodes[k]);
    if (values[k] < values[best]) best = k;
  }
  if (!std::isfinite(values[best])) return {nodes[best], kInf};
  const double a = nodes[best == 0 ? 0 : best - 1];
  const double b = nodes[std::min(best + 1, nodes.size() - 1)];
  const auto [x, gx] = golden_section(g, a, b, opt.golden_iterations);
  if (gx < values[best]) return {x, gx};
  return {nodes[best], values[best]};
}

struct Snapshot {
  ParticleSystem system;
  Vector lengthscales;
};

// Index into `window` of the snapshot the driver should use.
std::size_t choose_snapshot(const std::deque<Snapshot>& window, const ErrorTrace& trace,
                            bool terminated) {
  if (!terminated) return window.size() - 1;
  const std::size_t offset = trace.size() - window.size();
  std::size_t best = 0;
  for (std::size_t i = 1; i < window.size(); ++i) {
    if (trace.entries[offset + i].R < trace.entries[offset + best].R) best = i;
  }
  return best;
}

ParticleSystem initial_particles(const SmcKqProblem& problem, std::size_t N, Rng& rng) {
  Matrix states(static_cast<Eigen::Index>(N), 0);
  for (std::size_t j = 0; j < N; ++j) {
    const Vector x = problem.sample_reference(rng);
    if (j == 0) states.resize(static_cast<Eigen::Index>(N), x.size());
    states.row(static_cast<Eigen::Index>(j)) = x.transpose();
  }
  return ParticleSystem::from_states(std::move(states), problem.target, 0.0);
}

constexpr std::size_t kMaxTemperatures = 100000;

}  // namespace

void ErrorTrace::push(TraceEntry e) {
  require(std::isfinite(e.R) && e.R >= 0.0, ErrorCode::kInvalidArgument,
          "trace entry R must be finite and >= 0");
  require(entries.empty() || e.t > entries.back().t, ErrorCode::kInvalidArgument,
          "trace temperatures must be strictly increasing");
  entries.push_back(e);
}

std::size_t EvalCache::KeyHash::operator()(const std::vector<std::uint64_t>& k) const noexcept {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (auto b : k) h = Rng::mix(h ^ b);
  return static_cast<std::size_t>(h);
}

std::vector<std::uint64_t> EvalCache::key(const Vector& x) {
  std::vector<std::uint64_t> k(static_cast<std::size_t>(x.size()));
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    k[static_cast<std::size_t>(j)] = std::bit_cast<std::uint64_t>(x(j));
  }
  return k;
}

double EvalCache::operator()(const Vector& x) {
  auto k = key(x);
  if (auto it = index_.find(k); it != index_.end()) {
    ++hits_;
    return values_[it->second];
  }
  const double v = f_(x);
  index_.emplace(std::move(k), values_.size());
  points_.push_back(x);
  values_.push_back(v);
  return v;
}

bool EvalCache::contains(const Vector& x) const { return index_.count(key(x)) > 0; }

Matrix EvalCache::points() const {
  if (points_.empty()) return Matrix();
  Matrix out(static_cast<Eigen::Index>(points_.size()), points_.front().size());
  for (std::size_t i = 0; i < points_.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = points_[i].transpose();
  }
  return out;
}

Vector EvalCache::values() const {
  return Eigen::Map<const Vector>(values_.data(), static_cast<Eigen::Index>(values_.size()));
}

CritResult crit_prepared(const KernelHandle& kernel, const PreparedPoints& unique_states,
                         std::size_t n, std::size_t M, Rng& rng, const NuggetPolicy& policy) {
  require(n >= 1, ErrorCode::kInvalidArgument, "crit needs n >= 1");
  require(M >= 1, ErrorCode::kInvalidArgument, "crit needs M >= 1");
  const auto available = static_cast<std::size_t>(unique_states.size());
  require_unique(available, n);
  const double e0_sq = kernel.double_integral();
  CritResult out;
  double acc = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    const auto rows = rng.sample_without_replacement(available, n);
    const PreparedPoints subset = unique_states.subset(rows);
    const Matrix k = kernel.gram(subset);
    const Vector z = kernel.embeddings(subset);
    const GramFactor factor = factorize_gram(k, policy);
    const double e = worst_case_error(k, z, factor.solve(z), e0_sq).value;
    acc += e * e;
    out.max_nugget = std::max(out.max_nugget, factor.nugget);
  }
  out.R = std::sqrt(acc / static_cast<double>(M));
  return out;
}

CritResult crit(const KernelHandle& kernel, const Matrix& states, std::size_t n, std::size_t M,
                Rng& rng, const NuggetPolicy& policy) {
  return crit_prepared(kernel, kernel.prepare(unique_rows(states)), n, M, rng, policy);
}

TrendDecision trend_test(const ErrorTrace& trace) {
  const std::size_t w = std::max<std::size_t>(trace.window, 2);
  if (trace.size() < w) return TrendDecision::kContinue;
  const auto first = trace.entries.end() - static_cast<std::ptrdiff_t>(w);
  double mt = 0.0;
  double mr = 0.0;
  for (auto it = first; it != trace.entries.end(); ++it) {
    mt += it->t;
    mr += it->R;
  }
  mt /= static_cast<double>(w);
  mr /= static_cast<double>(w);
  double sxy = 0.0;
  double sxx = 0.0;
  for (auto it = first; it != trace.entries.end(); ++it) {
    sxy += (it->t - mt) * (it->R - mr);
    sxx += (it->t - mt) * (it->t - mt);
  }
  if (sxx <= 0.0) return TrendDecision::kContinue;
  return sxy / sxx > 0.0 ? TrendDecision::kTerminate : TrendDecision::kContinue;
}

void LengthscaleBox::validate() const {
  require(lower > 0.0 && upper >= lower && std::isfinite(upper), ErrorCode::kInvalidArgument,
          "lengthscale box needs 0 < lower <= upper < inf");
}

double marginal_likelihood_objective(const KernelHandle& kernel, const PreparedPoints& points,
                                     const Vector& f, const NuggetPolicy& policy) {
  require(f.size() == points.size(), ErrorCode::kDimensionMismatch,
          "objective: f length differs from number of points");
  try {
    const GramFactor factor = factorize_gram(kernel.gram(points), policy);
    const double value = f.dot(factor.solve(f)) + factor.log_determinant();
    return std::isfinite(value) ? value : kInf;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kGramSingular) return kInf;
    throw;
  }
}

KernelFit kern_param_fit(const KernelHandle& family, const Matrix& points, const Vector& f,
                         const LengthscaleBox& box, const NuggetPolicy& policy,
                         const KernelFitOptions& options) {
  box.validate();
  require(points.rows() >= 2, ErrorCode::kInvalidArgument, "kern_param_fit needs n >= 2");
  require(f.size() == points.rows(), ErrorCode::kDimensionMismatch,
          "kern_param_fit: f length differs from number of points");
  require(f.allFinite(), ErrorCode::kNonFinite, "kern_param_fit: f has non-finite values");

  const auto d = family.dim();
  const double lo = std::log(box.lower);
  const double hi = std::log(box.upper);
  KernelFit fit;
  fit.degenerate_integrand = (f.array() == 0.0).all();

  // Scores (Stein) do not depend on the lengthscales, so prepare once.
  const PreparedPoints prepared = family.prepare(points);
  Vector log_ell = Vector::Constant(d, 0.5 * (lo + hi));
  auto objective_at = [&](const Vector& le) {
    ++fit.evaluations;
    return marginal_likelihood_objective(family.with_lengthscales(le.array().exp().matrix()),
                                         prepared, f, policy);
  };

  auto [x, gx] = minimise_1d(
      [&](double v) { return objective_at(Vector::Constant(d, v)); }, lo, hi, options);
  log_ell.setConstant(x);
  double best = gx;

  if (!box.isotropic && d > 1) {
    for (int sweep = 0; sweep < options.coordinate_sweeps; ++sweep) {
      const double before = best;
      for (Eigen::Index j = 0; j < d; ++j) {
        Vector trial = log_ell;
        const auto [xj, gj] = minimise_1d(
            [&](double v) {
              trial(j) = v;
              return objective_at(trial);
            },
            lo, hi, options);
        if (gj < best) {
          best = gj;
          log_ell(j) = xj;
        }
      }
      if (!(best < before)) break;
    }
  }

  require(std::isfinite(best), ErrorCode::kObjectiveNonFinite,
          "marginal-likelihood objective is non-finite over the whole search box");
  fit.lengthscales = log_ell.array().exp().matrix();
  fit.objective = best;
  return fit;
}

CritKlResult crit_kl(EvalCache& cache, const KernelHandle& kernel, const Matrix& states,
                     const Matrix& design, std::size_t n, std::size_t M, Rng& rng,
                     const NuggetPolicy& policy) {
  require(design.rows() >= 1, ErrorCode::kEmptyPointSet, "crit_kl needs a non-empty design");
  const CritResult r = crit(kernel, states, n, M, rng, policy);
  const PointSet design_set = PointSet::from_rows(design);
  Vector f(design.rows());
  for (Eigen::Index i = 0; i < design.rows(); ++i) f(i) = cache(design.row(i).transpose());
  const GramFactor factor = factorize_gram(kernel.gram(kernel.prepare(design_set.matrix())), policy);
  CritKlResult out;
  out.R = r.R;
  out.interpolant_norm = std::sqrt(std::max(0.0, f.dot(factor.solve(f))));
  out.S = out.R * out.interpolant_norm;
  out.max_nugget = std::max(r.max_nugget, factor.nugget);
  return out;
}

void SmcKqConfig::validate() const {
  require(n >= 1, ErrorCode::kInvalidArgument, "n must be >= 1");
  require(N >= 2 * n, ErrorCode::kInvalidArgument, "N must be >= 2n");
  require(M_boot >= 1, ErrorCode::kInvalidArgument, "M_boot must be >= 1");
  require(rho > 0.0 && rho < 1.0, ErrorCode::kInvalidArgument, "rho must lie in (0, 1)");
  require(delta > 0.0 && std::isfinite(delta), ErrorCode::kInvalidArgument, "delta must be > 0");
  require(refit_every >= 1, ErrorCode::kInvalidArgument, "refit_every must be >= 1");
  proposal.validate();
  nugget.validate();
  lengthscale_box.validate();
}

RunReport smc_kq(const SmcKqProblem& problem, const KernelHandle& kernel, const SmcKqConfig& config,
                 std::uint64_t seed) {
  config.validate();
  Rng smc_rng(Rng::derive_seed(seed, 0));
  Rng crit_rng(Rng::derive_seed(seed, 1));
  Rng final_rng(Rng::derive_seed(seed, 2));

  RunReport report;
  report.seed = seed;
  ParticleSystem system = initial_particles(problem, config.N, smc_rng);
  std::deque<Snapshot> window;

  auto record = [&] {
    const CritResult c = crit(kernel, system.states, config.n, config.M_boot, crit_rng, config.nugget);
    report.trace.push({system.t, c.R, c.max_nugget});
    window.push_back({system, kernel.base().lengthscales});
    if (window.size() > report.trace.window) window.pop_front();
  };

  record();
  bool terminated = false;
  for (std::size_t iter = 0;; ++iter) {
    if (trend_test(report.trace) == TrendDecision::kTerminate) {
      terminated = true;
      break;
    }
    if (system.t >= 1.0) break;
    require(iter < kMaxTemperatures, ErrorCode::kInvalidArgument,
            "temperature ladder did not reach t = 1");
    const double t_next = next_temperature(system, config.rho, config.delta);
    system = smc_step(system, problem.target, t_next, config.rho, config.proposal, smc_rng);
    record();
  }

  const Snapshot& chosen = window[choose_snapshot(window, report.trace, terminated)];
  const Matrix unique = unique_rows(chosen.system.states);
  require_unique(static_cast<std::size_t>(unique.rows()), config.n);
  const Matrix design = select_rows(
      unique, final_rng.sample_without_replacement(static_cast<std::size_t>(unique.rows()), config.n));

  Vector f(design.rows());
  for (Eigen::Index i = 0; i < design.rows(); ++i) f(i) = problem.f(design.row(i).transpose());
  const QuadratureRule rule = kq_fit(kernel, PointSet::from_rows(design), config.nugget);

  report.estimate = kq_estimate(rule, f);
  report.t_star = chosen.system.t;
  report.n_quadrature_points = config.n;
  report.total_f_evals = config.n;
  report.kernel_params_final = kernel.base().lengthscales;
  report.nugget_used = rule.nugget_used;
  report.terminated_by_test = terminated;
  return report;
}

RunReport smc_kq_kl(const SmcKqProblem& problem, const KernelHandle& family,
                    const SmcKqConfig& config, std::uint64_t seed) {
  config.validate();
  Rng smc_rng(Rng::derive_seed(seed, 0));
  Rng crit_rng(Rng::derive_seed(seed, 1));
  Rng design_rng(Rng::derive_seed(seed, 3));

  RunReport report;
  report.seed = seed;
  EvalCache cache(problem.f);
  ParticleSystem system = initial_particles(problem, config.N, smc_rng);
  KernelHandle kernel = family;
  std::deque<Snapshot> window;
  std::size_t fits = 0;

  auto record = [&] {
    const Matrix unique = unique_rows(system.states);
    require_unique(static_cast<std::size_t>(unique.rows()), config.n);
    const Matrix design = select_rows(
        unique,
        design_rng.sample_without_replacement(static_cast<std::size_t>(unique.rows()), config.n));
    Vector f(design.rows());
    for (Eigen::Index i = 0; i < design.rows(); ++i) f(i) = cache(design.row(i).transpose());
    if (fits++ % static_cast<std::size_t>(config.refit_every) == 0) {
      const KernelFit fit = kern_param_fit(family, design, f, config.lengthscale_box, config.nugget,
                                           config.fit_options);
      kernel = family.with_lengthscales(fit.lengthscales);
    }
    const CritKlResult c = crit_kl(cache, kernel, system.states, design, config.n, config.M_boot,
                                   crit_rng, config.nugget);
    report.trace.push({system.t, c.S, c.max_nugget});
    window.push_back({system, kernel.base().lengthscales});
    if (window.size() > report.trace.window) window.pop_front();
  };

  record();
  bool terminated = false;
  for (std::size_t iter = 0;; ++iter) {
    if (trend_test(report.trace) == TrendDecision::kTerminate) {
      terminated = true;
      break;
    }
    if (system.t >= 1.0) break;
    require(iter < kMaxTemperatures, ErrorCode::kInvalidArgument,
            "temperature ladder did not reach t = 1");
    const double t_next = next_temperature(system, config.rho, config.delta);
    system = smc_step(system, problem.target, t_next, config.rho, config.proposal, smc_rng);
    record();
  }

  const Snapshot& chosen = window[choose_snapshot(window, report.trace, terminated)];
  const KernelHandle final_kernel = family.with_lengthscales(chosen.lengthscales);
  const QuadratureRule rule =
      kq_fit(final_kernel, PointSet::from_rows(cache.points()), config.nugget);

  report.estimate = kq_estimate(rule, cache.values());
  report.t_star = chosen.system.t;
  report.n_quadrature_points = cache.size();
  report.total_f_evals = cache.size();
  report.kernel_params_final = chosen.lengthscales;
  report.nugget_used = rule.nugget_used;
  report.terminated_by_test = terminated;
  return report;
}

}  // namespace smckq
