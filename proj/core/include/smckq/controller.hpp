#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "smckq/kernel.hpp"
#include "smckq/linalg.hpp"
#include "smckq/quadrature.hpp"
#include "smckq/rng.hpp"
#include "smckq/smc.hpp"

namespace smckq {

using Integrand = std::function<double(const Vector&)>;

struct TraceEntry {
  double t = 0.0;
  double R = 0.0;
  double nugget = 0.0;
};

/// (t, R) history monitored by the termination test. Temperatures must be
/// strictly increasing and R non-negative.
struct ErrorTrace {
  std::vector<TraceEntry> entries;
  std::size_t window = 5;

  void push(TraceEntry e);
  std::size_t size() const { return entries.size(); }
};

/// Memoised integrand. Points are keyed on the bit patterns of their
/// coordinates; insertion order is kept so the cached design can be replayed.
class EvalCache {
 public:
  explicit EvalCache(Integrand f) : f_(std::move(f)) {}

  double operator()(const Vector& x);
  bool contains(const Vector& x) const;

  /// Number of distinct points evaluated so far (= number of misses).
  std::size_t size() const { return values_.size(); }
  std::size_t hits() const { return hits_; }
  Matrix points() const;
  Vector values() const;

 private:
  struct KeyHash {
    std::size_t operator()(const std::vector<std::uint64_t>& k) const noexcept;
  };
  static std::vector<std::uint64_t> key(const Vector& x);

  Integrand f_;
  std::unordered_map<std::vector<std::uint64_t>, std::size_t, KeyHash> index_;
  std::vector<Vector> points_;
  std::vector<double> values_;
  std::size_t hits_ = 0;
};

struct CritResult {
  double R = 0.0;
  double max_nugget = 0.0;
};

/// Bootstrap estimate of the RMSE proxy: R^2 is the average of e_n^2 over
/// `M` size-n subsets drawn without replacement from the unique rows of
/// `states`. Weights of the particle system play no role.
CritResult crit(const KernelHandle& kernel, const Matrix& states, std::size_t n, std::size_t M,
                Rng& rng, const NuggetPolicy& policy = {});

/// Same, for points already deduplicated and prepared by `kernel`.
CritResult crit_prepared(const KernelHandle& kernel, const PreparedPoints& unique_states,
                         std::size_t n, std::size_t M, Rng& rng, const NuggetPolicy& policy = {});

enum class TrendDecision { kContinue, kTerminate };

/// Least-squares slope of R against t over the last `trace.window` entries;
/// terminate when it is positive. Fewer entries than the window: continue.
TrendDecision trend_test(const ErrorTrace& trace);

/// Search box for lengthscales. With `isotropic` a single lengthscale is
/// shared by all coordinates; otherwise each coordinate is fitted in turn.
struct LengthscaleBox {
  double lower = 0.05;
  double upper = 5.0;
  bool isotropic = true;

  void validate() const;
};

struct KernelFitOptions {
  int grid_points = 17;       // coarse log-spaced grid per coordinate
  int golden_iterations = 40;
  int coordinate_sweeps = 3;  // anisotropic only
};

struct KernelFit {
  Vector lengthscales;
  double objective = 0.0;
  bool degenerate_integrand = false;  // f == 0: only log|K| was minimised
  int evaluations = 0;
};

/// f'(K + lambda I)^{-1} f + log|K + lambda I| for the kernel's lengthscales.
/// Returns +inf when the Gram matrix cannot be factorised.
double marginal_likelihood_objective(const KernelHandle& kernel, const PreparedPoints& points,
                                     const Vector& f, const NuggetPolicy& policy = {});

/// Minimises the objective above over `box` in log-lengthscale coordinates:
/// coarse grid, then golden-section refinement around the best grid cell.
KernelFit kern_param_fit(const KernelHandle& family, const Matrix& points, const Vector& f,
                         const LengthscaleBox& box, const NuggetPolicy& policy = {},
                         const KernelFitOptions& options = {});

struct CritKlResult {
  double S = 0.0;
  double R = 0.0;
  double interpolant_norm = 0.0;  // sqrt(f' K^{-1} f) on the design
  double max_nugget = 0.0;
};

/// R from crit() multiplied by the RKHS norm of the interpolant of f on
/// `design` (f looked up through `cache`).
CritKlResult crit_kl(EvalCache& cache, const KernelHandle& kernel, const Matrix& states,
                     const Matrix& design, std::size_t n, std::size_t M, Rng& rng,
                     const NuggetPolicy& policy = {});

struct RunReport {
  double estimate = 0.0;
  double t_star = 0.0;
  std::size_t n_quadrature_points = 0;
  std::size_t total_f_evals = 0;
  ErrorTrace trace;
  std::uint64_t seed = 0;
  std::optional<Vector> kernel_params_final;
  double nugget_used = 0.0;
  bool terminated_by_test = false;
};

/// Reference distribution, tempered path and integrand for a driver run.
struct SmcKqProblem {
  Integrand f;
  TemperedTarget target;
  std::function<Vector(Rng&)> sample_reference;
};

struct SmcKqConfig {
  std::size_t n = 75;
  std::size_t N = 300;
  std::size_t M_boot = 20;
  double rho = 0.95;
  double delta = 0.1;
  ProposalPolicy proposal;
  NuggetPolicy nugget;
  // SMC-KQ-KL only.
  LengthscaleBox lengthscale_box;
  KernelFitOptions fit_options;
  int refit_every = 1;

  void validate() const;
};

/// SMC-KQ: climb the tempered ladder tracking R, stop when the trend test
/// fires (or at t = 1), then evaluate f on n unique states of the particle
/// set with the smallest R among the last window entries.
RunReport smc_kq(const SmcKqProblem& problem, const KernelHandle& kernel, const SmcKqConfig& config,
                 std::uint64_t seed);

/// SMC-KQ-KL: as smc_kq, but lengthscales are refitted at each temperature on
/// a fresh size-n subset, the monitored statistic is crit_kl's S, and the
/// final rule uses every cached evaluation.
RunReport smc_kq_kl(const SmcKqProblem& problem, const KernelHandle& family,
                    const SmcKqConfig& config, std::uint64_t seed);

}  // namespace smckq
