#include "smckq/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "smckq/error.hpp"
#include "smckq/quadrature.hpp"

namespace smckq {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

std::size_t line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find("\"" + key + "\"");
  return pos == std::string::npos ? 1 : line_of_offset(text, pos);
}

[[noreturn]] void config_error(std::size_t line, const std::string& msg) {
  throw Error(ErrorCode::kConfig, "line " + std::to_string(line) + ": " + msg);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::optional<Experiment> experiment_from(const std::string& s) {
  static const std::map<std::string, Experiment> names{
      {"toy-sweep", Experiment::kToySweep},        {"toy-smckq", Experiment::kToySmcKq},
      {"toy-smckq-kl", Experiment::kToySmcKqKl},   {"ode", Experiment::kOde},
      {"bach-diagnostic", Experiment::kBachDiagnostic},
      {"halton-compare", Experiment::kHaltonCompare}, {"sbq-demo", Experiment::kSbqDemo}};
  if (auto it = names.find(s); it != names.end()) return it->second;
  return std::nullopt;
}

ProposalPolicy::Kind proposal_from(const std::string& s) {
  if (s == "adaptive-gaussian-independence") return ProposalPolicy::Kind::kAdaptiveGaussianIndependence;
  if (s == "random-walk-gaussian") return ProposalPolicy::Kind::kRandomWalkGaussian;
  if (s == "adaptive-lognormal-independence") return ProposalPolicy::Kind::kAdaptiveLognormalIndependence;
  throw Error(ErrorCode::kConfig, "unknown proposal '" + s + "'");
}

using Setter = std::function<void(RunConfig&, const json&)>;

template <typename T>
Setter set(T RunConfig::*field) {
  return [field](RunConfig& c, const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw std::invalid_argument("expected a string");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned())
          throw std::invalid_argument("expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
    } else {
      if (!v.is_array()) throw std::invalid_argument("expected an array");
    }
    c.*field = v.get<T>();
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"experiment",
       [](RunConfig& c, const json& v) {
         if (!v.is_string()) throw std::invalid_argument("expected a string");
         const auto e = experiment_from(v.get<std::string>());
         if (!e) throw std::invalid_argument("unknown experiment '" + v.get<std::string>() + "'");
         c.experiment = *e;
       }},
      {"seed", set(&RunConfig::seed)},
      {"replicates", set(&RunConfig::replicates)},
      {"threads", set(&RunConfig::threads)},
      {"output", set(&RunConfig::output_dir)},
      {"output.wall_time", set(&RunConfig::record_wall_time)},
      {"toy.d", set(&RunConfig::toy_d)},
      {"toy.frequency", set(&RunConfig::toy_frequency)},
      {"toy.sigmas", set(&RunConfig::toy_sigmas)},
      {"toy.ns", set(&RunConfig::toy_ns)},
      {"toy.ref_std", set(&RunConfig::toy_ref_std)},
      {"toy.mc_baseline", set(&RunConfig::toy_mc_baseline)},
      {"kernel.lengthscale", set(&RunConfig::lengthscale)},
      {"kernel.fit_lower", set(&RunConfig::fit_lower)},
      {"kernel.fit_upper", set(&RunConfig::fit_upper)},
      {"kernel.isotropic", set(&RunConfig::fit_isotropic)},
      {"nugget.initial_jitter",
       [](RunConfig& c, const json& v) {
         if (!v.is_number()) throw std::invalid_argument("expected a number");
         c.nugget.initial_jitter = v.get<double>();
       }},
      {"nugget.growth",
       [](RunConfig& c, const json& v) {
         if (!v.is_number()) throw std::invalid_argument("expected a number");
         c.nugget.growth = v.get<double>();
       }},
      {"nugget.max_attempts",
       [](RunConfig& c, const json& v) {
         if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
         c.nugget.max_attempts = v.get<int>();
       }},
      {"nugget.scale_by_trace",
       [](RunConfig& c, const json& v) {
         if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
         c.nugget.scale_by_trace = v.get<bool>();
       }},
      {"method.n", set(&RunConfig::n)},
      {"method.N", set(&RunConfig::N)},
      {"method.M_boot", set(&RunConfig::M_boot)},
      {"method.rho", set(&RunConfig::rho)},
      {"method.delta", set(&RunConfig::delta)},
      {"method.proposal", set(&RunConfig::proposal)},
      {"method.rw_scale", set(&RunConfig::rw_scale)},
      {"method.sweeps", set(&RunConfig::sweeps)},
      {"method.refit_every", set(&RunConfig::refit_every)},
      {"ode.noise_std", set(&RunConfig::ode_noise_std)},
      {"ode.theta", set(&RunConfig::ode_theta)},
      {"ode.n_times", set(&RunConfig::ode_n_times)},
      {"ode.t_max", set(&RunConfig::ode_t_max)},
      {"ode.horizon", set(&RunConfig::ode_horizon)},
      {"ode.prior_scale", set(&RunConfig::ode_prior_scale)},
      {"ode.prior_location", set(&RunConfig::ode_prior_location)},
      {"ode.data_seed", set(&RunConfig::ode_data_seed)},
      {"ode.box_upper", set(&RunConfig::ode_box_upper)},
      {"ode.lengthscale", set(&RunConfig::ode_lengthscale)},
      {"ode.benchmark_file", set(&RunConfig::ode_benchmark_file)},
      {"ode.chain_length", set(&RunConfig::ode_chain_length)},
      {"ode.burn_in", set(&RunConfig::ode_burn_in)},
      {"ode.step", set(&RunConfig::ode_step)},
      {"ode.kq_chain_length", set(&RunConfig::ode_kq_chain_length)},
      {"ode.kq_burn_in", set(&RunConfig::ode_kq_burn_in)},
      {"bach.lambda", set(&RunConfig::bach_lambda)},
      {"bach.truncation", set(&RunConfig::bach_truncation)},
      {"grid.points", set(&RunConfig::grid_points)},
      {"grid.lower", set(&RunConfig::grid_lower)},
      {"grid.upper", set(&RunConfig::grid_upper)},
      {"sbq.lengthscales", set(&RunConfig::sbq_lengthscales)},
      {"sbq.n", set(&RunConfig::sbq_n)},
      {"sbq.seed_point", set(&RunConfig::sbq_seed_point)},
  };
  return table;
}

Matrix gaussian_draws(std::size_t n, int d, double std, Rng& rng) {
  Matrix x(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = std * rng.normal();
  return x;
}

Vector evaluate(const std::function<double(const Vector&)>& f, const Matrix& x) {
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = f(x.row(i).transpose());
  return out;
}

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  std::optional<double> elapsed_ms() const {
    if (!enabled_) return std::nullopt;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

struct RowBuilder {
  const RunConfig& config;
  std::size_t replicate;
  std::uint64_t seed;

  ResultRow make(std::string method, std::size_t n, double estimate, std::optional<double> truth,
                 std::size_t f_evals, double nugget, std::optional<double> wall,
                 std::optional<double> t_star = std::nullopt) const {
    ResultRow r;
    r.experiment = std::string(to_string(config.experiment));
    r.replicate = replicate;
    r.method = std::move(method);
    r.n = n;
    r.estimate = estimate;
    if (truth) r.abs_error = std::abs(estimate - *truth);
    r.t_star = t_star;
    r.total_f_evals = f_evals;
    r.nugget_used = nugget;
    r.wall_time_ms = wall;
    r.seed = seed;
    return r;
  }
};

KernelHandle toy_kernel(const RunConfig& c, double lengthscale) {
  return KernelHandle::gaussian(GaussianKernelParams::isotropic(c.toy_d, lengthscale),
                                GaussianMeasure::standard(c.toy_d));
}

SmcKqProblem toy_smc_problem(const RunConfig& c) {
  const ToyProblem toy = c.toy_problem();
  const GaussianMeasure ref = GaussianMeasure::isotropic(c.toy_d, 0.0, c.toy_ref_std);
  return SmcKqProblem{[toy](const Vector& x) { return toy_integrand(toy, x); },
                      toy_tempered_target(c.toy_d, c.toy_ref_std),
                      [ref](Rng& rng) { return ref.sample(rng); }};
}

void run_toy_sweep(const RunConfig& c, const RowBuilder& rb, Rng& rng, ReplicateOutput& out) {
  const ToyProblem toy = c.toy_problem();
  auto f = [&toy](const Vector& x) { return toy_integrand(toy, x); };
  const KernelHandle kernel = toy_kernel(c, c.toy_lengthscale());
  const std::uint64_t base = rng();
  std::uint64_t cell = 0;
  for (std::size_t n : c.toy_ns) {
    if (c.toy_mc_baseline) {
      Rng r(Rng::derive_seed(base, cell++));
      Stopwatch sw(c.record_wall_time);
      const Vector fx = evaluate(f, gaussian_draws(n, c.toy_d, 1.0, r));
      const double est = mc_estimate(std::span<const double>(fx.data(), n));
      out.rows.push_back(rb.make("MC", n, est, 1.0, n, 0.0, sw.elapsed_ms()));
    }
    for (double sigma : c.toy_sigmas) {
      Rng r(Rng::derive_seed(base, cell++));
      Stopwatch sw(c.record_wall_time);
      const Matrix x = gaussian_draws(n, c.toy_d, sigma, r);
      const QuadratureRule rule = kq_fit(kernel, PointSet::from_rows(x), c.nugget);
      const double est = kq_estimate(rule, evaluate(f, x));
      out.rows.push_back(rb.make("KQ[sigma=" + short_fmt(sigma) + "]", n, est, 1.0, n,
                                 rule.nugget_used, sw.elapsed_ms()));
    }
  }
}

void run_toy_smckq(const RunConfig& c, const RowBuilder& rb, Rng& rng, ReplicateOutput& out,
                   bool kernel_learning) {
  const ToyProblem toy = c.toy_problem();
  auto f = [&toy](const Vector& x) { return toy_integrand(toy, x); };
  const KernelHandle kernel = toy_kernel(c, c.toy_lengthscale());
  const std::uint64_t base = rng();
  const std::size_t n = c.n;

  {
    Rng r(Rng::derive_seed(base, 0));
    Stopwatch sw(c.record_wall_time);
    const Vector fx = evaluate(f, gaussian_draws(n, c.toy_d, 1.0, r));
    out.rows.push_back(rb.make("MC", n, mc_estimate(std::span<const double>(fx.data(), n)), 1.0, n,
                               0.0, sw.elapsed_ms()));
  }
  Rng r(Rng::derive_seed(base, 1));
  const Matrix x = gaussian_draws(n, c.toy_d, 1.0, r);
  const Vector fx = evaluate(f, x);
  {
    Stopwatch sw(c.record_wall_time);
    const QuadratureRule rule = kq_fit(kernel, PointSet::from_rows(x), c.nugget);
    out.rows.push_back(
        rb.make("KQ", n, kq_estimate(rule, fx), 1.0, n, rule.nugget_used, sw.elapsed_ms()));
  }

  const SmcKqConfig cfg = c.smc_config();
  const SmcKqProblem problem = toy_smc_problem(c);
  if (!kernel_learning) {
    Stopwatch sw(c.record_wall_time);
    const RunReport rep = smc_kq(problem, kernel, cfg, Rng::derive_seed(base, 2));
    out.rows.push_back(rb.make("SMC-KQ", n, rep.estimate, 1.0, rep.total_f_evals, rep.nugget_used,
                               sw.elapsed_ms(), rep.t_star));
    out.trace = rep.trace.entries;
    return;
  }

  {
    Stopwatch sw(c.record_wall_time);
    const KernelFit fit =
        kern_param_fit(kernel, x, fx, cfg.lengthscale_box, c.nugget, cfg.fit_options);
    const QuadratureRule rule =
        kq_fit(kernel.with_lengthscales(fit.lengthscales), PointSet::from_rows(x), c.nugget);
    out.rows.push_back(
        rb.make("KQ-KL", n, kq_estimate(rule, fx), 1.0, n, rule.nugget_used, sw.elapsed_ms()));
  }
  Stopwatch sw(c.record_wall_time);
  const RunReport rep = smc_kq_kl(problem, kernel, cfg, Rng::derive_seed(base, 2));
  out.rows.push_back(rb.make("SMC-KQ-KL", n, rep.estimate, 1.0, rep.total_f_evals, rep.nugget_used,
                             sw.elapsed_ms(), rep.t_star));
  out.trace = rep.trace.entries;
}

void run_halton_compare(const RunConfig& c, const RowBuilder& rb, Rng& rng, ReplicateOutput& out) {
  const ToyProblem toy = c.toy_problem();
  auto f = [&toy](const Vector& x) { return toy_integrand(toy, x); };
  const KernelHandle kernel = toy_kernel(c, c.toy_lengthscale());
  const std::uint64_t base = rng();
  std::uint64_t cell = 0;
  for (std::size_t n : c.toy_ns) {
    const Matrix u = halton_points(n, static_cast<std::size_t>(c.toy_d));
    for (double sigma : c.toy_sigmas) {
      Rng r(Rng::derive_seed(base, cell++));
      {
        Stopwatch sw(c.record_wall_time);
        const Matrix x = gaussian_draws(n, c.toy_d, sigma, r);
        const QuadratureRule rule = kq_fit(kernel, PointSet::from_rows(x), c.nugget);
        out.rows.push_back(rb.make("KQ[sigma=" + short_fmt(sigma) + "]", n,
                                   kq_estimate(rule, evaluate(f, x)), 1.0, n, rule.nugget_used,
                                   sw.elapsed_ms()));
      }
      Stopwatch sw(c.record_wall_time);
      Matrix x = u.unaryExpr([sigma](double v) { return sigma * gaussian_inverse_cdf(v); });
      const QuadratureRule rule = kq_fit(kernel, PointSet::from_rows(x), c.nugget);
      out.rows.push_back(rb.make("KQ-Halton[sigma=" + short_fmt(sigma) + "]", n,
                                 kq_estimate(rule, evaluate(f, x)), 1.0, n, rule.nugget_used,
                                 sw.elapsed_ms()));
    }
  }
}

Matrix uniform_grid(const RunConfig& c) {
  Matrix g(static_cast<Eigen::Index>(c.grid_points), 1);
  g.col(0) = Vector::LinSpaced(static_cast<Eigen::Index>(c.grid_points), c.grid_lower, c.grid_upper);
  return g;
}

void run_sbq_demo(const RunConfig& c, const RowBuilder& rb, ReplicateOutput& out) {
  ToyProblem toy = c.toy_problem();
  toy.d = 1;
  auto f = [&toy](const Vector& x) { return toy_integrand(toy, x); };
  const PointSet grid = PointSet::from_rows(uniform_grid(c));
  for (double ell : c.sbq_lengthscales) {
    Stopwatch sw(c.record_wall_time);
    const KernelHandle kernel =
        KernelHandle::gaussian(GaussianKernelParams::isotropic(1, ell), GaussianMeasure::standard(1));
    const PointSet pts =
        sbq_greedy_select(kernel, grid, c.sbq_n, Vector::Constant(1, c.sbq_seed_point), c.nugget);
    const QuadratureRule rule = kq_fit(kernel, pts, c.nugget);
    out.rows.push_back(rb.make("SBQ[ell=" + short_fmt(ell) + "]", c.sbq_n,
                               kq_estimate(rule, evaluate(f, pts.matrix())), 1.0, c.sbq_n,
                               rule.nugget_used, sw.elapsed_ms()));
  }
}

KernelHandle ode_kernel(const RunConfig& c, const ODEProblem& p) {
  return KernelHandle::stein(SteinKernelSpec{GaussianKernelParams::isotropic(4, c.ode_lengthscale),
                                             [p](const Vector& th) { return ode_score(p, th); }});
}

SmcKqProblem ode_smc_problem(const RunConfig& c, const ODEProblem& p) {
  const double upper = c.ode_box_upper;
  const double log_ref = -4.0 * std::log(upper);
  Box box{Vector::Zero(4), Vector::Constant(4, upper)};
  TemperedTarget target{[log_ref](const Vector&) { return log_ref; },
                        [p](const Vector& th) { return ode_log_posterior(p, th); }, box};
  return SmcKqProblem{[p](const Vector& th) { return ode_integrand(p, th); }, std::move(target),
                      [upper](Rng& rng) {
                        Vector x(4);
                        for (Eigen::Index j = 0; j < 4; ++j) x(j) = upper * rng.uniform_open();
                        return x;
                      }};
}

void run_ode(const RunConfig& c, const ExperimentContext& ctx, const RowBuilder& rb, Rng& rng,
             ReplicateOutput& out) {
  const ODEProblem& p = *ctx.ode;
  const KernelHandle kernel = ode_kernel(c, p);
  auto f = [&p](const Vector& th) { return ode_integrand(p, th); };
  const std::uint64_t base = rng();
  const std::size_t n = c.n;
  {
    Stopwatch sw(c.record_wall_time);
    Rng proposals(Rng::derive_seed(base, 0));
    Rng uniforms(Rng::derive_seed(base, 1));
    const MhChain chain =
        ode_log_space_chain(p, p.theta_true, c.ode_kq_chain_length, c.ode_step, proposals,
                            [&uniforms] { return uniforms.uniform_open(); });
    const Matrix kept = chain.samples.bottomRows(
        static_cast<Eigen::Index>(c.ode_kq_chain_length - c.ode_kq_burn_in));
    const PointSet unique = dedupe(kept);
    require(static_cast<std::size_t>(unique.size()) >= n, ErrorCode::kInsufficientUniqueStates,
            "posterior chain has fewer unique states than n");
    Rng pick(Rng::derive_seed(base, 2));
    const auto rows = pick.sample_without_replacement(static_cast<std::size_t>(unique.size()), n);
    Matrix x(static_cast<Eigen::Index>(n), 4);
    for (std::size_t i = 0; i < n; ++i)
      x.row(static_cast<Eigen::Index>(i)) = unique.matrix().row(static_cast<Eigen::Index>(rows[i]));
    const QuadratureRule rule = kq_fit(kernel, PointSet::from_rows(x), c.nugget);
    out.rows.push_back(rb.make("KQ", n, kq_estimate(rule, evaluate(f, x)), ctx.ode_truth, n,
                               rule.nugget_used, sw.elapsed_ms()));
  }
  Stopwatch sw(c.record_wall_time);
  const RunReport rep =
      smc_kq(ode_smc_problem(c, p), kernel, c.smc_config(), Rng::derive_seed(base, 3));
  out.rows.push_back(rb.make("SMC-KQ", n, rep.estimate, ctx.ode_truth, rep.total_f_evals,
                             rep.nugget_used, sw.elapsed_ms(), rep.t_star));
  out.trace = rep.trace.entries;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  os << content;
  os.flush();
  require(static_cast<bool>(os), ErrorCode::kIo, "failed writing '" + path.string() + "'");
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

ordered_json summarise(const RunConfig& config, const std::vector<ResultRow>& rows) {
  ordered_json cells = ordered_json::array();
  std::vector<std::pair<std::string, std::size_t>> order;
  std::map<std::pair<std::string, std::size_t>, std::vector<ResultRow>> groups;
  for (const auto& r : rows) {
    const auto key = std::pair{r.method, r.n};
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(r);
  }
  for (const auto& key : order) {
    const auto& g = groups[key];
    ordered_json cell;
    cell["method"] = key.first;
    cell["n"] = key.second;
    cell["count"] = g.size();
    double evals = 0.0;
    for (const auto& r : g) evals += static_cast<double>(r.total_f_evals);
    cell["mean_total_f_evals"] = evals / static_cast<double>(g.size());
    const bool have_truth = std::all_of(g.begin(), g.end(), [](const ResultRow& r) { return r.abs_error.has_value(); });
    if (have_truth) {
      std::vector<double> errs;
      for (const auto& r : g) errs.push_back(*r.abs_error);
      cell["rmse"] = rmse_aggregate(g);
      cell["abs_error_q10"] = quantile(errs, 0.1);
      cell["abs_error_q50"] = quantile(errs, 0.5);
      cell["abs_error_q90"] = quantile(errs, 0.9);
    }
    std::vector<double> ts;
    for (const auto& r : g)
      if (r.t_star) ts.push_back(*r.t_star);
    if (!ts.empty()) cell["t_star_q50"] = quantile(ts, 0.5);
    cells.push_back(cell);
  }
  ordered_json s;
  s["experiment"] = std::string(to_string(config.experiment));
  s["seed"] = config.seed;
  s["replicates"] = config.replicates;
  s["cells"] = cells;
  return s;
}

void run_bach(const RunConfig& c) {
  const BachDiagnostic diag{c.bach_lambda, c.bach_truncation};
  const Matrix grid = uniform_grid(c);
  std::string csv = "x,density\n";
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    const double x = grid(i, 0);
    csv += fmt(x) + "," + fmt(bach_density_truncated(diag, x)) + "\n";
  }
  const std::filesystem::path dir(c.output_dir);
  write_file(dir / "bach_density.csv", csv);
  ordered_json s;
  s["experiment"] = "bach-diagnostic";
  s["lambda"] = c.bach_lambda;
  s["truncation"] = c.bach_truncation;
  s["grid_points"] = c.grid_points;
  write_file(dir / "summary.json", s.dump(2) + "\n");
}

std::string benchmark_path(const RunConfig& c) {
  if (!c.ode_benchmark_file.empty()) return c.ode_benchmark_file;
  return (std::filesystem::path(c.output_dir) / "ode_benchmark.json").string();
}

ordered_json ode_fingerprint(const RunConfig& c) {
  ordered_json j;
  j["noise_std"] = c.ode_noise_std;
  j["theta"] = c.ode_theta;
  j["n_times"] = c.ode_n_times;
  j["t_max"] = c.ode_t_max;
  j["horizon"] = c.ode_horizon;
  j["prior_scale"] = c.ode_prior_scale;
  j["prior_location"] = c.ode_prior_location;
  j["data_seed"] = c.ode_data_seed;
  return j;
}

}  // namespace

std::string_view to_string(Experiment e) noexcept {
  switch (e) {
    case Experiment::kToySweep: return "toy-sweep";
    case Experiment::kToySmcKq: return "toy-smckq";
    case Experiment::kToySmcKqKl: return "toy-smckq-kl";
    case Experiment::kOde: return "ode";
    case Experiment::kBachDiagnostic: return "bach-diagnostic";
    case Experiment::kHaltonCompare: return "halton-compare";
    case Experiment::kSbqDemo: return "sbq-demo";
  }
  return "unknown";
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorCode::kConfig, msg);
  };
  check(replicates >= 1, "replicates must be >= 1");
  check(threads >= 1, "threads must be >= 1");
  check(toy_d >= 1 && toy_d <= 8, "toy.d must lie in [1, 8]");
  check(toy_frequency > 0.0, "toy.frequency must be > 0");
  check(!toy_ns.empty() && std::all_of(toy_ns.begin(), toy_ns.end(), [](std::size_t v) { return v >= 1; }),
        "toy.ns must be a non-empty list of positive integers");
  check(!toy_sigmas.empty() && std::all_of(toy_sigmas.begin(), toy_sigmas.end(), [](double v) { return v > 0.0; }),
        "toy.sigmas must be a non-empty list of positive numbers");
  check(toy_ref_std > 0.0, "toy.ref_std must be > 0");
  check(lengthscale >= 0.0, "kernel.lengthscale must be >= 0");
  check(fit_lower > 0.0 && fit_upper >= fit_lower, "kernel.fit_lower/fit_upper must satisfy 0 < lower <= upper");
  check(n >= 1, "method.n must be >= 1");
  check(N >= 2 * n, "method.N must be >= 2 * method.n");
  check(M_boot >= 1, "method.M_boot must be >= 1");
  check(rho > 0.0 && rho < 1.0, "method.rho must lie in (0, 1)");
  check(delta > 0.0, "method.delta must be > 0");
  check(rw_scale > 0.0, "method.rw_scale must be > 0");
  check(sweeps >= 1, "method.sweeps must be >= 1");
  check(refit_every >= 1, "method.refit_every must be >= 1");
  if (!proposal.empty()) {
    try {
      proposal_from(proposal);
    } catch (const Error&) {
      check(false, "method.proposal: unknown proposal '" + proposal + "'");
    }
  }
  check(nugget.growth > 1.0 && nugget.max_attempts >= 1 && nugget.initial_jitter >= 0.0,
        "nugget policy needs growth > 1, max_attempts >= 1, initial_jitter >= 0");
  check(ode_theta.size() == 4, "ode.theta must have 4 entries");
  check(ode_noise_std > 0.0, "ode.noise_std must be > 0");
  check(ode_n_times >= 1, "ode.n_times must be >= 1");
  check(ode_t_max > 0.0 && ode_horizon > 0.0, "ode.t_max and ode.horizon must be > 0");
  check(ode_prior_scale > 0.0, "ode.prior_scale must be > 0");
  check(ode_box_upper > 0.0, "ode.box_upper must be > 0");
  check(ode_lengthscale > 0.0, "ode.lengthscale must be > 0");
  check(ode_chain_length > ode_burn_in, "ode.chain_length must exceed ode.burn_in");
  check(ode_kq_chain_length > ode_kq_burn_in, "ode.kq_chain_length must exceed ode.kq_burn_in");
  check(ode_step > 0.0, "ode.step must be > 0");
  check(bach_lambda > 0.0, "bach.lambda must be > 0");
  check(bach_truncation >= 1 && bach_truncation <= 120, "bach.truncation must lie in [1, 120]");
  check(grid_points >= 2 && grid_upper > grid_lower, "grid needs >= 2 points and upper > lower");
  check(!sbq_lengthscales.empty() && std::all_of(sbq_lengthscales.begin(), sbq_lengthscales.end(), [](double v) { return v > 0.0; }),
        "sbq.lengthscales must be positive");
  check(sbq_n >= 1 && sbq_n <= grid_points + 1, "sbq.n must lie in [1, grid.points + 1]");
}

SmcKqConfig RunConfig::smc_config() const {
  SmcKqConfig s;
  s.n = n;
  s.N = N;
  s.M_boot = M_boot;
  s.rho = rho;
  s.delta = delta;
  s.nugget = nugget;
  s.refit_every = refit_every;
  s.lengthscale_box = LengthscaleBox{fit_lower, fit_upper, fit_isotropic};
  s.proposal.rw_scale = rw_scale;
  s.proposal.sweeps = sweeps;
  if (!proposal.empty()) {
    s.proposal.kind = proposal_from(proposal);
  } else if (experiment == Experiment::kOde) {
    s.proposal.kind = ProposalPolicy::Kind::kAdaptiveLognormalIndependence;
  } else {
    s.proposal.kind = ProposalPolicy::Kind::kAdaptiveGaussianIndependence;
  }
  return s;
}

ToyProblem RunConfig::toy_problem() const {
  ToyProblem p;
  p.d = toy_d;
  p.frequency = toy_frequency;
  p.kernel_lengthscale = toy_lengthscale();
  p.validate();
  return p;
}

double RunConfig::toy_lengthscale() const {
  if (lengthscale > 0.0) return lengthscale;
  constexpr double pi = std::numbers::pi;
  if (std::abs(toy_frequency - 8.0 * pi) < 1e-9) return 0.15;
  if (toy_d > 1 || std::abs(toy_frequency - 4.0 * pi) < 1e-9) return 0.25;
  return 1.0;
}

ODEProblem RunConfig::ode_problem() const {
  ODEProblem p;
  p.theta_true = Eigen::Map<const Vector>(ode_theta.data(), 4);
  p.noise_std = ode_noise_std;
  p.times = Vector::LinSpaced(static_cast<Eigen::Index>(ode_n_times), 0.0, ode_t_max);
  p.horizon = ode_horizon;
  p.prior_location = ode_prior_location;
  p.prior_scale = ode_prior_scale;
  Rng rng(ode_data_seed);
  p.observations = generate_ode_data(p, rng);
  p.validate();
  return p;
}

RunConfig parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    config_error(line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1),
                 std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) config_error(1, "config must be a JSON object");
  RunConfig c;
  bool have_experiment = false;
  for (const auto& [key, value] : doc.items()) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) config_error(line_of_key(text, key), "unknown key '" + key + "'");
    try {
      it->second(c, value);
    } catch (const std::exception& e) {
      config_error(line_of_key(text, key), "key '" + key + "': " + e.what());
    }
    have_experiment = have_experiment || key == "experiment";
  }
  if (!have_experiment) config_error(1, "missing required key 'experiment'");
  try {
    c.validate();
  } catch (const Error& e) {
    // Point at the offending key when the message names one.
    std::size_t line = 1;
    const std::string msg = e.what();
    for (const auto& [key, _] : setters()) {
      if (msg.find(key + " ") != std::string::npos || msg.find(key + "/") != std::string::npos ||
          msg.find(key + ":") != std::string::npos) {
        if (doc.contains(key)) line = line_of_key(text, key);
      }
    }
    config_error(line, msg.substr(msg.find(": ") + 2));
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kConfig, "line 0: cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string results_csv_header() {
  return "experiment,replicate,method,n,estimate,abs_error,t_star,total_f_evals,nugget_used,"
         "wall_time_ms,seed";
}

std::string to_csv_line(const ResultRow& r) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  std::ostringstream os;
  os << r.experiment << ',' << r.replicate << ',' << r.method << ',' << r.n << ','
     << fmt(r.estimate) << ',' << opt(r.abs_error) << ',' << opt(r.t_star) << ','
     << r.total_f_evals << ',' << fmt(r.nugget_used) << ',' << opt(r.wall_time_ms) << ','
     << r.seed;
  return os.str();
}

double rmse_aggregate(std::span<const ResultRow> rows) {
  require(!rows.empty(), ErrorCode::kInvalidArgument, "rmse_aggregate needs at least one row");
  double acc = 0.0;
  for (const auto& r : rows) {
    require(r.abs_error.has_value(), ErrorCode::kInvalidArgument,
            "rmse_aggregate: row without a known truth");
    acc += *r.abs_error * *r.abs_error;
  }
  return std::sqrt(acc / static_cast<double>(rows.size()));
}

std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate) {
  return Rng::derive_seed(seed, static_cast<std::uint64_t>(replicate));
}

ExperimentContext prepare_context(const RunConfig& config) {
  ExperimentContext ctx;
  if (config.experiment != Experiment::kOde) return ctx;
  ctx.ode = config.ode_problem();
  const std::string path = benchmark_path(config);
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::kIo,
          "ODE benchmark file '" + path + "' not found; create it with the benchmark subcommand");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIo, "cannot parse benchmark file '" + path + "': " + e.what());
  }
  require(j.contains("problem") && json(ode_fingerprint(config)) == j["problem"], ErrorCode::kConfig,
          "benchmark file '" + path + "' was produced for different ODE problem settings");
  ctx.ode_truth = j.at("mean").get<double>();
  return ctx;
}

ReplicateOutput run_replicate(const RunConfig& config, const ExperimentContext& context,
                              std::size_t replicate) {
  const std::uint64_t seed = replicate_seed(config.seed, replicate);
  Rng rng(seed);
  const RowBuilder rb{config, replicate, seed};
  ReplicateOutput out;
  switch (config.experiment) {
    case Experiment::kToySweep: run_toy_sweep(config, rb, rng, out); break;
    case Experiment::kToySmcKq: run_toy_smckq(config, rb, rng, out, false); break;
    case Experiment::kToySmcKqKl: run_toy_smckq(config, rb, rng, out, true); break;
    case Experiment::kOde: run_ode(config, context, rb, rng, out); break;
    case Experiment::kHaltonCompare: run_halton_compare(config, rb, rng, out); break;
    case Experiment::kSbqDemo: run_sbq_demo(config, rb, out); break;
    case Experiment::kBachDiagnostic: break;
  }
  return out;
}

void run(const RunConfig& config) {
  config.validate();
  const std::filesystem::path dir(config.output_dir.empty() ? "." : config.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create output directory '" + dir.string() + "'");
  RunConfig cfg = config;
  cfg.output_dir = dir.string();

  if (cfg.experiment == Experiment::kBachDiagnostic) {
    run_bach(cfg);
    return;
  }

  const ExperimentContext ctx = prepare_context(cfg);
  const std::size_t m = cfg.replicates;
  std::vector<std::optional<ReplicateOutput>> slots(m);
  std::exception_ptr failure;
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};

  auto worker = [&] {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= m || stop.load()) return;
      try {
        ReplicateOutput out = run_replicate(cfg, ctx, r);
        std::lock_guard<std::mutex> lock(mu);
        slots[r] = std::move(out);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
      cv.notify_all();
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_threads = std::min(cfg.threads, m);
  for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);

  std::ofstream csv(dir / "results.csv", std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(csv), ErrorCode::kIo, "cannot open results.csv for writing");
  csv << results_csv_header() << '\n';
  std::vector<ResultRow> all_rows;
  // Single writer: emit replicates strictly in index order as they complete.
  for (std::size_t r = 0; r < m; ++r) {
    ReplicateOutput out;
    {
      std::unique_lock<std::mutex> lock(mu);
      cv.wait(lock, [&] { return slots[r].has_value() || failure != nullptr; });
      if (!slots[r]) break;
      out = std::move(*slots[r]);
      slots[r].reset();
    }
    for (const auto& row : out.rows) {
      csv << to_csv_line(row) << '\n';
      all_rows.push_back(row);
    }
    if (!out.trace.empty()) {
      std::string t = "t,R,nugget\n";
      for (const auto& e : out.trace) t += fmt(e.t) + "," + fmt(e.R) + "," + fmt(e.nugget) + "\n";
      write_file(dir / ("trace_" + std::to_string(r) + ".csv"), t);
    }
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  csv.flush();
  require(static_cast<bool>(csv), ErrorCode::kIo, "failed writing results.csv");
  write_file(dir / "summary.json", summarise(cfg, all_rows).dump(2) + "\n");
}

void write_ode_benchmark(const RunConfig& config, const std::string& path) {
  config.validate();
  const ODEProblem p = config.ode_problem();
  BenchmarkOptions opt;
  opt.chain_length = config.ode_chain_length;
  opt.burn_in = config.ode_burn_in;
  opt.step = config.ode_step;
  Rng rng(Rng::derive_seed(config.seed, 0xBE7C4ULL));
  const BenchmarkResult b = posterior_benchmark(p, opt, rng);
  ordered_json j;
  j["mean"] = b.mean;
  j["std_error"] = b.std_error;
  j["acceptance_rate"] = b.acceptance_rate;
  j["acceptance_warning"] = b.acceptance_warning;
  j["samples"] = b.samples;
  j["chain_length"] = opt.chain_length;
  j["burn_in"] = opt.burn_in;
  j["step"] = opt.step;
  j["seed"] = config.seed;
  j["problem"] = ode_fingerprint(config);
  const std::filesystem::path out(path.empty() ? benchmark_path(config) : path);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  write_file(out, j.dump(2) + "\n");
}

}  // namespace smckq
