#pragma once

// Independent reference implementations used only by the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

namespace detail {

inline double simpson_step(const std::function<double(double)>& f, double a, double b, double fa,
                           double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

/// Adaptive Simpson quadrature on [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-13, int max_depth = 50) {
  // Split into panels first so narrow peaks are not missed by the first probe.
  constexpr int kPanels = 64;
  double acc = 0.0;
  const double h = (b - a) / kPanels;
  for (int i = 0; i < kPanels; ++i) {
    const double lo = a + i * h;
    const double hi = lo + h;
    const double flo = f(lo);
    const double fhi = f(hi);
    const double fm = f(0.5 * (lo + hi));
    const double whole = h / 6.0 * (flo + 4.0 * fm + fhi);
    acc += detail::simpson_step(f, lo, hi, flo, fm, fhi, whole, tol / kPanels, max_depth);
  }
  return acc;
}

inline double normal_pdf(double x, double mean, double std) {
  const double r = (x - mean) / std;
  return std::exp(-0.5 * r * r) / (std * std::sqrt(2.0 * std::numbers::pi));
}

/// erf by its Maclaurin series (|x| < 2) and erfc by a Lentz continued fraction otherwise.
inline double erfc_oracle(double x) {
  if (x < 0.0) return 2.0 - erfc_oracle(-x);
  if (x < 2.0) {
    double term = x;
    double sum = x;
    for (int k = 1; k < 200; ++k) {
      term *= -x * x / k;
      const double add = term / (2 * k + 1);
      sum += add;
      if (std::abs(add) < 1e-18 * std::abs(sum)) break;
    }
    return 1.0 - 2.0 / std::sqrt(std::numbers::pi) * sum;
  }
  // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
  const double tiny = 1e-300;
  double f = x;
  double c = x;
  double d = 0.0;
  for (int k = 1; k < 500; ++k) {
    const double a = 0.5 * k;
    d = x + a * d;
    d = std::abs(d) < tiny ? tiny : d;
    c = x + a / c;
    c = std::abs(c) < tiny ? tiny : c;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x * x) / std::sqrt(std::numbers::pi) / f;
}

inline double normal_cdf(double x) { return 0.5 * erfc_oracle(-x / std::numbers::sqrt2); }

/// Phi^{-1}(u) by bisection on the oracle CDF.
inline double normal_quantile(double u) {
  double lo = -40.0;
  double hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Dormand-Prince 5(4) integration of x'' = -c x - d x' from 0 to t_end.
inline double damped_oscillator_rk(double x0, double v0, double c, double d, double t_end,
                                   double tol = 1e-13) {
  auto rhs = [c, d](double x, double v, double& dx, double& dv) {
    dx = v;
    dv = -c * x - d * v;
  };
  static constexpr double a21 = 1.0 / 5, a31 = 3.0 / 40, a32 = 9.0 / 40, a41 = 44.0 / 45,
                          a42 = -56.0 / 15, a43 = 32.0 / 9, a51 = 19372.0 / 6561,
                          a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729,
                          a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656, b1 = 35.0 / 384,
                          b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                          b6 = 11.0 / 84, e1 = 71.0 / 57600, e3 = -71.0 / 16695,
                          e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                          e7 = -1.0 / 40;
  double t = 0.0;
  double x = x0;
  double v = v0;
  double h = 1e-3;
  while (t < t_end) {
    h = std::min(h, t_end - t);
    double k1x, k1v, k2x, k2v, k3x, k3v, k4x, k4v, k5x, k5v, k6x, k6v, k7x, k7v;
    rhs(x, v, k1x, k1v);
    rhs(x + h * a21 * k1x, v + h * a21 * k1v, k2x, k2v);
    rhs(x + h * (a31 * k1x + a32 * k2x), v + h * (a31 * k1v + a32 * k2v), k3x, k3v);
    rhs(x + h * (a41 * k1x + a42 * k2x + a43 * k3x), v + h * (a41 * k1v + a42 * k2v + a43 * k3v),
        k4x, k4v);
    rhs(x + h * (a51 * k1x + a52 * k2x + a53 * k3x + a54 * k4x),
        v + h * (a51 * k1v + a52 * k2v + a53 * k3v + a54 * k4v), k5x, k5v);
    rhs(x + h * (a61 * k1x + a62 * k2x + a63 * k3x + a64 * k4x + a65 * k5x),
        v + h * (a61 * k1v + a62 * k2v + a63 * k3v + a64 * k4v + a65 * k5v), k6x, k6v);
    const double nx = x + h * (b1 * k1x + b3 * k3x + b4 * k4x + b5 * k5x + b6 * k6x);
    const double nv = v + h * (b1 * k1v + b3 * k3v + b4 * k4v + b5 * k5v + b6 * k6v);
    rhs(nx, nv, k7x, k7v);
    const double ex = h * (e1 * k1x + e3 * k3x + e4 * k4x + e5 * k5x + e6 * k6x + e7 * k7x);
    const double ev = h * (e1 * k1v + e3 * k3v + e4 * k4v + e5 * k5v + e6 * k6v + e7 * k7v);
    const double err = std::max(std::abs(ex), std::abs(ev)) /
                       (tol * (1.0 + std::max(std::abs(x), std::abs(v))));
    if (err <= 1.0) {
      t += h;
      x = nx;
      v = nv;
    }
    h *= std::clamp(0.9 * std::pow(err == 0.0 ? 1e-10 : err, -0.2), 0.2, 5.0);
  }
  return x;
}

/// Two-sided one-sample Kolmogorov-Smirnov statistic against `cdf`.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

/// Asymptotic KS critical value at alpha = 0.01.
inline double ks_critical_001(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

/// Upper 1% point of chi-square with `df` degrees of freedom (Wilson-Hilferty).
inline double chi2_critical_001(int df) {
  const double k = df;
  const double z = 2.3263478740408408;
  const double a = 2.0 / (9.0 * k);
  return k * std::pow(1.0 - a + z * std::sqrt(a), 3);
}

/// All size-k subsets of {0..n-1} in lexicographic order.
inline std::vector<std::vector<std::size_t>> all_subsets(std::size_t n, std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  for (;;) {
    out.push_back(idx);
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

}  // namespace oracle
