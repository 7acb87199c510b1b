#include "smckq/quadrature.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <unordered_set>

#include "smckq/error.hpp"

namespace smckq {

namespace {

struct RowKey {
  std::vector<std::uint64_t> bits;
  bool operator==(const RowKey&) const = default;
};

struct RowKeyHash {
  std::size_t operator()(const RowKey& k) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : k.bits) h = (h ^ b) * 0x100000001b3ULL;
    return static_cast<std::size_t>(h);
  }
};

RowKey key_of(const Matrix& m, Eigen::Index row) {
  RowKey k;
  k.bits.reserve(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) k.bits.push_back(std::bit_cast<std::uint64_t>(m(row, j)));
  return k;
}

}  // namespace

std::vector<std::size_t> unique_row_indices(const Matrix& candidates) {
  std::unordered_set<RowKey, RowKeyHash> seen;
  std::vector<std::size_t> out;
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
    if (seen.insert(key_of(candidates, i)).second) out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

PointSet PointSet::from_rows(Matrix points) {
  require(points.rows() >= 1 && points.cols() >= 1, ErrorCode::kEmptyPointSet,
          "point set must contain at least one point");
  require(points.allFinite(), ErrorCode::kNonFinite, "point set has non-finite entries");
  require(unique_row_indices(points).size() == static_cast<std::size_t>(points.rows()),
          ErrorCode::kDuplicatePoints, "point set contains duplicate rows");
  return PointSet(std::move(points));
}

PointSet dedupe(const Matrix& candidates) {
  const auto idx = unique_row_indices(candidates);
  require(!idx.empty(), ErrorCode::kEmptyPointSet, "dedupe of an empty candidate set");
  Matrix out(static_cast<Eigen::Index>(idx.size()), candidates.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = candidates.row(static_cast<Eigen::Index>(idx[i]));
  }
  return PointSet::from_rows(std::move(out));
}

WorstCaseError worst_case_error(const Matrix& gram, const Vector& z, const Vector& w,
                                double e0_sq) {
  require(gram.rows() == w.size() && gram.cols() == w.size() && z.size() == w.size(),
          ErrorCode::kDimensionMismatch, "worst_case_error: inconsistent shapes");
  WorstCaseError out;
  out.raw_squared = w.size() == 0 ? e0_sq : w.dot(gram * w) - 2.0 * w.dot(z) + e0_sq;
  out.negative_roundoff = out.raw_squared < -1e-8;
  out.value = std::sqrt(std::max(0.0, out.raw_squared));
  return out;
}

QuadratureRule kq_fit(const KernelHandle& kernel, const PreparedPoints& points,
                      const NuggetPolicy& policy) {
  require(points.size() >= 1, ErrorCode::kEmptyPointSet, "kq_fit needs at least one point");
  const Matrix k = kernel.gram(points);
  const Vector z = kernel.embeddings(points);
  const GramFactor factor = factorize_gram(k, policy);

  QuadratureRule rule;
  rule.points = points.points;
  rule.weights = factor.solve(z);
  rule.embeddings = z;
  rule.nugget_used = factor.nugget;
  const auto wce = worst_case_error(k, z, rule.weights, kernel.double_integral());
  rule.worst_case_error = wce.value;
  rule.negative_roundoff = wce.negative_roundoff;
  return rule;
}

QuadratureRule kq_fit(const KernelHandle& kernel, const PointSet& points,
                      const NuggetPolicy& policy) {
  return kq_fit(kernel, kernel.prepare(points.matrix()), policy);
}

double kq_estimate(const QuadratureRule& rule, std::span<const double> f_values) {
  require(static_cast<Eigen::Index>(f_values.size()) == rule.size(), ErrorCode::kDimensionMismatch,
          "kq_estimate: f_values length differs from rule size");
  double acc = 0.0;
  for (std::size_t i = 0; i < f_values.size(); ++i) acc += rule.weights(static_cast<Eigen::Index>(i)) * f_values[i];
  return acc;
}

double kq_estimate(const QuadratureRule& rule, const Vector& f_values) {
  return kq_estimate(rule, std::span<const double>(f_values.data(), static_cast<std::size_t>(f_values.size())));
}

double mc_estimate(std::span<const double> f_values) {
  require(!f_values.empty(), ErrorCode::kEmptyPointSet, "mc_estimate needs n >= 1");
  return std::accumulate(f_values.begin(), f_values.end(), 0.0) / static_cast<double>(f_values.size());
}

PointSet sbq_greedy_select(const KernelHandle& kernel, const PointSet& candidate_grid,
                           std::size_t n, const Vector& seed_point, const NuggetPolicy& policy) {
  require(n >= 1, ErrorCode::kInvalidArgument, "sbq needs n >= 1");
  require(static_cast<Eigen::Index>(n) <= candidate_grid.size() + 1, ErrorCode::kInvalidArgument,
          "sbq: n exceeds the number of available points");
  require(seed_point.size() == candidate_grid.dim(), ErrorCode::kDimensionMismatch,
          "sbq: seed point dimension");

  const auto d = candidate_grid.dim();
  const PreparedPoints grid = kernel.prepare(candidate_grid.matrix());
  const PreparedPoints seed = kernel.prepare(seed_point.transpose());
  const double e0_sq = kernel.double_integral();

  // Selected points as indices into `grid`; -1 denotes the seed.
  std::vector<Eigen::Index> chosen{-1};
  std::vector<bool> used(static_cast<std::size_t>(grid.size()), false);
  for (Eigen::Index c = 0; c < grid.size(); ++c) {
    if (grid.points.row(c) == seed.points.row(0)) used[static_cast<std::size_t>(c)] = true;
  }

  auto assemble = [&](Eigen::Index extra) {
    PreparedPoints s;
    const auto m = static_cast<Eigen::Index>(chosen.size()) + 1;
    s.points.resize(m, d);
    s.scores.resize(grid.scores.cols() > 0 ? m : 0, grid.scores.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Index src = i + 1 < m ? chosen[static_cast<std::size_t>(i)] : extra;
      const PreparedPoints& from = src < 0 ? seed : grid;
      const Eigen::Index row = src < 0 ? 0 : src;
      s.points.row(i) = from.points.row(row);
      if (s.scores.cols() > 0) s.scores.row(i) = from.scores.row(row);
    }
    return s;
  };

  while (chosen.size() < n) {
    Eigen::Index best = -1;
    double best_err = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < grid.size(); ++c) {
      if (used[static_cast<std::size_t>(c)]) continue;
      const PreparedPoints s = assemble(c);
      try {
        const Matrix k = kernel.gram(s);
        const Vector z = kernel.embeddings(s);
        const GramFactor f = factorize_gram(k, policy);
        const double err = worst_case_error(k, z, f.solve(z), e0_sq).value;
        if (err < best_err) {
          best_err = err;
          best = c;
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kGramSingular) throw;
      }
    }
    require(best >= 0, ErrorCode::kGramSingular,
            "sbq: every remaining candidate produced a singular Gram matrix");
    chosen.push_back(best);
    used[static_cast<std::size_t>(best)] = true;
  }

  Matrix out(static_cast<Eigen::Index>(chosen.size()), d);
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        chosen[i] < 0 ? seed.points.row(0) : grid.points.row(chosen[i]);
  }
  return PointSet::from_rows(std::move(out));
}

double radical_inverse(std::uint64_t index, unsigned base) {
  double result = 0.0;
  double scale = 1.0 / base;
  while (index > 0) {
    result += static_cast<double>(index % base) * scale;
    index /= base;
    scale /= base;
  }
  return result;
}

Matrix halton_points(std::size_t n, std::size_t d) {
  static constexpr std::array<unsigned, 8> kPrimes{2, 3, 5, 7, 11, 13, 17, 19};
  require(n >= 1, ErrorCode::kInvalidArgument, "halton_points needs n >= 1");
  require(d >= 1 && d <= kPrimes.size(), ErrorCode::kInvalidArgument,
          "halton_points supports 1 <= d <= 8");
  Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = radical_inverse(i + 1, kPrimes[j]);
    }
  }
  return out;
}

namespace {

// Quantile for p <= 0.5: Acklam's rational approximation followed by one
// Halley step on the exact CDF written via erfc.
double lower_quantile(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double r = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - r / (1.0 + 0.5 * x * r);
}

}  // namespace

double gaussian_inverse_cdf(double u) {
  require(u > 0.0 && u < 1.0, ErrorCode::kInvalidArgument, "gaussian_inverse_cdf needs 0 < u < 1");
  if (u == 0.5) return 0.0;
  return u > 0.5 ? -lower_quantile(1.0 - u) : lower_quantile(u);
}

}  // namespace smckq
