#pragma once

#include <cstddef>
#include <span>

#include "smckq/kernel.hpp"
#include "smckq/linalg.hpp"

namespace smckq {

/// n x d point matrix with pairwise-distinct, finite rows (n >= 1).
class PointSet {
 public:
  /// Validates and wraps `points`; throws kDuplicatePoints on bitwise-equal
  /// rows, kEmptyPointSet on n == 0.
  static PointSet from_rows(Matrix points);

  const Matrix& matrix() const { return points_; }
  Eigen::Index size() const { return points_.rows(); }
  Eigen::Index dim() const { return points_.cols(); }
  Vector row(Eigen::Index i) const { return points_.row(i).transpose(); }

 private:
  explicit PointSet(Matrix points) : points_(std::move(points)) {}
  Matrix points_;
};

/// Unique rows of `candidates` in first-occurrence order (bitwise equality).
PointSet dedupe(const Matrix& candidates);

/// Row indices of the first occurrence of each distinct row.
std::vector<std::size_t> unique_row_indices(const Matrix& candidates);

struct WorstCaseError {
  double value = 0.0;        // e_n, clamped at 0
  double raw_squared = 0.0;  // w'Kw - 2w'z + e0^2 before clamping
  bool negative_roundoff = false;  // raw_squared < -1e-8
};

/// e_n = sqrt(max(0, w'Kw - 2 w'z + e0_sq)).
WorstCaseError worst_case_error(const Matrix& gram, const Vector& z, const Vector& w, double e0_sq);

struct QuadratureRule {
  Matrix points;
  Vector weights;
  Vector embeddings;
  double worst_case_error = 0.0;
  double nugget_used = 0.0;
  bool negative_roundoff = false;

  Eigen::Index size() const { return weights.size(); }
};

/// Kernel quadrature weights w solving (K + lambda I) w = z.
QuadratureRule kq_fit(const KernelHandle& kernel, const PointSet& points,
                      const NuggetPolicy& policy = {});
/// As above for points already prepared by `kernel` (reuses Stein scores).
/// Rows must be distinct; callers are expected to have deduplicated.
QuadratureRule kq_fit(const KernelHandle& kernel, const PreparedPoints& points,
                      const NuggetPolicy& policy = {});

/// sum_j w_j f_j.
double kq_estimate(const QuadratureRule& rule, std::span<const double> f_values);
double kq_estimate(const QuadratureRule& rule, const Vector& f_values);

/// Arithmetic mean; requires n >= 1.
double mc_estimate(std::span<const double> f_values);

/// Greedy sequential selection from a finite candidate grid: starting at
/// `seed_point`, repeatedly append the candidate giving the smallest e_{m+1}
/// (weights re-solved each step, ties to the lowest index). Candidates equal
/// to an already-selected point are skipped.
PointSet sbq_greedy_select(const KernelHandle& kernel, const PointSet& candidate_grid,
                           std::size_t n, const Vector& seed_point,
                           const NuggetPolicy& policy = {});

/// Radical inverse of `index` in `base`.
double radical_inverse(std::uint64_t index, unsigned base);

/// First n Halton points in [0,1)^d, index starting at 1; d <= 8.
Matrix halton_points(std::size_t n, std::size_t d);

/// Standard normal quantile function on (0, 1).
double gaussian_inverse_cdf(double u);

}  // namespace smckq
