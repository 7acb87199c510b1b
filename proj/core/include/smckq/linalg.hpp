#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace smckq {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Diagonal-jitter escalation used whenever a Gram matrix is factorized.
///
/// Attempt k uses jitter `initial_jitter * growth^k`. With the default
/// `initial_jitter == 0` the first attempt is unregularised and the following
/// attempts start from `jitter_floor`, i.e. 0, 1e-12, 1e-11, ... When
/// `scale_by_trace` is set every jitter is multiplied by trace(K)/n so the
/// ladder is relative to the kernel's scale.
struct NuggetPolicy {
  double initial_jitter = 0.0;
  double growth = 10.0;
  int max_attempts = 6;
  bool scale_by_trace = true;
  double jitter_floor = 1e-12;

  void validate() const;
  /// Jitter of attempt `k` before trace scaling.
  double jitter(int attempt) const;
};

/// Cholesky factor of K + nugget * I together with the nugget that made it work.
struct GramFactor {
  Eigen::LLT<Matrix> llt;
  double nugget = 0.0;
  int attempts = 0;

  Vector solve(const Vector& rhs) const { return llt.solve(rhs); }
  /// log |K + nugget I| from the triangular factor.
  double log_determinant() const;
};

/// Factorizes a symmetric positive-definite Gram matrix, escalating the
/// nugget per `policy`. A pivot counts as failed when it is not larger than
/// n * eps * max diag(K) (this catches round-off "successes" on numerically
/// singular matrices). Throws Error(kGramSingular) with diagnostics when every
/// attempt fails.
GramFactor factorize_gram(const Matrix& gram, const NuggetPolicy& policy = {});

}  // namespace smckq
