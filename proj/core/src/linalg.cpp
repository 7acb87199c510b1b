#include "smckq/linalg.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "smckq/error.hpp"

namespace smckq {

void NuggetPolicy::validate() const {
  require(initial_jitter >= 0.0 && std::isfinite(initial_jitter), ErrorCode::kInvalidArgument,
          "nugget initial_jitter must be finite and >= 0");
  require(growth > 1.0 && std::isfinite(growth), ErrorCode::kInvalidArgument,
          "nugget growth must be > 1");
  require(max_attempts >= 1, ErrorCode::kInvalidArgument, "nugget max_attempts must be >= 1");
  require(jitter_floor > 0.0, ErrorCode::kInvalidArgument, "nugget jitter_floor must be > 0");
}

double NuggetPolicy::jitter(int attempt) const {
  if (initial_jitter > 0.0) return initial_jitter * std::pow(growth, attempt);
  if (attempt == 0) return 0.0;
  return jitter_floor * std::pow(growth, attempt - 1);
}

double GramFactor::log_determinant() const {
  const auto& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

GramFactor factorize_gram(const Matrix& gram, const NuggetPolicy& policy) {
  policy.validate();
  require(gram.rows() == gram.cols() && gram.rows() > 0, ErrorCode::kDimensionMismatch,
          "Gram matrix must be square and non-empty");
  require(gram.allFinite(), ErrorCode::kNonFinite, "Gram matrix has non-finite entries");

  const auto n = gram.rows();
  const double max_diag = gram.diagonal().maxCoeff();
  const double scale = policy.scale_by_trace ? gram.trace() / static_cast<double>(n) : 1.0;
  const double pivot_floor =
      static_cast<double>(n) * std::numeric_limits<double>::epsilon() * max_diag;

  double last_min_pivot = 0.0;
  double last_nugget = 0.0;
  for (int attempt = 0; attempt < policy.max_attempts; ++attempt) {
    const double nugget = policy.jitter(attempt) * scale;
    Matrix shifted = gram;
    shifted.diagonal().array() += nugget;
    GramFactor out{Eigen::LLT<Matrix>(shifted), nugget, attempt + 1};
    last_nugget = nugget;
    if (out.llt.info() != Eigen::Success) {
      last_min_pivot = -1.0;
      continue;
    }
    const double min_pivot = out.llt.matrixLLT().diagonal().array().square().minCoeff();
    last_min_pivot = min_pivot;
    if (min_pivot > pivot_floor) return out;
  }

  std::ostringstream msg;
  msg << "factorization failed after " << policy.max_attempts << " attempts (n=" << n
      << ", max diag=" << max_diag << ", trace/n=" << scale << ", last nugget=" << last_nugget
      << ", last min pivot=" << last_min_pivot << ", pivot floor=" << pivot_floor << ")";
  throw Error(ErrorCode::kGramSingular, msg.str());
}

}  // namespace smckq
