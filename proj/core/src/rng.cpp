#include "smckq/rng.hpp"

#include <cmath>
#include <numeric>

#include "smckq/error.hpp"

namespace smckq {

namespace {
__extension__ typedef unsigned __int128 U128;
}  // namespace

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kGramSingular: return "gram-singular";
    case ErrorCode::kDuplicatePoints: return "duplicate-points";
    case ErrorCode::kEmptyPointSet: return "empty-point-set";
    case ErrorCode::kDegenerateWeights: return "degenerate-weights";
    case ErrorCode::kSupportMismatch: return "support-mismatch";
    case ErrorCode::kInsufficientUniqueStates: return "insufficient-unique-states";
    case ErrorCode::kObjectiveNonFinite: return "objective-non-finite";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

double Rng::normal() noexcept {
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  // Lemire's nearly-divisionless method.
  U128 m = static_cast<U128>((*this)()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = -n % n;
    while (low < threshold) {
      m = static_cast<U128>((*this)()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  require(k <= n, ErrorCode::kInvalidArgument, "cannot draw more items than available");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace smckq
