#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "oracles.hpp"
#include "smckq/quadrature.hpp"

using namespace smckq;
using testing_support::gaussian_handle;
using testing_support::stein_standard_normal;
using testing_support::throws_code;
using testing_support::vec;

namespace {

Matrix column(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

}  // namespace

TEST_CASE("kq_fit single point") {
  const auto k = gaussian_handle(1, 1.0);
  const auto rule = kq_fit(k, PointSet::from_rows(column({0.0})));
  REQUIRE(rule.size() == 1);
  CHECK(rule.weights(0) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(rule.embeddings(0) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(rule.nugget_used == 0.0);
  CHECK(rule.worst_case_error * rule.worst_case_error == doctest::Approx(1.0 / std::sqrt(5.0) - 1.0 / 3.0).epsilon(1e-12));
  CHECK(rule.worst_case_error == doctest::Approx(0.337461).epsilon(1e-6));
}

TEST_CASE("kq_fit with tiny lengthscale returns the embeddings") {
  const auto k = gaussian_handle(1, 1e-3);
  const auto rule = kq_fit(k, PointSet::from_rows(column({-1.0, 0.0, 0.5, 2.0})));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(std::abs(rule.weights(i) - rule.embeddings(i)) <= 1e-6);
}

TEST_CASE("duplicate and empty point sets are rejected") {
  CHECK(throws_code([] { PointSet::from_rows(column({0.5, 0.5})); }, ErrorCode::kDuplicatePoints));
  CHECK(throws_code([] { PointSet::from_rows(Matrix(0, 1)); }, ErrorCode::kEmptyPointSet));
  CHECK(throws_code([] { PointSet::from_rows(column({0.5, INFINITY})); }, ErrorCode::kNonFinite));
}

TEST_CASE("kq_estimate") {
  const auto k = gaussian_handle(1, 1.0);
  const auto rule = kq_fit(k, PointSet::from_rows(column({0.0})));
  CHECK(kq_estimate(rule, Vector::Zero(1)) == 0.0);
  const double f0 = k.eval(vec({0.0}), vec({0.0}));
  CHECK(kq_estimate(rule, vec({f0})) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(throws_code([&] { kq_estimate(rule, Vector::Zero(2)); }, ErrorCode::kDimensionMismatch));
}

TEST_CASE("toy integrand estimate at n = 75 lies near the truth") {
  const auto k = gaussian_handle(1, 1.0);
  Rng rng(77);
  Matrix x(75, 1);
  for (Eigen::Index i = 0; i < 75; ++i) x(i, 0) = rng.normal();
  const auto rule = kq_fit(k, PointSet::from_rows(x));
  Vector f(75);
  for (Eigen::Index i = 0; i < 75; ++i) f(i) = 1.0 + std::sin(2.0 * std::numbers::pi * x(i, 0));
  CHECK(std::abs(kq_estimate(rule, f) - 1.0) < 0.1);
}

TEST_CASE("worst_case_error at n = 0") {
  const Matrix empty(0, 0);
  const Vector none(0);
  CHECK(worst_case_error(empty, none, none, gaussian_handle(1, 1.0).double_integral()).value ==
        doctest::Approx(std::pow(5.0, -0.25)).epsilon(1e-14));
  CHECK(worst_case_error(empty, none, none, stein_standard_normal(2, 1.0).double_integral()).value == 1.0);
}

TEST_CASE("worst_case_error flags negative round-off") {
  const Matrix K = Matrix::Identity(1, 1);
  const auto e = worst_case_error(K, vec({1.0}), vec({1.0}), 0.5);
  CHECK(e.value == 0.0);
  CHECK(e.raw_squared == doctest::Approx(-0.5));
  CHECK(e.negative_roundoff);
}

TEST_CASE("dedupe") {
  const Matrix a = column({1.0, 1.0, 2.0});
  const PointSet d = dedupe(a);
  REQUIRE(d.size() == 2);
  CHECK(d.matrix()(0, 0) == 1.0);
  CHECK(d.matrix()(1, 0) == 2.0);
  const Matrix b = column({3.0, 1.0, 2.0});
  CHECK(dedupe(b).matrix() == b);
  CHECK(dedupe(column({4.0, 4.0, 4.0})).size() == 1);
  CHECK(unique_row_indices(column({1.0, 2.0, 1.0, 3.0})) == std::vector<std::size_t>{0, 1, 3});
}

TEST_CASE("mc_estimate") {
  const std::vector<double> a{1, 1, 1};
  const std::vector<double> b{0, 2};
  CHECK(mc_estimate(a) == 1.0);
  CHECK(mc_estimate(b) == 1.0);
  CHECK(throws_code([] { mc_estimate(std::span<const double>()); }, ErrorCode::kEmptyPointSet));

  Rng rng(123);
  std::vector<double> f(10000);
  for (double& v : f) v = 1.0 + std::sin(2.0 * std::numbers::pi * rng.normal());
  const double mean = mc_estimate(f);
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (f.size() - 1));
  CHECK(std::abs(mean - 1.0) <= 4.0 * sd / 100.0);
}

TEST_CASE("sbq greedy selection") {
  Matrix grid(401, 1);
  for (Eigen::Index i = 0; i < 401; ++i) grid(i, 0) = -4.0 + 8.0 * i / 400.0;
  const PointSet g = PointSet::from_rows(grid);
  SUBCASE("n = 1 returns the seed point") {
    const PointSet s = sbq_greedy_select(gaussian_handle(1, 1.0), g, 1, vec({0.0}));
    REQUIRE(s.size() == 1);
    CHECK(s.matrix()(0, 0) == 0.0);
  }
  SUBCASE("unit lengthscale spreads out") {
    const PointSet s = sbq_greedy_select(gaussian_handle(1, 1.0), g, 5, vec({0.0}));
    REQUIRE(s.size() == 5);
    CHECK(s.matrix().maxCoeff() - s.matrix().minCoeff() > 2.0);
  }
  SUBCASE("tiny lengthscale clusters near the mode") {
    const PointSet s = sbq_greedy_select(gaussian_handle(1, 0.01), g, 30, vec({0.0}));
    REQUIRE(s.size() == 30);
    CHECK(s.matrix().cwiseAbs().maxCoeff() <= 1.0);
  }
}

TEST_CASE("halton points") {
  CHECK(radical_inverse(1, 2) == 0.5);
  CHECK(radical_inverse(2, 2) == 0.25);
  CHECK(radical_inverse(3, 2) == 0.75);
  CHECK(radical_inverse(1, 3) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(radical_inverse(2, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(radical_inverse(3, 3) == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  const Matrix h = halton_points(1, 2);
  CHECK(h(0, 0) == 0.5);
  CHECK(h(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("property: base-2 Halton fills dyadic intervals") {
  for (int m = 1; m <= 10; ++m) {
    const std::size_t n = std::size_t{1} << m;
    const Matrix h = halton_points(n, 1);
    std::vector<int> counts(n, 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(h(i, 0) * n)];
    CAPTURE(m);
    CHECK(std::all_of(counts.begin(), counts.end(), [](int c) { return c == 1; }));
  }
}

TEST_CASE("gaussian_inverse_cdf") {
  CHECK(gaussian_inverse_cdf(0.5) == 0.0);
  CHECK(gaussian_inverse_cdf(0.975) == doctest::Approx(oracle::normal_quantile(0.975)).epsilon(1e-12));
  CHECK(std::abs(gaussian_inverse_cdf(0.975) - 1.959964) < 1e-6);
  CHECK(gaussian_inverse_cdf(0.3) == doctest::Approx(-gaussian_inverse_cdf(0.7)).epsilon(1e-15));
  for (double u : {1e-10, 1e-5, 0.01, 0.2, 0.45, 0.6, 0.9, 0.999, 1 - 1e-6}) {
    CAPTURE(u);
    CHECK(std::abs(gaussian_inverse_cdf(u) - oracle::normal_quantile(u)) <= 1e-9 * (1.0 + std::abs(oracle::normal_quantile(u))));
  }
  CHECK(throws_code([] { gaussian_inverse_cdf(0.0); }, ErrorCode::kInvalidArgument));
  CHECK(throws_code([] { gaussian_inverse_cdf(1.0); }, ErrorCode::kInvalidArgument));
}

TEST_CASE("nugget ladder") {
  NuggetPolicy p;
  CHECK(p.jitter(0) == 0.0);
  CHECK(p.jitter(1) == 1e-12);
  CHECK(p.jitter(2) == doctest::Approx(1e-11));
  Matrix singular = Matrix::Ones(3, 3);
  const GramFactor f = factorize_gram(singular, p);
  CHECK(f.nugget > 0.0);
  NuggetPolicy none;
  none.max_attempts = 1;
  CHECK(throws_code([&] { factorize_gram(singular, none); }, ErrorCode::kGramSingular));
}

TEST_CASE("property: interpolation exactness") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(10));
    const double ell = 0.5 + 0.5 * rng.uniform();
    const auto k = gaussian_handle(1, ell);
    Matrix x(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = -3.0 + 0.7 * i + 0.2 * rng.uniform();
    Vector beta(n);
    for (Eigen::Index i = 0; i < n; ++i) beta(i) = rng.normal();
    const auto prepared = k.prepare(x);
    const Matrix K = k.gram(prepared);
    const Vector f = K * beta;
    const double exact = beta.dot(k.embeddings(prepared));
    const auto rule = kq_fit(k, prepared);
    CAPTURE(trial);
    REQUIRE(rule.nugget_used == 0.0);
    CHECK(std::abs(kq_estimate(rule, f) - exact) <= 1e-8);
  }
}

TEST_CASE("property: worst-case error identities") {
  Rng rng(41);
  const auto k = gaussian_handle(1, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index nb = 2 + static_cast<Eigen::Index>(rng.below(8));
    const auto slots = rng.sample_without_replacement(11, static_cast<std::size_t>(nb));
    Matrix xb(nb, 1);
    for (Eigen::Index i = 0; i < nb; ++i) xb(i, 0) = -4.0 + 0.8 * double(slots[i]) + 0.2 * rng.uniform();
    const Eigen::Index na = 1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(nb - 1)));
    const auto rb = kq_fit(k, PointSet::from_rows(xb));
    const auto ra = kq_fit(k, PointSet::from_rows(xb.topRows(na)));
    CAPTURE(trial);
    REQUIRE(rb.nugget_used == 0.0);
    REQUIRE(ra.nugget_used == 0.0);
    CHECK(rb.worst_case_error >= 0.0);
    CHECK(rb.worst_case_error <= ra.worst_case_error + 1e-10);
    const Matrix K = k.gram(k.prepare(xb));
    const double quad = rb.embeddings.dot(K.ldlt().solve(rb.embeddings));
    const double lhs = rb.worst_case_error * rb.worst_case_error + quad;
    CHECK(std::abs(lhs - k.double_integral()) <= 1e-8 * k.double_integral());
  }
}

TEST_CASE("property: KQ weights minimise the worst-case error") {
  Rng rng(43);
  const auto k = gaussian_handle(1, 0.7);
  const Matrix x = testing_support::normal_matrix(8, 1, rng, 1.5);
  const auto prepared = k.prepare(x);
  const Matrix K = k.gram(prepared);
  const auto rule = kq_fit(k, prepared);
  const double e0 = k.double_integral();
  const double best = worst_case_error(K, rule.embeddings, rule.weights, e0).raw_squared;
  for (int i = 0; i < 100; ++i) {
    Vector delta(8);
    for (Eigen::Index j = 0; j < 8; ++j) delta(j) = 0.1 * rng.normal();
    CHECK(worst_case_error(K, rule.embeddings, rule.weights + delta, e0).raw_squared >= best - 1e-14);
  }
}
