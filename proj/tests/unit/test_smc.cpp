#include <doctest.h>

#include "helpers.hpp"
#include "oracles.hpp"
#include "smckq/problems.hpp"
#include "smckq/smc.hpp"

using namespace smckq;
using testing_support::throws_code;
using testing_support::vec;

namespace {

double log_std_normal(const Vector& x) { return -0.5 * x.squaredNorm(); }

TemperedTarget identical_target() { return TemperedTarget{log_std_normal, log_std_normal, std::nullopt}; }

ParticleSystem exact_reference_particles(std::size_t n, double ref_std, const TemperedTarget& target,
                                         Rng& rng) {
  Matrix x(static_cast<Eigen::Index>(n), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = ref_std * rng.normal();
  return ParticleSystem::from_states(std::move(x), target, 0.0);
}

ParticleSystem with_log_ratios(const Vector& ratios, const Vector& weights, double t) {
  ParticleSystem s;
  s.states = Matrix(ratios.size(), 1);
  for (Eigen::Index i = 0; i < ratios.size(); ++i) s.states(i, 0) = double(i);
  s.weights = weights;
  s.t = t;
  s.log_ref = Vector::Zero(ratios.size());
  s.log_target = ratios;
  return s;
}

}  // namespace

TEST_CASE("ess") {
  CHECK(ess(Vector::Constant(300, 1.0 / 300)) == doctest::Approx(300.0).epsilon(1e-12));
  Vector one = Vector::Zero(10);
  one(3) = 1.0;
  CHECK(ess(one) == 1.0);
  CHECK(ess(vec({0.5, 0.5, 0.0, 0.0})) == 2.0);
}

TEST_CASE("cess") {
  Rng rng(1);
  const auto toy = toy_tempered_target(1, 8.0);
  const auto sys = exact_reference_particles(50, 8.0, toy, rng);
  CHECK(cess(sys, sys.t) == doctest::Approx(50.0).epsilon(1e-12));

  const auto same = exact_reference_particles(50, 1.0, identical_target(), rng);
  CHECK(cess(same, 0.7) == doctest::Approx(50.0).epsilon(1e-12));

  const auto two = with_log_ratios(vec({1.0, 0.0}), vec({0.5, 0.5}), 0.0);
  const double e = std::exp(1.0);
  CHECK(cess(two, 1.0) == doctest::Approx((e + 1) * (e + 1) / (e * e + 1)).epsilon(1e-14));
  CHECK(cess(two, 1.0) == doctest::Approx(1.648055).epsilon(1e-6));
}

TEST_CASE("next_temperature") {
  Rng rng(2);
  SUBCASE("identical densities step by the cap") {
    const auto same = exact_reference_particles(20, 1.0, identical_target(), rng);
    CHECK(next_temperature(same, 0.95, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
    auto late = same;
    late.t = 0.95;
    CHECK(next_temperature(late, 0.95, 0.1) == 1.0);
  }
  SUBCASE("bisection residual on the toy path") {
    const auto toy = toy_tempered_target(1, 8.0);
    const auto sys = exact_reference_particles(300, 8.0, toy, rng);
    const double t = next_temperature(sys, 0.95, 0.1);
    CHECK(t > 0.0);
    CHECK(t <= 0.1);
    const bool capped = t == doctest::Approx(0.1).epsilon(1e-15);
    CHECK((capped || std::abs(cess(sys, t) - 285.0) <= 1e-3));
  }
}

TEST_CASE("reweight") {
  const auto two = with_log_ratios(vec({0.0, std::log(4.0)}), vec({0.5, 0.5}), 0.0);
  const auto r = reweight(two, 0.5);
  CHECK(r.weights(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(r.weights(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(r.t == 0.5);
  const auto id = reweight(two, 0.0);
  CHECK(id.weights == two.weights);

  Rng rng(3);
  auto same = exact_reference_particles(20, 1.0, identical_target(), rng);
  same.weights = Vector::LinSpaced(20, 1.0, 20.0);
  same.weights /= same.weights.sum();
  const auto rs = reweight(same, 0.4);
  CHECK((rs.weights - same.weights).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("resample_multinomial") {
  Rng rng(4);
  SUBCASE("degenerate weights copy one particle") {
    auto sys = exact_reference_particles(10, 1.0, identical_target(), rng);
    sys.weights = Vector::Zero(10);
    sys.weights(6) = 1.0;
    const auto out = resample_multinomial(sys, rng);
    for (Eigen::Index i = 0; i < 10; ++i) CHECK(out.states(i, 0) == sys.states(6, 0));
    CHECK((out.weights.array() == 0.1).all());
  }
  SUBCASE("uniform weights give uniform ancestor counts") {
    const std::size_t n = 10;
    Matrix x(n, 1);
    for (Eigen::Index i = 0; i < Eigen::Index(n); ++i) x(i, 0) = double(i);
    const auto sys = ParticleSystem::from_states(x, identical_target(), 0.0);
    std::vector<double> counts(n, 0.0);
    const int trials = 10000;
    for (int k = 0; k < trials; ++k) {
      const auto out = resample_multinomial(sys, rng);
      for (Eigen::Index i = 0; i < Eigen::Index(n); ++i) counts[static_cast<std::size_t>(out.states(i, 0))] += 1.0;
    }
    const double expected = trials;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < oracle::chi2_critical_001(int(n) - 1));
  }
}

TEST_CASE("metropolis acceptance ratios") {
  const auto p = Proposal::random_walk(1, 0.5);
  const double lr = log_acceptance_ratio(p, vec({0.0}), log_std_normal(vec({0.0})), vec({1.0}),
                                         log_std_normal(vec({1.0})));
  CHECK(std::exp(lr) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(std::exp(lr) == doctest::Approx(0.606531).epsilon(1e-6));

  SUBCASE("proposal equal to the target always accepts") {
    const auto exact = Proposal::gaussian_independence(vec({0.0}), Matrix::Identity(1, 1));
    Rng rng(5);
    auto sys = exact_reference_particles(500, 1.0, identical_target(), rng);
    sys.t = 1.0;
    MoveStats stats;
    markov_sweep(sys, identical_target(), exact, rng, &stats);
    CHECK(stats.accepted == stats.proposed);
  }
}

TEST_CASE("property: metropolis decisions replay from injected uniforms") {
  Rng rng(6);
  const auto toy = toy_tempered_target(1, 8.0);
  auto sys = exact_reference_particles(200, 3.0, toy, rng);
  sys.t = 0.3;
  const auto proposal = Proposal::random_walk(1, 1.0);
  Rng move_rng(99);
  Rng replay_rng = move_rng;
  const auto moved = markov_sweep(sys, toy, proposal, move_rng);

  const std::uint64_t sweep_seed = replay_rng();
  for (Eigen::Index j = 0; j < sys.size(); ++j) {
    Rng stream(Rng::derive_seed(sweep_seed, std::uint64_t(j)));
    const Vector x = sys.states.row(j).transpose();
    const Vector x_star = proposal.draw(x, stream);
    const double u = stream.uniform_open();
    const double r = std::exp(toy.log_density(x_star, sys.t) - toy.log_density(x, sys.t));
    const bool accept = u < r;
    CHECK(mh_accept(std::log(r), u) == accept);
    CHECK(moved.states(j, 0) == (accept ? x_star(0) : x(0)));
  }
}

TEST_CASE("markov_move leaves the target invariant") {
  Rng rng(7);
  auto sys = exact_reference_particles(10000, 1.0, identical_target(), rng);
  sys.t = 1.0;
  ProposalPolicy policy;
  policy.kind = ProposalPolicy::Kind::kRandomWalkGaussian;
  policy.rw_scale = 1.0;
  policy.sweeps = 5;
  const auto out = markov_move(sys, identical_target(), policy, rng);
  std::vector<double> xs(out.states.data(), out.states.data() + out.size());
  CHECK(oracle::ks_statistic(xs, oracle::normal_cdf) < oracle::ks_critical_001(xs.size()));
}

TEST_CASE("smc_step") {
  Rng rng(8);
  ProposalPolicy policy;
  SUBCASE("identical densities never resample") {
    const auto sys = exact_reference_particles(100, 1.0, identical_target(), rng);
    StepInfo info;
    const auto out = smc_step(sys, identical_target(), 0.1, 0.95, policy, rng, &info);
    CHECK_FALSE(info.resampled);
    CHECK(info.ess_after_reweight == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(out.t == 0.1);
  }
  SUBCASE("degenerate weights resample") {
    auto sys = exact_reference_particles(100, 1.0, identical_target(), rng);
    sys.weights = Vector::Constant(100, 1e-12);
    sys.weights(0) = 1.0;
    sys.weights /= sys.weights.sum();
    StepInfo info;
    smc_step(sys, identical_target(), 0.1, 0.95, policy, rng, &info);
    CHECK(info.resampled);
  }
  SUBCASE("toy path reaches the target") {
    const auto toy = toy_tempered_target(1, 8.0);
    int good = 0;
    for (int seed = 0; seed < 20; ++seed) {
      Rng r(1000 + seed);
      auto sys = exact_reference_particles(300, 8.0, toy, r);
      std::vector<double> ladder{0.0};
      while (sys.t < 1.0) {
        const double t = next_temperature(sys, 0.95, 0.1);
        sys = smc_step(sys, toy, t, 0.95, policy, r);
        ladder.push_back(sys.t);
        CHECK(std::abs(sys.weights.sum() - 1.0) <= 1e-12);
      }
      for (std::size_t i = 1; i < ladder.size(); ++i) CHECK(ladder[i] - ladder[i - 1] <= 0.1 + 1e-12);
      CHECK(ladder.back() == 1.0);
      const Vector x = sys.states.col(0);
      const double mean = x.dot(sys.weights);
      const double sd = std::sqrt((x.array() - mean).square().matrix().dot(sys.weights));
      if (sd >= 0.8 && sd <= 1.2) ++good;
    }
    CHECK(good == 20);
  }
}

TEST_CASE("property: ess bounds and normalisation") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 1 + Eigen::Index(rng.below(50));
    Vector w(n);
    for (Eigen::Index i = 0; i < n; ++i) w(i) = std::exp(3.0 * rng.normal());
    w /= w.sum();
    const double e = ess(w);
    CHECK(e >= 1.0 - 1e-12);
    CHECK(e <= double(n) * (1.0 + 1e-12));
  }
}

TEST_CASE("property: cess is non-increasing along the toy path") {
  Rng rng(10);
  const auto toy = toy_tempered_target(1, 8.0);
  const auto sys = exact_reference_particles(300, 8.0, toy, rng);
  double prev = cess(sys, 0.0);
  for (int i = 1; i <= 50; ++i) {
    const double c = cess(sys, i / 50.0);
    CHECK(c <= prev * (1.0 + 1e-12));
    prev = c;
  }
}

TEST_CASE("box support is enforced at every temperature") {
  Box box{vec({0.0}), vec({1.0})};
  const TemperedTarget t{log_std_normal, log_std_normal, box};
  CHECK(t.log_density(vec({2.0}), 1.0) == -std::numeric_limits<double>::infinity());
  CHECK(t.log_density(vec({2.0}), 0.0) == -std::numeric_limits<double>::infinity());
  CHECK(std::isfinite(t.log_density(vec({0.5}), 1.0)));
}

TEST_CASE("smc argument validation") {
  Rng rng(11);
  const auto sys = exact_reference_particles(10, 1.0, identical_target(), rng);
  ProposalPolicy policy;
  CHECK(throws_code([&] { smc_step(sys, identical_target(), 0.0, 0.95, policy, rng); }, ErrorCode::kInvalidArgument));
  CHECK(throws_code([&] { next_temperature(sys, 1.5, 0.1); }, ErrorCode::kInvalidArgument));
  ProposalPolicy bad;
  bad.sweeps = 0;
  CHECK(throws_code([&] { bad.validate(); }, ErrorCode::kInvalidArgument));
}
