#include <benchmark/benchmark.h>

#include "smckq/controller.hpp"
#include "smckq/problems.hpp"
#include "smckq/quadrature.hpp"
#include "smckq/smc.hpp"

using namespace smckq;

namespace {

Matrix normal_points(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

KernelHandle toy_kernel() {
  return KernelHandle::gaussian(GaussianKernelParams::isotropic(1, 1.0), GaussianMeasure::standard(1));
}

void BM_GaussianGram(benchmark::State& state) {
  const auto k = toy_kernel();
  const auto pts = k.prepare(normal_points(state.range(0), 1, 1));
  for (auto _ : state) benchmark::DoNotOptimize(k.gram(pts));
}
BENCHMARK(BM_GaussianGram)->Arg(75)->Arg(300);

void BM_KqFit(benchmark::State& state) {
  const auto k = toy_kernel();
  const auto pts = k.prepare(normal_points(state.range(0), 1, 2));
  for (auto _ : state) benchmark::DoNotOptimize(kq_fit(k, pts));
}
BENCHMARK(BM_KqFit)->Arg(25)->Arg(75)->Arg(150);

void BM_SteinGram(benchmark::State& state) {
  ODEProblem p = ODEProblem::standard();
  Rng data(3);
  p.observations = generate_ode_data(p, data);
  const auto k = KernelHandle::stein({GaussianKernelParams::isotropic(4, 1.0),
                                      [p](const Vector& th) { return ode_score(p, th); }});
  Matrix x = normal_points(state.range(0), 4, 4);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) = (0.1 * x.row(i).array()).exp() * p.theta_true.transpose().array();
  const auto pts = k.prepare(x);
  for (auto _ : state) benchmark::DoNotOptimize(k.gram(pts));
}
BENCHMARK(BM_SteinGram)->Arg(50);

void BM_Crit(benchmark::State& state) {
  const auto k = toy_kernel();
  const Matrix states = normal_points(300, 1, 5);
  Rng rng(6);
  for (auto _ : state) benchmark::DoNotOptimize(crit(k, states, 75, static_cast<std::size_t>(state.range(0)), rng));
}
BENCHMARK(BM_Crit)->Arg(20);

void BM_SmcStep(benchmark::State& state) {
  const auto target = toy_tempered_target(1, 8.0);
  Matrix x = 8.0 * normal_points(300, 1, 7);
  const auto sys = ParticleSystem::from_states(x, target, 0.0);
  ProposalPolicy policy;
  Rng rng(8);
  for (auto _ : state) benchmark::DoNotOptimize(smc_step(sys, target, next_temperature(sys, 0.95, 0.1), 0.95, policy, rng));
}
BENCHMARK(BM_SmcStep);

void BM_SmcKqToy(benchmark::State& state) {
  const auto k = toy_kernel();
  const ToyProblem toy;
  const GaussianMeasure ref = GaussianMeasure::isotropic(1, 0.0, 8.0);
  const SmcKqProblem problem{[toy](const Vector& v) { return toy_integrand(toy, v); }, toy_tempered_target(1, 8.0),
                             [ref](Rng& rng) { return ref.sample(rng); }};
  SmcKqConfig cfg;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(smc_kq(problem, k, cfg, seed++));
}
BENCHMARK(BM_SmcKqToy)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
