#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "smckq/error.hpp"
#include "smckq/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Overrides {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t replicates = 0;
  std::size_t threads = 0;
};

smckq::RunConfig resolve(const Overrides& o, const CLI::App& cmd) {
  smckq::RunConfig c = smckq::load_run_config(o.config_path);
  auto given = [&cmd](const char* name) {
    const CLI::Option* opt = cmd.get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (given("--seed")) c.seed = o.seed;
  if (given("--replicates")) c.replicates = o.replicates;
  if (given("--threads")) c.threads = o.threads;
  if (given("--out")) {
    c.output_dir = o.out;
  } else if (c.output_dir.empty()) {
    const char* env = std::getenv("SMCKQ_OUTPUT_DIR");
    c.output_dir = env != nullptr && *env != '\0' ? env : "smckq-out";
  }
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel quadrature with SMC-tempered sampling distributions"};
  app.require_subcommand(1);

  Overrides run_opts;
  auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
  run->add_option("config", run_opts.config_path, "JSON config file")->required();
  run->add_option("--seed", run_opts.seed, "Base seed (overrides config)");
  run->add_option("--out", run_opts.out, "Output directory (overrides config and SMCKQ_OUTPUT_DIR)");
  run->add_option("--replicates", run_opts.replicates, "Number of replicates")->check(CLI::PositiveNumber);
  run->add_option("--threads", run_opts.threads, "Worker threads")->check(CLI::PositiveNumber);

  Overrides bench_opts;
  std::string bench_file;
  auto* bench = app.add_subcommand("benchmark", "Compute the brute-force ODE benchmark value");
  bench->add_option("config", bench_opts.config_path, "JSON config file")->required();
  bench->add_option("--seed", bench_opts.seed, "Seed for the benchmark chain");
  bench->add_option("--out", bench_opts.out, "Output directory (overrides config)");
  bench->add_option("--file", bench_file, "Benchmark file path (default: ode.benchmark_file or <out>/ode_benchmark.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      smckq::run(resolve(run_opts, *run));
    } else {
      smckq::write_ode_benchmark(resolve(bench_opts, *bench), bench_file);
    }
  } catch (const smckq::Error& e) {
    std::cerr << "smckq: " << e.what() << '\n';
    return e.code() == smckq::ErrorCode::kConfig ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "smckq: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
