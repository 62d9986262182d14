#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "placeopt/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Optimal actuator and sensor placement experiments"};
  std::string command, config, out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  app.add_option("command", command, "riccati | filter | smoother | place | refine | figures")
      ->required()
      ->check(CLI::IsMember({"riccati", "filter", "smoother", "place", "refine", "figures"}));
  app.add_option("--config", config, "JSON config file")->required();
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", seed, "random seed for Monte Carlo runs");
  app.add_option("--threads", threads, "worker threads (default: PLACEOPT_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app.set_version_flag("--version", placeopt::kVersion);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  return placeopt::run_cli(command, config, out, seed, threads, std::cerr);
}
