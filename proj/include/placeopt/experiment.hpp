#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "placeopt/advdiff.hpp"
#include "placeopt/io.hpp"

namespace placeopt {

inline constexpr const char* kVersion = "0.1.0";

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool write_manifest = true;
};

struct RunReport {
  std::vector<std::string> artifacts;  // file names relative to the output directory
  double wall_time_s = 0.0;
};

// Runs one experiment. Config problems throw Error with kind Config and a
// message of the form "<field>: <reason>".
RunReport run_experiment(const std::string& command, const Json& config, const std::string& out_dir,
                         const RunOptions& opts = {});

// Exit-code wrapper used by the command-line tool: 0 success, 1 runtime
// failure, 2 config error. Errors are written as JSON to `err`.
int run_cli(const std::string& command, const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed, std::optional<int> threads, std::ostream& err);

Json error_json(const Error& e);

LQProblem lq_from_json(const Json& j, const std::string& path);
FilterProblem filter_from_json(const Json& j, const std::string& path, Vector* prior_mean = nullptr);

// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const Json& j);

// Two-panel SVG chart from a refinement CSV with columns dim, cost, x, y.
std::string emit_figure_svg(const std::string& csv_text, const std::string& title);

}  // namespace placeopt
