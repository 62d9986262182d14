#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "placeopt/experiment.hpp"

using namespace placeopt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("placeopt_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Runs the command-line tool; returns its exit status.
int run_tool(const fs::path& dir, const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(PLACEOPT_EXE) + " " + args + " 2> " +
                          (dir / "stderr.txt").string() + " > " + (dir / "stdout.txt").string();
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  write_text(p.string(), text);
  return p;
}

const char* kTanh = R"({"lq": {"b": 1, "steps": 1000, "step": 1, "B": 1, "C": 1, "F": 1, "G": 0}, "method": "both"})";

Json small_advdiff(const std::string& prior) {
  return Json::parse(R"({"horizon": [0, 0.5], "dt": 0.05, "prior": ")" + prior + "\"}");
}

}  // namespace

TEST_CASE("riccati command reproduces tanh") {
  const fs::path d = scratch("tanh");
  const fs::path cfg = write_config(d, kTanh);
  REQUIRE(run_tool(d, "riccati --config " + cfg.string() + " --out " + (d / "out").string()) == 0);
  const CsvTable t = CsvTable::parse(read_text((d / "out" / "riccati.csv").string()));
  REQUIRE(!t.rows.empty());
  CHECK(t.rows[0][t.column("k")] == "0");
  CHECK(std::abs(std::stod(t.rows[0][t.column("pi_0_0")]) - std::tanh(1.0)) <= 1e-4);
  const Json j = Json::parse(read_text((d / "out" / "riccati.json").string()));
  CHECK(j["max_relative_difference"].get<double>() <= 1e-8);
  const Json m = Json::parse(read_text((d / "out" / "manifest.json").string()));
  CHECK(m["command"] == "riccati");
  CHECK(m["config_hash"].get<std::string>().size() == 16);
  CHECK(m.contains("wall_time_s"));
}

TEST_CASE("malformed configs exit with status 2 and name the field") {
  const fs::path d = scratch("bad");
  struct Case {
    std::string command, text, field;
  };
  const std::vector<Case> cases = {
      {"riccati", R"({"lq": {"b": 1, "steps": 10, "step": 1, "B": 1, "C": 1, "F": "one"}})", "lq.F"},
      {"riccati", R"({"lq": {"b": 1, "steps": 10, "step": 1, "B": 1, "C": 1, "F": 1, "speed": 3}})", "lq.speed"},
      {"riccati", R"({"lq": {"b": 1, "steps": 10, "step": [[1, 0], [0, 1]], "B": 1, "C": 1, "F": 1}})", "lq.B"},
      {"filter", R"({"filter": {"b": 1, "steps": 10, "step": 1, "Q": 1, "H": 1, "R": 1, "P0": 0},
                     "monte_carlo": {"samples": 10}})",
       "monte_carlo.seed"},
      {"refine", R"({"advdiff": {"nx": 0}})", "advdiff"},
      {"place", R"({"advdiff": {}, "criterion": "lq-op-norm"})", "criterion"},
      {"figures", R"({"figures": ["fig9"]})", "figures"},
      {"riccati", R"([1, 2)", "--config"},
  };
  for (const auto& c : cases) {
    CAPTURE(c.text);
    const fs::path cfg = write_config(d, c.text);
    CHECK(run_tool(d, c.command + " --config " + cfg.string() + " --out " + (d / "out").string()) == 2);
    const Json err = Json::parse(read_text((d / "stderr.txt").string()));
    CHECK(err["error"] == "config");
    CHECK(err["field"].get<std::string>().rfind(c.field, 0) == 0);
  }
  CHECK(run_tool(d, "riccati --config " + (d / "missing.json").string()) == 2);
  CHECK(run_tool(d, "launch --config " + (d / "config.json").string()) == 2);
  CHECK(run_tool(d, "riccati") == 2);
  CHECK(run_tool(d, "--version") == 0);
  CHECK(read_text((d / "stdout.txt").string()).find(kVersion) != std::string::npos);
}

TEST_CASE("runtime failures exit with status 1") {
  const fs::path d = scratch("runtime");
  const fs::path cfg = write_config(d, R"({"lq": {"b": 1, "steps": 10, "step": 1, "B": 1, "C": 1, "F": 1},
                                           "solver": {"tol": 1e-30, "max_iters": 1}, "method": "ire2"})");
  CHECK(run_tool(d, "riccati --config " + cfg.string() + " --out " + (d / "out").string()) == 1);
  const Json err = Json::parse(read_text((d / "stderr.txt").string()));
  CHECK(err["error"] == "iteration");
}

TEST_CASE("fixed seed gives byte-identical artifacts") {
  const fs::path d = scratch("determinism");
  const fs::path cfg = write_config(d, R"({"filter": {"b": 1, "steps": 40, "A": [[0, 1], [-1, -0.2]],
      "Q": [[0.1, 0], [0, 0.3]], "H": [[1, 0]], "R": 0.5, "P0": [[1, 0], [0, 1]]},
      "monte_carlo": {"samples": 300}})");
  for (const char* run : {"a", "b"})
    REQUIRE(run_tool(d, "filter --config " + cfg.string() + " --seed 17 --out " + (d / run).string()) == 0);
  size_t compared = 0;
  for (const auto& e : fs::directory_iterator(d / "a")) {
    const std::string name = e.path().filename().string();
    const std::string a = read_text(e.path().string()), b = read_text((d / "b" / name).string());
    if (name == "manifest.json") {
      Json ja = Json::parse(a), jb = Json::parse(b);
      CHECK(ja["seed"] == 17);
      ja.erase("wall_time_s");
      jb.erase("wall_time_s");
      CHECK(ja == jb);
    } else {
      CHECK_MESSAGE(a == b, name);
    }
    ++compared;
  }
  CHECK(compared >= 4);
  // a different seed changes the sampled artifact only
  REQUIRE(run_tool(d, "filter --config " + cfg.string() + " --seed 18 --out " + (d / "c").string()) == 0);
  CHECK(read_text((d / "a" / "filter.csv").string()) == read_text((d / "c" / "filter.csv").string()));
  CHECK(read_text((d / "a" / "monte_carlo.json").string()) != read_text((d / "c" / "monte_carlo.json").string()));
}

TEST_CASE("thread count from the flag or the environment") {
  const fs::path d = scratch("threads");
  const fs::path cfg = write_config(d, kTanh);
  auto threads = [&](const std::string& out) {
    return Json::parse(read_text((d / out / "manifest.json").string()))["threads"].get<int>();
  };
  REQUIRE(run_tool(d, "riccati --config " + cfg.string() + " --out " + (d / "e").string(), "PLACEOPT_THREADS=3") == 0);
  CHECK(threads("e") == 3);
  REQUIRE(run_tool(d, "riccati --config " + cfg.string() + " --threads 2 --out " + (d / "f").string(),
                   "PLACEOPT_THREADS=3") == 0);
  CHECK(threads("f") == 2);
  CHECK(read_text((d / "e" / "riccati.csv").string()) == read_text((d / "f" / "riccati.csv").string()));
  CHECK(run_tool(d, "riccati --config " + cfg.string() + " --threads 0") == 2);
}

TEST_CASE("refinement artifacts read back to the in-memory records") {
  const fs::path d = scratch("roundtrip");
  Json cfg;
  cfg["advdiff"] = small_advdiff("nuclear");
  cfg["levels"] = {2, 4};
  cfg["criterion"] = "smoother-nuclear";
  const RunReport rep = run_experiment("refine", cfg, (d / "out").string());
  CHECK(std::find(rep.artifacts.begin(), rep.artifacts.end(), "refinement.csv") != rep.artifacts.end());

  const AdvDiffConfig ad = advdiff_config_from_json(cfg["advdiff"]);
  EvalPoint ev;
  ev.tau = 0;
  const auto recs = refinement_study(advdiff_levels(ad, {2, 4}), grid_candidates(ad, 5, 5), Criterion::SmootherNuclear, ev);
  const CsvTable t = CsvTable::parse(read_text((d / "out" / "refinement.csv").string()));
  REQUIRE(t.rows.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    const auto& row = t.rows[i];
    CHECK(row[t.column("level")] == recs[i].label);
    CHECK(std::stoll(row[t.column("dim")]) == recs[i].dim);
    CHECK(std::stod(row[t.column("cost")]) == recs[i].cost);
    CHECK(std::stod(row[t.column("x")]) == recs[i].location.coords[0]);
    CHECK(std::stod(row[t.column("y")]) == recs[i].location.coords[1]);
    CHECK(std::stod(row[t.column("relative_change")]) == recs[i].relative_change);
    CHECK(row[t.column("status")] == "ok");
  }
  const CsvTable sweep = CsvTable::parse(read_text((d / "out" / "sweep_4.csv").string()));
  REQUIRE(sweep.rows.size() == recs[1].sweep.entries.size());
  for (size_t i = 0; i < sweep.rows.size(); ++i)
    CHECK(std::stod(sweep.rows[i][sweep.column("cost")]) == recs[1].sweep.entries[i].cost);
  // the table text survives a parse and print cycle
  CHECK(CsvTable::parse(t.str()).str() == t.str());
}

TEST_CASE("per-candidate failures are recorded, not fatal") {
  const fs::path d = scratch("place");
  Json cfg;
  cfg["advdiff"] = small_advdiff("nuclear");
  cfg["advdiff"]["nx"] = 4;
  cfg["candidates"] = Json::parse("[[0.5, 0.5, 0], [7.0, 1.0, 0], [3.1, 2.2, 0]]");
  const fs::path p = write_config(d, cfg.dump());
  REQUIRE(run_tool(d, "place --config " + p.string() + " --out " + (d / "out").string()) == 0);
  const CsvTable t = CsvTable::parse(read_text((d / "out" / "placement.csv").string()));
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0][t.column("status")] == "ok");
  CHECK(t.rows[1][t.column("status")] == "failed");
  CHECK(t.rows[1][t.column("message")].find("outside") != std::string::npos);
  CHECK(t.rows[2][t.column("status")] == "ok");
  const Json j = Json::parse(read_text((d / "out" / "placement.json").string()));
  CHECK(j["best"].size() == 3);
}

TEST_CASE("figure charts") {
  const std::string one = "level,dim,cost,x,y,z\nnx=5,150,0.25,0.5,1.5,0\n";
  const std::string svg = emit_figure_svg(one, "single <level>");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("nan") == std::string::npos);
  CHECK(svg.find("single &lt;level&gt;") != std::string::npos);
  CHECK(emit_figure_svg(one, "t") == emit_figure_svg(one, "t"));
  try {
    emit_figure_svg("level,dim,x,y\nnx=5,150,0.5,0.5\n", "t");
    FAIL("missing column accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Schema);
  }
}

TEST_CASE("scaled-identity figures grow with the level dimension") {
  const fs::path d = scratch("figures");
  Json cfg;
  cfg["advdiff"] = small_advdiff("scaled-identity");
  cfg["levels"] = {2, 4, 8};
  const fs::path p = write_config(d, cfg.dump());
  REQUIRE(run_tool(d, "figures --config " + p.string() + " --out " + (d / "out").string()) == 0);
  const CsvTable t = CsvTable::parse(read_text((d / "out" / "filter.csv").string()));
  REQUIRE(t.rows.size() == 3);
  for (size_t i = 1; i < t.rows.size(); ++i)
    CHECK(std::stod(t.rows[i][t.column("cost")]) > std::stod(t.rows[i - 1][t.column("cost")]));
  const Json j = Json::parse(read_text((d / "out" / "figures.json").string()));
  CHECK(j["filter"]["stable_on_finest"] == false);
  CHECK(j["smoother"]["prior"] == "scaled-identity");
  CHECK(fs::exists(d / "out" / "smoother.svg"));
}
