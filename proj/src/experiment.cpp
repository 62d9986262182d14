#include "placeopt/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace placeopt {

namespace fs = std::filesystem;

namespace {

Error config_error(const std::string& field, const std::string& why) { return Error(ErrorKind::Config, field + ": " + why); }

void allow_keys(const Json& j, const std::set<std::string>& keys, const std::string& path) {
  if (!j.is_object()) throw config_error(path.empty() ? "<root>" : path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!keys.count(it.key())) throw config_error(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const Json& require(const Json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) throw config_error(join(path, key), "missing");
  return j[key];
}

double number(const Json& j, const std::string& key, const std::string& path, std::optional<double> def = {}) {
  if (!j.contains(key)) {
    if (def) return *def;
    throw config_error(join(path, key), "missing");
  }
  if (!j[key].is_number()) throw config_error(join(path, key), "expected a number");
  return j[key].get<double>();
}

Index integer(const Json& j, const std::string& key, const std::string& path, std::optional<Index> def = {}) {
  if (!j.contains(key)) {
    if (def) return *def;
    throw config_error(join(path, key), "missing");
  }
  if (!j[key].is_number_integer() || j[key].get<long long>() < 1)
    throw config_error(join(path, key), "expected a positive integer");
  return static_cast<Index>(j[key].get<long long>());
}

std::string text(const Json& j, const std::string& key, const std::string& path, const std::string& def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_string()) throw config_error(join(path, key), "expected a string");
  return j[key].get<std::string>();
}

Matrix matrix(const Json& j, const std::string& key, const std::string& path) {
  return matrix_from_json(require(j, key, path), join(path, key));
}

void expect_shape(const Matrix& m, Index r, Index c, const std::string& field) {
  if (m.rows() != r || m.cols() != c) {
    std::ostringstream os;
    os << "expected a " << r << "x" << c << " matrix, got " << m.rows() << "x" << m.cols();
    throw config_error(field, os.str());
  }
}

TimeGrid grid_from_json(const Json& j, const std::string& path) {
  const double t0 = number(j, "t0", path, 0.0);
  const double b = number(j, "b", path);
  const Index steps = integer(j, "steps", path);
  try {
    return TimeGrid(t0, b, steps);
  } catch (const Error& e) {
    throw config_error(join(path, "b"), e.what());
  }
}

EvolutionOperator evolution_from_json(const Json& j, const TimeGrid& g, const std::string& path) {
  if (j.contains("A") == j.contains("step")) throw config_error(join(path, "A"), "give exactly one of A (generator) or step");
  if (j.contains("A")) {
    const Matrix a = matrix(j, "A", path);
    if (a.rows() != a.cols()) throw config_error(join(path, "A"), "generator must be square");
    return EvolutionOperator::from_generator(g, a);
  }
  const Matrix s = matrix(j, "step", path);
  if (s.rows() != s.cols()) throw config_error(join(path, "step"), "step map must be square");
  return EvolutionOperator::time_invariant(g, s);
}

template <typename F>
auto rethrow_as_config(const std::string& field, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    throw config_error(field, e.what());
  }
}

int resolve_threads(const RunOptions& o) {
  if (o.threads) return std::max(1, *o.threads);
  if (const char* env = std::getenv("PLACEOPT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<int>(v);
  }
  return 1;
}

std::string fmt(double v) { return format_double(v); }

struct Context {
  std::string out;
  RunReport* report;
  void write(const std::string& name, const std::string& content) {
    write_text((fs::path(out) / name).string(), content);
    report->artifacts.push_back(name);
  }
  void write_json(const std::string& name, const Json& j) { write(name, j.dump(2) + "\n"); }
};

std::vector<std::string> matrix_header(const std::string& prefix, Index r, Index c) {
  std::vector<std::string> h;
  for (Index i = 0; i < r; ++i)
    for (Index k = 0; k < c; ++k) h.push_back(prefix + "_" + std::to_string(i) + "_" + std::to_string(k));
  return h;
}

void append_entries(std::vector<std::string>& row, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index k = 0; k < m.cols(); ++k) row.push_back(fmt(m(i, k)));
}

CsvTable trajectory_table(const TimeGrid& g, const std::vector<Matrix>& ms, const std::string& prefix, bool entries) {
  CsvTable t;
  t.header = {"k", "t", "trace", "op_norm", "nuclear"};
  const Index n = ms.front().rows();
  if (entries) {
    auto h = matrix_header(prefix, n, n);
    t.header.insert(t.header.end(), h.begin(), h.end());
  }
  for (size_t k = 0; k < ms.size(); ++k) {
    const Matrix& m = ms[k];
    std::vector<std::string> row = {std::to_string(k), fmt(g.node(static_cast<Index>(k))), fmt(m.trace()),
                                    fmt(operator_norm(m)), fmt(nuclear_norm(m))};
    if (entries) append_entries(row, m);
    t.add_row(std::move(row));
  }
  return t;
}

Json trajectory_json(const std::vector<Matrix>& ms) {
  Json a = Json::array();
  for (const auto& m : ms) a.push_back(matrix_to_json(m));
  return a;
}

RiccatiOptions riccati_options(const Json& cfg) {
  RiccatiOptions o;
  if (cfg.contains("solver")) {
    const Json& s = cfg["solver"];
    allow_keys(s, {"tol", "max_iters"}, "solver");
    o.tol = number(s, "tol", "solver", o.tol);
    o.max_iters = static_cast<int>(integer(s, "max_iters", "solver", o.max_iters));
  }
  return o;
}

// ---------------------------------------------------------------- riccati

void cmd_riccati(const Json& cfg, Context& ctx) {
  allow_keys(cfg, {"command", "lq", "method", "solver", "x0", "seed"}, "");
  const LQProblem lq = lq_from_json(require(cfg, "lq", ""), "lq");
  const std::string method = text(cfg, "method", "", "ire1");
  if (method != "ire1" && method != "ire2" && method != "both") throw config_error("method", "expected ire1, ire2 or both");
  const RiccatiOptions opts = riccati_options(cfg);
  const bool entries = lq.state_dim() <= 16;
  Json summary;
  summary["method"] = method;
  summary["state_dim"] = lq.state_dim();
  summary["steps"] = lq.grid().steps();
  auto run = [&](bool second) {
    const RiccatiSolution sol = second ? solve_ire2(lq, opts) : solve_ire1(lq, opts);
    const std::string name = second ? "ire2" : "ire1";
    ctx.write("riccati_" + name + ".csv", trajectory_table(lq.grid(), sol.Pi, "pi", entries).str());
    Json s;
    s["iterations"] = sol.iterations;
    s["residual"] = sol.residual;
    s["pi0"] = matrix_to_json(sol.Pi.front());
    s["pi0_op_norm"] = operator_norm(sol.Pi.front());
    s["pi0_nuclear"] = nuclear_norm(sol.Pi.front());
    if (cfg.contains("x0")) {
      const Matrix x0 = matrix(cfg, "x0", "");
      expect_shape(x0, lq.state_dim(), 1, "x0");
      const Trajectory tr = simulate_closed_loop(lq, sol, x0.col(0));
      s["closed_loop_cost"] = lq_cost(lq, tr);
      s["predicted_cost"] = x0.col(0).dot(sol.Pi.front() * x0.col(0));
    }
    summary[name] = s;
    return sol;
  };
  if (method == "both") {
    const RiccatiSolution a = run(false);
    const RiccatiSolution b = run(true);
    double worst = 0.0;
    for (size_t k = 0; k < a.Pi.size(); ++k)
      worst = std::max(worst, operator_norm(Matrix(a.Pi[k] - b.Pi[k])) / (1.0 + operator_norm(a.Pi[k])));
    summary["max_relative_difference"] = worst;
    ctx.write("riccati.csv", trajectory_table(lq.grid(), a.Pi, "pi", entries).str());
  } else {
    const RiccatiSolution a = run(method == "ire2");
    ctx.write("riccati.csv", trajectory_table(lq.grid(), a.Pi, "pi", entries).str());
  }
  ctx.write_json("riccati.json", summary);
}

// ---------------------------------------------------------------- filter / smoother

std::optional<MonteCarloOptions> monte_carlo_options(const Json& cfg, const RunOptions& ro, Index dim) {
  if (!cfg.contains("monte_carlo")) return std::nullopt;
  const Json& m = cfg["monte_carlo"];
  allow_keys(m, {"samples", "seed"}, "monte_carlo");
  MonteCarloOptions o;
  o.samples = integer(m, "samples", "monte_carlo", 2000);
  if (ro.seed)
    o.seed = *ro.seed;
  else if (m.contains("seed"))
    o.seed = static_cast<std::uint64_t>(integer(m, "seed", "monte_carlo"));
  else if (cfg.contains("seed"))
    o.seed = static_cast<std::uint64_t>(integer(cfg, "seed", ""));
  else
    throw config_error("monte_carlo.seed", "a seed is required for Monte Carlo sampling");
  o.prior_mean = Vector::Zero(dim);
  return o;
}

Json monte_carlo_json(const MonteCarloReport& r) {
  Json j;
  j["samples"] = r.samples;
  j["max_deviation"] = r.max_deviation;
  j["deviation"] = r.deviation;
  if (r.smoother_empirical.size()) {
    j["smoother_deviation"] = r.smoother_deviation;
    j["smoother_empirical"] = matrix_to_json(r.smoother_empirical);
  }
  if (!r.orthogonality.empty()) j["orthogonality"] = r.orthogonality;
  return j;
}

void cmd_filter(const Json& cfg, Context& ctx, const RunOptions& ro) {
  allow_keys(cfg, {"command", "filter", "solver", "monte_carlo", "seed"}, "");
  Vector mean;
  const FilterProblem fp = filter_from_json(require(cfg, "filter", ""), "filter", &mean);
  const auto mc = monte_carlo_options(cfg, ro, fp.state_dim());
  const CovarianceTrajectory cov = run_filter_covariance(fp, riccati_options(cfg));
  const bool entries = fp.state_dim() <= 16;
  ctx.write("filter.csv", trajectory_table(fp.grid(), cov.P, "p", entries).str());
  Json j;
  j["state_dim"] = fp.state_dim();
  j["steps"] = fp.grid().steps();
  j["P"] = trajectory_json(cov.P);
  j["K"] = trajectory_json(cov.K);
  ctx.write_json("filter.json", j);
  if (mc) {
    MonteCarloOptions o = *mc;
    o.prior_mean = mean;
    const Index n = fp.grid().steps();
    o.orthogonality = {{n, 1}, {n, std::max<Index>(1, n / 2)}, {n, n}};
    ctx.write_json("monte_carlo.json", monte_carlo_json(monte_carlo_error_cov(fp, cov, o)));
  }
}

void cmd_smoother(const Json& cfg, Context& ctx, const RunOptions& ro) {
  allow_keys(cfg, {"command", "filter", "solver", "tau", "t", "monte_carlo", "seed"}, "");
  Vector mean;
  const FilterProblem fp = filter_from_json(require(cfg, "filter", ""), "filter", &mean);
  const auto mc = monte_carlo_options(cfg, ro, fp.state_dim());
  const TimeGrid& g = fp.grid();
  const Index t = rethrow_as_config("t", [&] { return g.index_of(number(cfg, "t", "", g.b())); });
  const Index tau = rethrow_as_config("tau", [&] { return g.index_of(number(cfg, "tau", "", g.t0())); });
  if (tau > t) throw config_error("tau", "must not exceed t");
  const CovarianceTrajectory cov = run_filter_covariance(fp, riccati_options(cfg));
  std::vector<Matrix> ps;
  CsvTable table;
  table.header = {"k", "t", "filter_trace", "smoother_trace", "smoother_op_norm", "smoother_nuclear"};
  for (Index k = 0; k <= t; ++k) {
    Matrix p = smoother_covariance(fp, cov, k, t);
    table.add_row({std::to_string(k), fmt(g.node(k)), fmt(cov.P[static_cast<size_t>(k)].trace()), fmt(p.trace()),
                   fmt(operator_norm(p)), fmt(nuclear_norm(p))});
    ps.push_back(std::move(p));
  }
  ctx.write("smoother.csv", table.str());
  Json j;
  j["tau"] = g.node(tau);
  j["t"] = g.node(t);
  j["P_tau_t"] = matrix_to_json(ps[static_cast<size_t>(tau)]);
  j["P_tau_tau"] = matrix_to_json(cov.P[static_cast<size_t>(tau)]);
  j["smoother"] = trajectory_json(ps);
  ctx.write_json("smoother.json", j);
  if (mc) {
    MonteCarloOptions o = *mc;
    o.prior_mean = mean;
    o.smoother = std::make_pair(tau, t);
    ctx.write_json("monte_carlo.json", monte_carlo_json(monte_carlo_error_cov(fp, cov, o)));
  }
}

// ---------------------------------------------------------------- placement

std::vector<Candidate> candidates_from_json(const Json& cfg, const AdvDiffConfig* ad) {
  std::vector<Candidate> out;
  if (cfg.contains("candidates")) {
    const Json& c = cfg["candidates"];
    if (!c.is_array() || c.empty()) throw config_error("candidates", "expected a non-empty array of coordinate lists");
    for (size_t i = 0; i < c.size(); ++i) {
      const std::string f = "candidates[" + std::to_string(i) + "]";
      if (!c[i].is_array() || c[i].empty()) throw config_error(f, "expected a coordinate list");
      Candidate cand;
      for (const auto& x : c[i]) {
        if (!x.is_number()) throw config_error(f, "expected numbers");
        cand.coords.push_back(x.get<double>());
      }
      out.push_back(std::move(cand));
    }
    return out;
  }
  if (!ad) throw config_error("candidates", "missing");
  Index nx = 5, ny = 5;
  double z = 0.0;
  if (cfg.contains("candidate_grid")) {
    const Json& g = cfg["candidate_grid"];
    allow_keys(g, {"nx", "ny", "z"}, "candidate_grid");
    nx = integer(g, "nx", "candidate_grid", 5);
    ny = integer(g, "ny", "candidate_grid", nx);
    z = number(g, "z", "candidate_grid", 0.0);
  }
  return grid_candidates(*ad, nx, ny, z);
}

Criterion criterion_from_json(const Json& cfg, const std::string& def) {
  const std::string s = text(cfg, "criterion", "", def);
  try {
    return criterion_from_string(s);
  } catch (const Error&) {
    throw config_error("criterion", "unknown criterion '" + s + "'");
  }
}

SweepOptions sweep_options(const Json& cfg, const RunOptions& ro) {
  SweepOptions o;
  o.threads = resolve_threads(ro);
  o.riccati = riccati_options(cfg);
  const std::string ev = text(cfg, "evaluator", "", "auto");
  if (ev == "auto")
    o.evaluator = SensorEvaluator::Auto;
  else if (ev == "recursion")
    o.evaluator = SensorEvaluator::Recursion;
  else if (ev == "information-form")
    o.evaluator = SensorEvaluator::InformationForm;
  else
    throw config_error("evaluator", "expected auto, recursion or information-form");
  return o;
}

EvalPoint eval_point(const Json& cfg, const TimeGrid& g) {
  EvalPoint e;
  e.t = rethrow_as_config("t", [&] { return g.index_of(number(cfg, "t", "", g.b())); });
  e.tau = rethrow_as_config("tau", [&] { return g.index_of(number(cfg, "tau", "", g.t0())); });
  e.t_eval = rethrow_as_config("t_eval", [&] { return g.index_of(number(cfg, "t_eval", "", g.t0())); });
  if (e.tau > e.t) throw config_error("tau", "must not exceed t");
  return e;
}

CsvTable placement_table(const PlacementResult& r) {
  CsvTable t;
  const size_t dims = r.entries.front().candidate.coords.size();
  for (size_t i = 0; i < dims; ++i) t.header.push_back("r" + std::to_string(i));
  t.header.insert(t.header.end(), {"cost", "status", "message"});
  for (const auto& e : r.entries) {
    std::vector<std::string> row;
    for (double c : e.candidate.coords) row.push_back(fmt(c));
    row.push_back(e.ok ? fmt(e.cost) : "nan");
    row.push_back(e.ok ? "ok" : "failed");
    std::string msg = e.error;
    for (char& ch : msg)
      if (ch == ',' || ch == '\n') ch = ';';
    row.push_back(msg);
    t.add_row(std::move(row));
  }
  return t;
}

Json candidate_json(const Candidate& c) { return Json(c.coords); }

Json placement_json(const PlacementResult& r, const std::string& settings_hash) {
  Json j;
  j["criterion"] = to_string(r.criterion);
  j["evaluator"] = r.evaluator;
  j["best"] = candidate_json(r.best);
  j["best_cost"] = r.best_cost;
  Json ties = Json::array();
  for (const auto& c : r.ties) ties.push_back(candidate_json(c));
  j["ties"] = ties;
  j["settings_hash"] = settings_hash;
  return j;
}

struct InlineFamily {
  Problem base;
  LocationFamily family;
  std::vector<Candidate> candidates;
};

InlineFamily inline_family(const Json& cfg) {
  InlineFamily f;
  const bool actuators = cfg.contains("actuators");
  const bool sensors = cfg.contains("sensors");
  if (actuators == sensors) throw config_error("actuators", "give exactly one of actuators or sensors");
  const std::string key = actuators ? "actuators" : "sensors";
  const Json& list = cfg[key];
  if (!list.is_array() || list.empty()) throw config_error(key, "expected a non-empty array");
  TimeGrid g;
  Index rows = 0, cols = 0;
  if (actuators) {
    LQProblem lq = lq_from_json(require(cfg, "lq", ""), "lq");
    g = lq.grid();
    rows = lq.state_dim();
    cols = lq.control_dim();
    f.base = lq;
    f.family.kind = LocationFamily::Kind::Actuator;
  } else {
    FilterProblem fp = filter_from_json(require(cfg, "filter", ""), "filter");
    g = fp.grid();
    rows = fp.obs_dim();
    cols = fp.state_dim();
    f.base = fp;
    f.family.kind = LocationFamily::Kind::Sensor;
  }
  auto table = std::make_shared<std::vector<std::pair<Candidate, Matrix>>>();
  const std::string opname = actuators ? "B" : "H";
  for (size_t i = 0; i < list.size(); ++i) {
    const std::string p = key + "[" + std::to_string(i) + "]";
    allow_keys(list[i], {"coords", opname}, p);
    Candidate c;
    const Json& co = require(list[i], "coords", p);
    if (!co.is_array() || co.empty()) throw config_error(p + ".coords", "expected a coordinate list");
    for (const auto& x : co) {
      if (!x.is_number()) throw config_error(p + ".coords", "expected numbers");
      c.coords.push_back(x.get<double>());
    }
    Matrix m = matrix(list[i], opname, p);
    expect_shape(m, rows, cols, p + "." + opname);
    f.candidates.push_back(c);
    table->emplace_back(std::move(c), std::move(m));
  }
  f.family.builder = [table, g](const Candidate& c) {
    for (const auto& [k, m] : *table)
      if (k == c) return OpValuedFunction::constant(g, m);
    throw Error(ErrorKind::Domain, "candidate not in the inline family");
  };
  return f;
}

void cmd_place(const Json& cfg, Context& ctx, const RunOptions& ro) {
  allow_keys(cfg, {"command", "advdiff", "lq", "filter", "actuators", "sensors", "criterion", "candidates",
                   "candidate_grid", "tau", "t", "t_eval", "evaluator", "solver", "seed"},
             "");
  const SweepOptions so = sweep_options(cfg, ro);
  PlacementResult res;
  Json settings;
  if (cfg.contains("advdiff")) {
    const AdvDiffConfig ad = advdiff_config_from_json(cfg["advdiff"], "advdiff");
    auto model = AdvDiffModel::build(ad);
    const std::vector<Candidate> cands = candidates_from_json(cfg, &ad);
    const Criterion crit = criterion_from_json(cfg, "filter-nuclear");
    if (crit != Criterion::FilterNuclear && crit != Criterion::SmootherNuclear)
      throw config_error("criterion", "advdiff placement uses filter-nuclear or smoother-nuclear");
    const EvalPoint ev = eval_point(cfg, model->time_grid());
    const Problem base = model->sensor_problem({0.5 * ad.lx, 0.5 * ad.ly, 0.0});
    res = sweep_costs(model->sensor_family(), base, cands, crit, ev, so);
    settings["advdiff"] = advdiff_config_to_json(ad);
  } else {
    InlineFamily f = inline_family(cfg);
    const Criterion crit = criterion_from_json(
        cfg, f.family.kind == LocationFamily::Kind::Actuator ? "lq-op-norm" : "filter-nuclear");
    const TimeGrid g = std::visit([](const auto& p) { return p.grid(); }, f.base);
    res = sweep_costs(f.family, f.base, f.candidates, crit, eval_point(cfg, g), so);
  }
  settings["criterion"] = to_string(res.criterion);
  settings["evaluator"] = res.evaluator;
  settings["tol"] = so.riccati.tol;
  ctx.write("placement.csv", placement_table(res).str());
  ctx.write_json("placement.json", placement_json(res, config_hash(settings)));
}

// ---------------------------------------------------------------- refinement

CsvTable refinement_table(const std::vector<RefinementRecord>& recs) {
  CsvTable t;
  t.header = {"level", "dim", "cost", "x", "y", "z", "ties", "relative_change", "displacement", "status"};
  for (size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    auto coord = [&](size_t k) { return r.ok && k < r.location.coords.size() ? fmt(r.location.coords[k]) : "nan"; };
    t.add_row({r.label, std::to_string(r.dim), r.ok ? fmt(r.cost) : "nan", coord(0), coord(1), coord(2),
               std::to_string(r.ties.size()), fmt(r.relative_change), fmt(r.displacement), r.ok ? "ok" : "failed"});
  }
  return t;
}

std::vector<Index> levels_from_json(const Json& cfg) {
  std::vector<Index> levels = {5, 10, 20};
  if (cfg.contains("levels")) {
    const Json& l = cfg["levels"];
    if (!l.is_array() || l.empty()) throw config_error("levels", "expected a non-empty array of grid sizes");
    levels.clear();
    for (const auto& v : l) {
      if (!v.is_number_integer() || v.get<long long>() < 1) throw config_error("levels", "expected positive integers");
      levels.push_back(static_cast<Index>(v.get<long long>()));
    }
  }
  return levels;
}

struct StudyOutput {
  std::vector<RefinementRecord> records;
  StabilityVerdict verdict;
};

StudyOutput run_study(const AdvDiffConfig& ad, const std::vector<Index>& levels, const std::vector<Candidate>& cands,
                      Criterion crit, const Json& cfg, const SweepOptions& so) {
  const auto specs = advdiff_levels(ad, levels);
  const TimeGrid g(ad.t0, ad.t1, ad.steps());
  EvalPoint ev = eval_point(cfg, g);
  StudyOutput out;
  out.records = refinement_study(specs, cands, crit, ev, so);
  if (out.records.size() >= 2) out.verdict = stability_test(out.records);
  return out;
}

Json study_json(const StudyOutput& s, const std::string& prior, Criterion crit) {
  Json j;
  j["criterion"] = to_string(crit);
  j["prior"] = prior;
  Json levels = Json::array();
  for (const auto& r : s.records) {
    Json l;
    l["label"] = r.label;
    l["dim"] = r.dim;
    l["ok"] = r.ok;
    if (r.ok) {
      l["cost"] = r.cost;
      l["location"] = candidate_json(r.location);
      Json ties = Json::array();
      for (const auto& c : r.ties) ties.push_back(candidate_json(c));
      l["ties"] = ties;
      l["evaluator"] = r.sweep.evaluator;
    } else {
      l["error"] = r.error;
    }
    levels.push_back(l);
  }
  j["levels"] = levels;
  if (s.records.size() >= 2) {
    j["stable_on_finest"] = s.verdict.stable;
    j["same_location_on_finest"] = s.verdict.same_location;
    j["relative_change_on_finest"] = s.verdict.relative_change;
  }
  return j;
}

void cmd_refine(const Json& cfg, Context& ctx, const RunOptions& ro) {
  allow_keys(cfg, {"command", "advdiff", "levels", "criterion", "candidates", "candidate_grid", "tau", "t",
                   "evaluator", "solver", "seed"},
             "");
  const AdvDiffConfig ad = advdiff_config_from_json(require(cfg, "advdiff", ""), "advdiff");
  const std::vector<Index> levels = levels_from_json(cfg);
  const std::vector<Candidate> cands = candidates_from_json(cfg, &ad);
  const Criterion crit = criterion_from_json(cfg, "filter-nuclear");
  if (crit != Criterion::FilterNuclear && crit != Criterion::SmootherNuclear)
    throw config_error("criterion", "advdiff refinement uses filter-nuclear or smoother-nuclear");
  for (Index l : levels) {
    AdvDiffConfig c = ad;
    c.nx = c.ny = l;
    rethrow_as_config("levels", [&] {
      c.validate();
      return 0;
    });
  }
  const StudyOutput s = run_study(ad, levels, cands, crit, cfg, sweep_options(cfg, ro));
  ctx.write("refinement.csv", refinement_table(s.records).str());
  for (const auto& r : s.records)
    if (r.ok) ctx.write("sweep_" + r.label.substr(r.label.find('=') + 1) + ".csv", placement_table(r.sweep).str());
  ctx.write_json("refinement.json", study_json(s, ad.prior == PriorKind::Nuclear ? "nuclear" : "scaled-identity", crit));
}

void cmd_figures(const Json& cfg, Context& ctx, const RunOptions& ro) {
  allow_keys(cfg, {"command", "advdiff", "levels", "figures", "candidates", "candidate_grid", "evaluator", "solver",
                   "seed"},
             "");
  const Json adj = cfg.contains("advdiff") ? cfg["advdiff"] : Json::object();
  const AdvDiffConfig ad = advdiff_config_from_json(adj, "advdiff");
  const std::vector<Index> levels = levels_from_json(cfg);
  const std::vector<Candidate> cands = candidates_from_json(cfg, &ad);
  std::vector<std::string> figs;
  if (cfg.contains("figures")) {
    const Json& f = cfg["figures"];
    if (!f.is_array() || f.empty()) throw config_error("figures", "expected a non-empty array");
    for (const auto& x : f) {
      if (!x.is_string()) throw config_error("figures", "expected names");
      figs.push_back(x.get<std::string>());
    }
  } else if (adj.contains("prior")) {
    figs = {"filter", "smoother"};
  } else {
    figs = {"fig1", "fig2", "fig3"};
  }
  const SweepOptions so = sweep_options(cfg, ro);
  Json index = Json::object();
  for (const auto& name : figs) {
    AdvDiffConfig c = ad;
    Criterion crit;
    std::string title;
    if (name == "fig1") {
      c.prior = PriorKind::ScaledIdentity;
      crit = Criterion::FilterNuclear;
      title = "Filter, final time, scaled-identity prior";
    } else if (name == "fig2") {
      c.prior = PriorKind::Nuclear;
      crit = Criterion::FilterNuclear;
      title = "Filter, final time, nuclear prior";
    } else if (name == "fig3") {
      c.prior = PriorKind::Nuclear;
      crit = Criterion::SmootherNuclear;
      title = "Smoother, initial time, nuclear prior";
    } else if (name == "filter" || name == "smoother") {
      crit = name == "filter" ? Criterion::FilterNuclear : Criterion::SmootherNuclear;
      title = std::string(name == "filter" ? "Filter, final time, " : "Smoother, initial time, ") +
              (c.prior == PriorKind::Nuclear ? "nuclear prior" : "scaled-identity prior");
    } else {
      throw config_error("figures", "unknown figure '" + name + "'");
    }
    const StudyOutput s = run_study(c, levels, cands, crit, Json::object(), so);
    const std::string csv = refinement_table(s.records).str();
    ctx.write(name + ".csv", csv);
    ctx.write(name + ".svg", emit_figure_svg(csv, title));
    index[name] = study_json(s, c.prior == PriorKind::Nuclear ? "nuclear" : "scaled-identity", crit);
  }
  ctx.write_json("figures.json", index);
}

}  // namespace

LQProblem lq_from_json(const Json& j, const std::string& path) {
  allow_keys(j, {"t0", "b", "steps", "A", "step", "B", "C", "F", "G"}, path);
  const TimeGrid g = grid_from_json(j, path);
  LQProblem p;
  p.T = rethrow_as_config(join(path, "A"), [&] { return evolution_from_json(j, g, path); });
  const Index n = p.T.dim();
  const Matrix b = matrix(j, "B", path);
  if (b.rows() != n) throw config_error(join(path, "B"), "row count must equal the state dimension");
  const Matrix c = matrix(j, "C", path);
  if (c.cols() != n) throw config_error(join(path, "C"), "column count must equal the state dimension");
  const Matrix f = matrix(j, "F", path);
  expect_shape(f, b.cols(), b.cols(), join(path, "F"));
  const Matrix gm = j.contains("G") ? matrix(j, "G", path) : Matrix::Zero(n, n);
  expect_shape(gm, n, n, join(path, "G"));
  p.B = OpValuedFunction::constant(g, b);
  p.C = OpValuedFunction::constant(g, c);
  p.F = OpValuedFunction::constant(g, f);
  p.G = gm;
  rethrow_as_config(path, [&] {
    p.validate();
    return 0;
  });
  return p;
}

FilterProblem filter_from_json(const Json& j, const std::string& path, Vector* prior_mean) {
  allow_keys(j, {"t0", "b", "steps", "A", "step", "D", "W", "Q", "H", "E", "V", "R", "P0", "prior_mean",
                 "noise_convention"},
             path);
  const TimeGrid g = grid_from_json(j, path);
  FilterProblem p;
  p.M = rethrow_as_config(join(path, "A"), [&] { return evolution_from_json(j, g, path); });
  const Index n = p.M.dim();
  Matrix d, w;
  if (j.contains("Q")) {
    if (j.contains("D") || j.contains("W")) throw config_error(join(path, "Q"), "give Q or D/W, not both");
    const Matrix q = matrix(j, "Q", path);
    expect_shape(q, n, n, join(path, "Q"));
    d = rethrow_as_config(join(path, "Q"), [&] { return psd_sqrt(q); });
    w = Matrix::Identity(n, n);
  } else if (j.contains("D") || j.contains("W")) {
    d = matrix(j, "D", path);
    if (d.rows() != n) throw config_error(join(path, "D"), "row count must equal the state dimension");
    w = matrix(j, "W", path);
    expect_shape(w, d.cols(), d.cols(), join(path, "W"));
  } else {
    d = Matrix::Zero(n, 1);
    w = Matrix::Zero(1, 1);
  }
  const Matrix h = matrix(j, "H", path);
  if (h.cols() != n) throw config_error(join(path, "H"), "column count must equal the state dimension");
  Matrix e, v;
  if (j.contains("R")) {
    if (j.contains("E") || j.contains("V")) throw config_error(join(path, "R"), "give R or E/V, not both");
    v = matrix(j, "R", path);
    expect_shape(v, h.rows(), h.rows(), join(path, "R"));
    e = Matrix::Identity(h.rows(), h.rows());
  } else {
    v = matrix(j, "V", path);
    e = j.contains("E") ? matrix(j, "E", path) : Matrix::Identity(h.rows(), h.rows());
    if (e.rows() != h.rows()) throw config_error(join(path, "E"), "row count must equal the observation dimension");
    expect_shape(v, e.cols(), e.cols(), join(path, "V"));
  }
  const Matrix p0 = matrix(j, "P0", path);
  expect_shape(p0, n, n, join(path, "P0"));
  p.D = OpValuedFunction::constant(g, d);
  p.W = OpValuedFunction::constant(g, w);
  p.H = OpValuedFunction::constant(g, h);
  p.E = OpValuedFunction::constant(g, e);
  p.V = OpValuedFunction::constant(g, v);
  p.P0 = p0;
  const std::string nc = text(j, "noise_convention", path, "intensity");
  if (nc == "intensity")
    p.noise = NoiseConvention::Intensity;
  else if (nc == "per-step")
    p.noise = NoiseConvention::PerStep;
  else
    throw config_error(join(path, "noise_convention"), "expected intensity or per-step");
  if (prior_mean) {
    *prior_mean = Vector::Zero(n);
    if (j.contains("prior_mean")) {
      const Matrix m = matrix(j, "prior_mean", path);
      expect_shape(m, n, 1, join(path, "prior_mean"));
      *prior_mean = m.col(0);
    }
  }
  rethrow_as_config(path, [&] {
    p.validate();
    return 0;
  });
  return p;
}

std::string config_hash(const Json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

Json error_json(const Error& e) {
  Json j;
  j["error"] = std::string(to_string(e.kind()));
  const std::string msg = e.what();
  if (e.kind() == ErrorKind::Config) {
    const auto pos = msg.find(": ");
    j["field"] = pos == std::string::npos ? "" : msg.substr(0, pos);
  }
  j["message"] = msg;
  return j;
}

RunReport run_experiment(const std::string& command, const Json& config, const std::string& out_dir,
                         const RunOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  if (!config.is_object()) throw config_error("<root>", "config must be a JSON object");
  if (config.contains("command") && (!config["command"].is_string() || config["command"].get<std::string>() != command))
    throw config_error("command", "does not match the requested command '" + command + "'");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create output directory " + out_dir);
  RunReport report;
  Context ctx{out_dir, &report};
  if (command == "riccati")
    cmd_riccati(config, ctx);
  else if (command == "filter")
    cmd_filter(config, ctx, opts);
  else if (command == "smoother")
    cmd_smoother(config, ctx, opts);
  else if (command == "place")
    cmd_place(config, ctx, opts);
  else if (command == "refine")
    cmd_refine(config, ctx, opts);
  else if (command == "figures")
    cmd_figures(config, ctx, opts);
  else
    throw config_error("command", "unknown command '" + command + "'");
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (opts.write_manifest) {
    Json m;
    m["command"] = command;
    m["config_hash"] = config_hash(config);
    if (opts.seed) m["seed"] = *opts.seed;
    m["threads"] = resolve_threads(opts);
    m["versions"] = {{"placeopt", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    m["artifacts"] = report.artifacts;
    m["wall_time_s"] = report.wall_time_s;
    write_text((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
  }
  return report;
}

int run_cli(const std::string& command, const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed, std::optional<int> threads, std::ostream& err) {
  Json cfg;
  try {
    std::ifstream f(config_path);
    if (!f) throw config_error("--config", "cannot open " + config_path);
    try {
      cfg = Json::parse(f);
    } catch (const Json::parse_error& e) {
      throw config_error("--config", std::string("malformed JSON: ") + e.what());
    }
    RunOptions o;
    o.seed = seed;
    o.threads = threads;
    run_experiment(command, cfg, out_dir, o);
    return 0;
  } catch (const Error& e) {
    err << error_json(e).dump() << "\n";
    return e.kind() == ErrorKind::Config ? 2 : 1;
  } catch (const std::exception& e) {
    Json j;
    j["error"] = "runtime";
    j["message"] = e.what();
    err << j.dump() << "\n";
    return 1;
  }
}

}  // namespace placeopt
