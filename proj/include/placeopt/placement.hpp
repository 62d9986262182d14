#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "placeopt/kalman.hpp"

namespace placeopt {

using Problem = std::variant<LQProblem, FilterProblem>;

enum class Criterion { LqOperatorNorm, LqNuclear, FilterNuclear, SmootherNuclear };

std::string to_string(Criterion c);
Criterion criterion_from_string(const std::string& s);

struct Candidate {
  std::vector<double> coords;
  bool operator<(const Candidate& o) const { return coords < o.coords; }
  bool operator==(const Candidate& o) const { return coords == o.coords; }
};

struct LocationSpace {
  std::vector<std::pair<double, double>> box;
  std::vector<Candidate> candidates;
  void validate() const;
  bool contains(const Candidate& c) const;
};

// Candidate-dependent input operator (actuator) or observation operator (sensor).
struct LocationFamily {
  enum class Kind { Actuator, Sensor };
  Kind kind = Kind::Sensor;
  std::function<OpValuedFunction(const Candidate&)> builder;
  std::optional<double> continuity_modulus;
};

// Evaluation nodes: t_eval for the LQ criteria, (tau, t) for the smoother,
// t for the filter. t < 0 means the final node.
struct EvalPoint {
  Index t_eval = 0;
  Index tau = 0;
  Index t = -1;
};

enum class SensorEvaluator { Auto, Recursion, InformationForm };

struct SweepOptions {
  SensorEvaluator evaluator = SensorEvaluator::Auto;
  RiccatiOptions riccati;
  bool use_ire2 = false;
  int threads = 1;
};

struct SweepEntry {
  Candidate candidate;
  double cost = 0.0;
  bool ok = false;
  std::string error;
};

struct PlacementResult {
  Criterion criterion = Criterion::FilterNuclear;
  std::vector<SweepEntry> entries;  // in enumeration order
  Candidate best;
  double best_cost = 0.0;
  std::vector<Candidate> ties;
  std::string evaluator;
};

PlacementResult sweep_costs(const LocationFamily& family, const Problem& base,
                            const std::vector<Candidate>& candidates, Criterion criterion,
                            const EvalPoint& eval = {}, const SweepOptions& opts = {});

struct Selection {
  Candidate best;
  double cost = 0.0;
  std::vector<Candidate> ties;
};

// Minimum cost; costs within rel_tol of the minimum tie and the
// lexicographically smallest tied candidate wins.
Selection select_optimal(const PlacementResult& result, double rel_tol = 1e-10);

// Problem with the family's operator for candidate r substituted.
Problem instantiate(const LocationFamily& family, const Problem& base, const Candidate& r);

// Riccati or covariance operator whose norm defines the criterion.
Matrix criterion_operator(const Problem& p, Criterion criterion, const EvalPoint& eval,
                          const SweepOptions& opts = {});
double criterion_value(const Matrix& op, Criterion criterion);

struct ContinuityRow {
  double radius = 0.0;
  Candidate candidate;
  double operator_deviation = 0.0;
  double cost_deviation = 0.0;
  double value_deviation = 0.0;
};

struct ContinuityReport {
  std::vector<ContinuityRow> rows;
  bool monotone = true;
  bool blowup = false;
};

ContinuityReport continuity_probe(const LocationFamily& family, const Problem& base, Criterion criterion,
                                  const EvalPoint& eval, const Candidate& r0, const std::vector<double>& radii,
                                  const std::vector<double>& direction, const LocationSpace& space,
                                  double slack = 0.1, const SweepOptions& opts = {});

// Information-form covariance for Q = 0:
// P(tau|t) = X_tau (I - W^T S^{-1} W) X_tau^T,  S = I + W W^T.
class InformationEvaluator {
 public:
  InformationEvaluator(const FilterProblem& base, Index tau, Index t);
  Index tau() const { return tau_; }
  Index t() const { return t_; }
  // Whitened observation rows R_d^{-1/2} H_s X_s over nodes s = 1..t for each
  // observation operator, from a single propagation of the prior factor.
  std::vector<Matrix> rows(const std::vector<OpValuedFunction>& hs) const;
  // Trace of P(tau|t) given the rows.
  double trace(const Matrix& w) const;
  // Full covariance P(tau|t).
  Matrix covariance(const Matrix& w) const;
  // r x r core I - W^T S^{-1} W.
  Matrix core(const Matrix& w) const;
  // X_tau; captured during rows() when possible.
  const Matrix& X() const;

 private:
  void set_x(const Matrix& x) const;

  const FilterProblem* fp_;
  Index tau_, t_;
  Matrix factor_;
  mutable Matrix x_tau_;
  mutable Matrix xtx_;
  mutable bool have_x_ = false;
};

bool information_form_applicable(const FilterProblem& fp);

}  // namespace placeopt
