#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "placeopt/placement.hpp"

namespace placeopt {

struct HierarchyLevel {
  Index dim = 0;
  Matrix project;  // dim x fine
  Matrix lift;     // fine x dim
  std::string label;
};

class ProjectionHierarchy {
 public:
  ProjectionHierarchy() = default;
  ProjectionHierarchy(Index fine_dim, std::vector<HierarchyLevel> levels);

  // Level n keeps the first dims[n] columns of the orthonormal basis u.
  static ProjectionHierarchy from_orthonormal_basis(const Matrix& u, const std::vector<Index>& dims);

  Index fine_dim() const { return fine_dim_; }
  Index size() const { return static_cast<Index>(levels_.size()); }
  const HierarchyLevel& level(Index i) const;
  // Map from level `from` to level `to` through the fine space.
  Matrix inter_level(Index from, Index to) const;
  double project_lift_residual(Index i) const;
  bool is_identity(Index i) const;

 private:
  Index fine_dim_ = 0;
  std::vector<HierarchyLevel> levels_;
};

LQProblem project_problem(const LQProblem& p, const ProjectionHierarchy& h, Index level);
FilterProblem project_problem(const FilterProblem& p, const ProjectionHierarchy& h, Index level);
Problem project_problem(const Problem& p, const ProjectionHierarchy& h, Index level);

struct AssumptionReport {
  double evolution = 0.0;          // |T_n(t,s) P_n x - P_n T(t,s) x|
  double evolution_adjoint = 0.0;  // |T_n(t,s)^* P_n x - P_n T(t,s)^* x|
  double input = 0.0;              // |B_n u - P_n B u| (or D)
  double input_adjoint = 0.0;      // |B_n^* P_n x - B^* x|
  double output = 0.0;             // |C_n P_n x - C x| (or H)
  double output_adjoint = 0.0;     // |C_n^* y - P_n C^* y|
  double terminal = 0.0;           // |G_n P_n x - P_n G x| (or P0)
  double lambda_reference = 0.0;   // sampled sup |T(t,s)|
  double lambda_level = 0.0;       // sampled sup |T_n(t,s)|
  Index samples = 0;
};

// Compares a level problem with the reference through the hierarchy. Without
// a level problem the projected reference is used. Probe vectors are standard
// Gaussian unless given as columns of `probes`.
AssumptionReport assumption_residuals(const ProjectionHierarchy& h, const Problem& reference, Index level,
                                      Index probes, std::uint64_t seed, const Problem* level_problem = nullptr,
                                      const Matrix* probe_vectors = nullptr);

struct LevelSpec {
  std::string label;
  Index dim = 0;
  std::function<Problem()> build;
  LocationFamily family;
};

struct RefinementRecord {
  std::string label;
  Index dim = 0;
  bool ok = false;
  double cost = 0.0;
  Candidate location;
  std::vector<Candidate> ties;
  double relative_change = 0.0;  // vs previous level; 0 for the first
  double displacement = 0.0;     // Euclidean, vs previous level
  std::string error;
  PlacementResult sweep;
};

std::vector<RefinementRecord> refinement_study(const std::vector<LevelSpec>& levels,
                                               const std::vector<Candidate>& candidates, Criterion criterion,
                                               const EvalPoint& eval = {}, const SweepOptions& opts = {});

// Levels obtained by projecting a reference problem and family through a hierarchy.
std::vector<LevelSpec> levels_from_hierarchy(const Problem& reference, const LocationFamily& family,
                                             const ProjectionHierarchy& h);

struct StabilityVerdict {
  bool same_location = false;
  double relative_change = 0.0;
  bool stable = false;
};

// Two-finest-levels test: same optimal location and relative cost change <= rel_tol.
StabilityVerdict stability_test(const std::vector<RefinementRecord>& records, double rel_tol = 0.05);

}  // namespace placeopt
