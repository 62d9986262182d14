#include "placeopt/approximation.hpp"

#include <cmath>

#include "placeopt/random.hpp"

namespace placeopt {

ProjectionHierarchy::ProjectionHierarchy(Index fine_dim, std::vector<HierarchyLevel> levels)
    : fine_dim_(fine_dim), levels_(std::move(levels)) {
  if (levels_.empty()) throw Error(ErrorKind::Hierarchy, "hierarchy needs at least one level");
  Index prev = 0;
  for (size_t i = 0; i < levels_.size(); ++i) {
    auto& l = levels_[i];
    if (l.dim <= prev) throw Error(ErrorKind::Hierarchy, "hierarchy levels must increase in dimension");
    if (l.project.rows() != l.dim || l.project.cols() != fine_dim || l.lift.rows() != fine_dim || l.lift.cols() != l.dim)
      throw Error(ErrorKind::Hierarchy, "projection or lift has the wrong shape");
    if (project_lift_residual(static_cast<Index>(i)) > 1e-10)
      throw Error(ErrorKind::Hierarchy, "project after lift is not the identity");
    if (l.label.empty()) l.label = std::to_string(l.dim);
    prev = l.dim;
  }
}

ProjectionHierarchy ProjectionHierarchy::from_orthonormal_basis(const Matrix& u, const std::vector<Index>& dims) {
  std::vector<HierarchyLevel> levels;
  for (Index d : dims) {
    if (d < 1 || d > u.cols()) throw Error(ErrorKind::Hierarchy, "level dimension outside the basis");
    HierarchyLevel l;
    l.dim = d;
    l.lift = u.leftCols(d);
    l.project = l.lift.transpose();
    levels.push_back(std::move(l));
  }
  return ProjectionHierarchy(u.rows(), std::move(levels));
}

const HierarchyLevel& ProjectionHierarchy::level(Index i) const {
  if (i < 0 || i >= size()) throw Error(ErrorKind::Hierarchy, "hierarchy level does not exist");
  return levels_[static_cast<size_t>(i)];
}

Matrix ProjectionHierarchy::inter_level(Index from, Index to) const {
  return level(to).project * level(from).lift;
}

double ProjectionHierarchy::project_lift_residual(Index i) const {
  const auto& l = levels_[static_cast<size_t>(i)];
  return (l.project * l.lift - Matrix::Identity(l.dim, l.dim)).lpNorm<Eigen::Infinity>();
}

bool ProjectionHierarchy::is_identity(Index i) const {
  const auto& l = level(i);
  return l.dim == fine_dim_ && l.project.isIdentity(1e-15) && l.lift.isIdentity(1e-15);
}

namespace {

class ProjectedStep final : public StepMap {
 public:
  ProjectedStep(StepPtr base, const Matrix& project, const Matrix& lift)
      : base_(std::move(base)), project_(project), lift_(lift) {}
  Index dim() const override { return project_.rows(); }
  Matrix apply(const Matrix& x) const override { return project_ * base_->apply(lift_ * x); }
  Matrix apply_adjoint(const Matrix& x) const override {
    return lift_.transpose() * base_->apply_adjoint(project_.transpose() * x);
  }

 private:
  StepPtr base_;
  Matrix project_, lift_;
};

EvolutionOperator project_evolution(const EvolutionOperator& t, const HierarchyLevel& l) {
  std::vector<StepPtr> steps;
  const Index n = t.grid().steps();
  bool invariant = true;
  for (Index k = 1; k < n && invariant; ++k) invariant = t.step_ptr(k) == t.step_ptr(0);
  if (invariant) return EvolutionOperator(t.grid(), {std::make_shared<ProjectedStep>(t.step_ptr(0), l.project, l.lift)});
  for (Index k = 0; k < n; ++k) steps.push_back(std::make_shared<ProjectedStep>(t.step_ptr(k), l.project, l.lift));
  return EvolutionOperator(t.grid(), std::move(steps));
}

void check_fine(Index dim, const ProjectionHierarchy& h) {
  if (dim != h.fine_dim()) throw Error(ErrorKind::Hierarchy, "problem dimension does not match the hierarchy");
}

}  // namespace

LQProblem project_problem(const LQProblem& p, const ProjectionHierarchy& h, Index level) {
  check_fine(p.state_dim(), h);
  if (h.is_identity(level)) return p;
  const auto& l = h.level(level);
  LQProblem q;
  q.T = project_evolution(p.T, l);
  q.B = p.B.map([&](const Matrix& b) { return Matrix(l.project * b); });
  q.C = p.C.map([&](const Matrix& c) { return Matrix(c * l.lift); });
  q.F = p.F;
  q.G = symmetrize(Matrix(l.project * p.G * l.project.transpose()));
  return q;
}

FilterProblem project_problem(const FilterProblem& p, const ProjectionHierarchy& h, Index level) {
  check_fine(p.state_dim(), h);
  if (h.is_identity(level)) return p;
  const auto& l = h.level(level);
  FilterProblem q = p;
  q.M = project_evolution(p.M, l);
  q.D = p.D.map([&](const Matrix& d) { return Matrix(l.project * d); });
  q.H = p.H.map([&](const Matrix& hh) { return Matrix(hh * l.lift); });
  q.P0 = symmetrize(Matrix(l.project * p.P0 * l.project.transpose()));
  q.P0_factor = p.P0_factor.size() ? Matrix(l.project * p.P0_factor) : Matrix();
  if (p.B) q.B = p.B->map([&](const Matrix& b) { return Matrix(l.project * b); });
  return q;
}

Problem project_problem(const Problem& p, const ProjectionHierarchy& h, Index level) {
  return std::visit([&](const auto& q) -> Problem { return project_problem(q, h, level); }, p);
}

namespace {

struct View {
  const EvolutionOperator* T;
  const OpValuedFunction* in;
  const OpValuedFunction* out;
  const Matrix* terminal;
};

View view_of(const Problem& p) {
  if (const auto* lq = std::get_if<LQProblem>(&p)) return {&lq->T, &lq->B, &lq->C, &lq->G};
  const auto& fp = std::get<FilterProblem>(p);
  return {&fp.M, &fp.D, &fp.H, &fp.P0};
}

}  // namespace

AssumptionReport assumption_residuals(const ProjectionHierarchy& h, const Problem& reference, Index level,
                                      Index probes, std::uint64_t seed, const Problem* level_problem,
                                      const Matrix* probe_vectors) {
  if (probes < 1 && !probe_vectors) throw Error(ErrorKind::InvalidInput, "need at least one probe");
  const Problem projected = level_problem ? *level_problem : project_problem(reference, h, level);
  const View ref = view_of(reference);
  const View lev = view_of(projected);
  const auto& l = h.level(level);
  check_fine(ref.T->dim(), h);
  if (lev.T->dim() != l.dim) throw Error(ErrorKind::Hierarchy, "level problem does not match the level dimension");
  const Index n = ref.T->grid().steps();
  NormalStream rng(seed);
  Matrix xs = probe_vectors ? *probe_vectors : rng.normal_matrix(h.fine_dim(), probes);
  if (xs.rows() != h.fine_dim()) throw Error(ErrorKind::Shape, "probe vectors have the wrong dimension");
  AssumptionReport rep;
  rep.lambda_reference = 1.0;
  rep.lambda_level = 1.0;
  for (Index i = 0; i < xs.cols(); ++i) {
    const Vector x = xs.col(i) / std::max(xs.col(i).norm(), 1e-300);
    const Vector px = l.project * x;
    Index s = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(n + 1));
    Index t = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(n + 1));
    if (s > t) std::swap(s, t);
    if (i == 0) {
      s = 0;
      t = n;
    }
    const Vector tx = ref.T->propagate(t, s, x);
    const Vector tnx = lev.T->propagate(t, s, px);
    rep.evolution = std::max(rep.evolution, (tnx - l.project * tx).norm());
    const Vector tax = ref.T->propagate_adjoint(t, s, x);
    const Vector tanx = lev.T->propagate_adjoint(t, s, px);
    rep.evolution_adjoint = std::max(rep.evolution_adjoint, (tanx - l.project * tax).norm());
    rep.lambda_reference = std::max(rep.lambda_reference, tx.norm());
    rep.lambda_level = std::max(rep.lambda_level, tnx.norm() / std::max(px.norm(), 1e-300));

    const Matrix& bin = (*ref.in)[s];
    const Matrix& bn = (*lev.in)[s];
    const Vector u = rng.normal_vector(bin.cols()).normalized();
    rep.input = std::max(rep.input, (bn * u - l.project * (bin * u)).norm());
    rep.input_adjoint = std::max(rep.input_adjoint, (bn.transpose() * px - bin.transpose() * x).norm());
    const Matrix& c = (*ref.out)[s];
    const Matrix& cn = (*lev.out)[s];
    rep.output = std::max(rep.output, (cn * px - c * x).norm());
    const Vector y = rng.normal_vector(c.rows()).normalized();
    rep.output_adjoint = std::max(rep.output_adjoint, (cn.transpose() * y - l.project * (c.transpose() * y)).norm());
    rep.terminal = std::max(rep.terminal, (*lev.terminal * px - l.project * (*ref.terminal * x)).norm());
    ++rep.samples;
  }
  return rep;
}

std::vector<RefinementRecord> refinement_study(const std::vector<LevelSpec>& levels,
                                               const std::vector<Candidate>& candidates, Criterion criterion,
                                               const EvalPoint& eval, const SweepOptions& opts) {
  if (levels.size() < 1) throw Error(ErrorKind::InvalidInput, "refinement study needs levels");
  std::vector<RefinementRecord> out;
  for (const auto& lv : levels) {
    RefinementRecord rec;
    rec.label = lv.label;
    rec.dim = lv.dim;
    try {
      const Problem p = lv.build();
      rec.sweep = sweep_costs(lv.family, p, candidates, criterion, eval, opts);
      rec.cost = rec.sweep.best_cost;
      rec.location = rec.sweep.best;
      rec.ties = rec.sweep.ties;
      rec.ok = true;
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    if (!out.empty() && out.back().ok && rec.ok) {
      const auto& prev = out.back();
      rec.relative_change = std::abs(rec.cost - prev.cost) / std::max(std::abs(prev.cost), 1e-300);
      double d = 0.0;
      for (size_t i = 0; i < rec.location.coords.size(); ++i) {
        const double di = rec.location.coords[i] - prev.location.coords[i];
        d += di * di;
      }
      rec.displacement = std::sqrt(d);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<LevelSpec> levels_from_hierarchy(const Problem& reference, const LocationFamily& family,
                                             const ProjectionHierarchy& h) {
  std::vector<LevelSpec> out;
  for (Index i = 0; i < h.size(); ++i) {
    const HierarchyLevel& l = h.level(i);
    LevelSpec s;
    s.label = l.label;
    s.dim = l.dim;
    s.build = [reference, h, i] { return project_problem(reference, h, i); };
    s.family.kind = family.kind;
    s.family.continuity_modulus = family.continuity_modulus;
    const bool identity = h.is_identity(i);
    if (family.kind == LocationFamily::Kind::Actuator)
      s.family.builder = [family, l, identity](const Candidate& c) {
        OpValuedFunction b = family.builder(c);
        return identity ? b : b.map([&](const Matrix& m) { return Matrix(l.project * m); });
      };
    else
      s.family.builder = [family, l, identity](const Candidate& c) {
        OpValuedFunction hh = family.builder(c);
        return identity ? hh : hh.map([&](const Matrix& m) { return Matrix(m * l.lift); });
      };
    out.push_back(std::move(s));
  }
  return out;
}

StabilityVerdict stability_test(const std::vector<RefinementRecord>& records, double rel_tol) {
  if (records.size() < 2) throw Error(ErrorKind::InvalidInput, "stability test needs at least two levels");
  const auto& a = records[records.size() - 2];
  const auto& b = records.back();
  StabilityVerdict v;
  if (!a.ok || !b.ok) return v;
  v.same_location = a.location == b.location;
  v.relative_change = b.relative_change;
  v.stable = v.same_location && v.relative_change <= rel_tol;
  return v;
}

}  // namespace placeopt
