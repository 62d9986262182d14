#include "placeopt/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <unsupported/Eigen/MatrixFunctions>

#include "placeopt/random.hpp"

namespace placeopt {

Matrix StepMap::dense() const { return apply(Matrix::Identity(dim(), dim())); }

DenseStep::DenseStep(Matrix m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols()) throw Error(ErrorKind::Shape, "step map must be square");
  detail::require_finite(m_, "step map");
}

PerturbedStep::PerturbedStep(StepPtr base, Matrix factor, PerturbSide side)
    : base_(std::move(base)), factor_(std::move(factor)), side_(side) {
  if (factor_.rows() != base_->dim() || factor_.cols() != base_->dim())
    throw Error(ErrorKind::Shape, "perturbation factor does not match the state dimension");
}

Matrix PerturbedStep::apply(const Matrix& x) const {
  return side_ == PerturbSide::Pre ? base_->apply(factor_ * x) : Matrix(factor_ * base_->apply(x));
}

Matrix PerturbedStep::apply_adjoint(const Matrix& x) const {
  return side_ == PerturbSide::Pre ? Matrix(factor_.transpose() * base_->apply_adjoint(x))
                                   : base_->apply_adjoint(factor_.transpose() * x);
}

ComposedStep::ComposedStep(StepPtr first, StepPtr second)
    : first_(std::move(first)), second_(std::move(second)) {
  if (first_->dim() != second_->dim()) throw Error(ErrorKind::Shape, "composed steps differ in dimension");
}

EvolutionOperator::EvolutionOperator(TimeGrid grid, std::vector<StepPtr> steps)
    : grid_(grid), steps_(std::move(steps)) {
  if (steps_.empty()) throw Error(ErrorKind::Grid, "evolution operator needs step maps");
  invariant_ = steps_.size() == 1;
  if (!invariant_ && static_cast<Index>(steps_.size()) != grid_.steps())
    throw Error(ErrorKind::Grid, "evolution operator needs one step map per grid interval");
  dim_ = steps_.front()->dim();
  for (const auto& s : steps_) {
    if (!s) throw Error(ErrorKind::InvalidInput, "null step map");
    if (s->dim() != dim_) throw Error(ErrorKind::Shape, "step maps differ in dimension");
  }
}

EvolutionOperator EvolutionOperator::from_matrices(const TimeGrid& grid,
                                                   const std::vector<Matrix>& steps) {
  if (static_cast<Index>(steps.size()) != grid.steps())
    throw Error(ErrorKind::Grid, "need one step matrix per grid interval");
  std::vector<StepPtr> s;
  s.reserve(steps.size());
  for (const auto& m : steps) s.push_back(std::make_shared<DenseStep>(m));
  return EvolutionOperator(grid, std::move(s));
}

EvolutionOperator EvolutionOperator::time_invariant(const TimeGrid& grid, const Matrix& step) {
  return EvolutionOperator(grid, {std::make_shared<DenseStep>(step)});
}

EvolutionOperator EvolutionOperator::from_generator(const TimeGrid& grid, const Matrix& a) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::Shape, "generator must be square");
  detail::require_finite(a, "generator");
  Matrix e = (a * grid.dt()).exp();
  return time_invariant(grid, e);
}

const StepPtr& EvolutionOperator::step_ptr(Index k) const {
  if (k < 0 || k >= grid_.steps()) throw Error(ErrorKind::Grid, "step index out of range");
  return invariant_ ? steps_.front() : steps_[static_cast<size_t>(k)];
}

const StepMap& EvolutionOperator::step(Index k) const { return *step_ptr(k); }

void EvolutionOperator::check_pair(Index j, Index i) const {
  if (i < 0 || j > grid_.steps()) throw Error(ErrorKind::Grid, "node index out of range");
  if (j < i) throw Error(ErrorKind::Ordering, "evolution operator evaluated with t < s");
}

Matrix EvolutionOperator::propagate(Index j, Index i, const Matrix& x) const {
  check_pair(j, i);
  if (x.rows() != dim_) throw Error(ErrorKind::Shape, "propagate: dimension mismatch");
  Matrix y = x;
  for (Index k = i; k < j; ++k) y = step(k).apply(y);
  return y;
}

Matrix EvolutionOperator::propagate_adjoint(Index j, Index i, const Matrix& x) const {
  check_pair(j, i);
  if (x.rows() != dim_) throw Error(ErrorKind::Shape, "propagate_adjoint: dimension mismatch");
  Matrix y = x;
  for (Index k = j - 1; k >= i; --k) y = step(k).apply_adjoint(y);
  return y;
}

Matrix EvolutionOperator::evaluate(Index j, Index i) const {
  check_pair(j, i);
  return propagate(j, i, Matrix::Identity(dim_, dim_));
}

EvolutionOperator EvolutionOperator::time_reversed_adjoint() const {
  if (invariant_) return EvolutionOperator(grid_, {std::make_shared<AdjointStep>(steps_.front())});
  std::vector<StepPtr> s;
  const Index n = grid_.steps();
  s.reserve(static_cast<size_t>(n));
  for (Index k = 0; k < n; ++k) s.push_back(std::make_shared<AdjointStep>(step_ptr(n - 1 - k)));
  return EvolutionOperator(grid_, std::move(s));
}

namespace {

// max |Phi(t_a, t_b)| over all pairs i <= b <= a <= j
double all_pairs_sup(const EvolutionOperator& phi, Index i, Index j) {
  double lam = 1.0;
  for (Index b = i; b <= j; ++b) {
    Matrix p = Matrix::Identity(phi.dim(), phi.dim());
    for (Index a = b; a < j; ++a) {
      p = phi.step(a).apply(p);
      lam = std::max(lam, operator_norm(p));
    }
  }
  return lam;
}

}  // namespace

AxiomReport verify_evolution_axioms(const EvolutionOperator& phi, Index samples, double tol,
                                    std::uint64_t seed) {
  AxiomReport r;
  const Index n = phi.grid().steps();
  const Index d = phi.dim();
  for (Index k : {Index{0}, n / 2, n}) {
    r.identity_residual =
        std::max(r.identity_residual, operator_norm(Matrix(phi.evaluate(k, k) - Matrix::Identity(d, d))));
  }
  NormalStream rng(seed);
  for (Index s = 0; s < samples; ++s) {
    Index a = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(n + 1));
    Index b = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(n + 1));
    Index c = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(n + 1));
    Index lo = std::min({a, b, c}), hi = std::max({a, b, c});
    Index mid = a + b + c - lo - hi;
    Matrix inner = phi.evaluate(mid, lo);
    Matrix outer = phi.propagate(hi, mid, inner);
    Matrix whole = phi.evaluate(hi, lo);
    const double scale = std::max(1.0, operator_norm(whole));
    r.max_cocycle_residual = std::max(r.max_cocycle_residual, operator_norm(Matrix(outer - whole)) / scale);
    r.lambda_hat = std::max({r.lambda_hat, operator_norm(inner), operator_norm(whole)});
    ++r.triples_checked;
  }
  if (n <= 64) {
    r.lambda_hat = std::max(r.lambda_hat, all_pairs_sup(phi, 0, n));
  } else {
    r.lambda_hat = std::max(r.lambda_hat, 1.0);
    for (Index k = 0; k < n; ++k) r.lambda_hat = std::max(r.lambda_hat, operator_norm(phi.step(k).dense()));
  }
  r.ok = r.identity_residual <= tol && r.max_cocycle_residual <= tol;
  return r;
}

EvolutionOperator perturb_evolution(const EvolutionOperator& phi, const OpValuedFunction& d,
                                    PerturbSide side) {
  if (d.grid() != phi.grid()) throw Error(ErrorKind::Grid, "perturbation sampled on a different grid");
  if (d.rows() != phi.dim() || d.cols() != phi.dim())
    throw Error(ErrorKind::Shape, "perturbation must be a square operator on the state space");
  const Index n = phi.grid().steps();
  const double dt = phi.grid().dt();
  const Matrix eye = Matrix::Identity(phi.dim(), phi.dim());
  std::vector<StepPtr> steps;
  steps.reserve(static_cast<size_t>(n));
  for (Index k = 0; k < n; ++k) {
    const Matrix& dk = side == PerturbSide::Pre ? d[k] : d[k + 1];
    steps.push_back(std::make_shared<PerturbedStep>(phi.step_ptr(k), eye + dt * dk, side));
  }
  return EvolutionOperator(phi.grid(), std::move(steps));
}

PerturbationReport perturbation_series(const EvolutionOperator& phi, const OpValuedFunction& d,
                                       Index j, Index i, Index max_terms, double tol) {
  if (j < i) throw Error(ErrorKind::Ordering, "perturbation_series needs j >= i");
  if (d.grid() != phi.grid()) throw Error(ErrorKind::Grid, "perturbation sampled on a different grid");
  const Index dim = phi.dim();
  const double dt = phi.grid().dt();
  PerturbationReport rep;
  rep.lambda_hat = all_pairs_sup(phi, i, j);
  for (Index k = i; k < j; ++k) rep.lambda_d = std::max(rep.lambda_d, operator_norm(d[k]));
  const double span = static_cast<double>(j - i) * dt;
  const double x = rep.lambda_hat * rep.lambda_d * span;

  // term[k - i] holds T_n(t_k, t_i)
  std::vector<Matrix> term;
  term.reserve(static_cast<size_t>(j - i + 1));
  term.push_back(Matrix::Identity(dim, dim));
  for (Index k = i; k < j; ++k) term.push_back(phi.step(k).apply(term.back()));
  Matrix sum = term.back();
  rep.term_norms.push_back(operator_norm(term.back()));
  rep.term_bounds.push_back(rep.lambda_hat);
  double fact = 1.0;
  double partial = 1.0;
  double power = 1.0;
  for (Index n = 1; n <= max_terms; ++n) {
    std::vector<Matrix> next;
    next.reserve(term.size());
    next.push_back(Matrix::Zero(dim, dim));
    for (Index k = i; k < j; ++k) {
      const size_t at = static_cast<size_t>(k - i);
      next.push_back(phi.step(k).apply(next[at] + dt * d[k] * term[at]));
    }
    term.swap(next);
    sum += term.back();
    fact *= static_cast<double>(n);
    power *= x;
    partial += power / fact;
    const double tn = operator_norm(term.back());
    rep.term_norms.push_back(tn);
    rep.term_bounds.push_back(rep.lambda_hat * power / fact);
    if (tn <= tol * std::max(1.0, operator_norm(sum))) break;
  }
  const EvolutionOperator pert = perturb_evolution(phi, d, PerturbSide::Pre);
  rep.residual = operator_norm(Matrix(pert.evaluate(j, i) - sum));
  rep.tail_bound = rep.lambda_hat * std::max(0.0, std::exp(x) - partial);
  return rep;
}

}  // namespace placeopt
