#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "placeopt/operators.hpp"

namespace placeopt {

// One step Phi(t_{k+1}, t_k) of a mild evolution operator.
class StepMap {
 public:
  virtual ~StepMap() = default;
  virtual Index dim() const = 0;
  virtual Matrix apply(const Matrix& x) const = 0;
  virtual Matrix apply_adjoint(const Matrix& x) const = 0;
  virtual Matrix dense() const;
};

using StepPtr = std::shared_ptr<const StepMap>;

class DenseStep final : public StepMap {
 public:
  explicit DenseStep(Matrix m);
  Index dim() const override { return m_.rows(); }
  Matrix apply(const Matrix& x) const override { return m_ * x; }
  Matrix apply_adjoint(const Matrix& x) const override { return m_.transpose() * x; }
  Matrix dense() const override { return m_; }
  const Matrix& matrix() const { return m_; }

 private:
  Matrix m_;
};

class AdjointStep final : public StepMap {
 public:
  explicit AdjointStep(StepPtr base) : base_(std::move(base)) {}
  Index dim() const override { return base_->dim(); }
  Matrix apply(const Matrix& x) const override { return base_->apply_adjoint(x); }
  Matrix apply_adjoint(const Matrix& x) const override { return base_->apply(x); }

 private:
  StepPtr base_;
};

enum class PerturbSide { Pre, Post };

// Pre: Phi (I + dt D); Post: (I + dt D) Phi.
class PerturbedStep final : public StepMap {
 public:
  PerturbedStep(StepPtr base, Matrix factor, PerturbSide side);
  Index dim() const override { return base_->dim(); }
  Matrix apply(const Matrix& x) const override;
  Matrix apply_adjoint(const Matrix& x) const override;

 private:
  StepPtr base_;
  Matrix factor_;
  PerturbSide side_;
};

// Product of two steps: second * first.
class ComposedStep final : public StepMap {
 public:
  ComposedStep(StepPtr first, StepPtr second);
  Index dim() const override { return first_->dim(); }
  Matrix apply(const Matrix& x) const override { return second_->apply(first_->apply(x)); }
  Matrix apply_adjoint(const Matrix& x) const override {
    return first_->apply_adjoint(second_->apply_adjoint(x));
  }

 private:
  StepPtr first_, second_;
};

class EvolutionOperator {
 public:
  EvolutionOperator() = default;
  EvolutionOperator(TimeGrid grid, std::vector<StepPtr> steps);

  static EvolutionOperator from_matrices(const TimeGrid& grid, const std::vector<Matrix>& steps);
  static EvolutionOperator time_invariant(const TimeGrid& grid, const Matrix& step);
  // Steps exp(A dt) for a bounded generator A.
  static EvolutionOperator from_generator(const TimeGrid& grid, const Matrix& a);

  const TimeGrid& grid() const { return grid_; }
  Index dim() const { return dim_; }
  const StepMap& step(Index k) const;
  const StepPtr& step_ptr(Index k) const;

  // Phi(t_j, t_i) for j >= i.
  Matrix evaluate(Index j, Index i) const;
  Matrix propagate(Index j, Index i, const Matrix& x) const;
  // Phi(t_j, t_i)^T x.
  Matrix propagate_adjoint(Index j, Index i, const Matrix& x) const;

  // Psi(t, s) = Phi(t0 + b - s, t0 + b - t)^T on the same grid.
  EvolutionOperator time_reversed_adjoint() const;

 private:
  void check_pair(Index j, Index i) const;

  TimeGrid grid_;
  std::vector<StepPtr> steps_;
  bool invariant_ = false;
  Index dim_ = 0;
};

struct AxiomReport {
  double identity_residual = 0.0;
  double max_cocycle_residual = 0.0;
  double lambda_hat = 0.0;
  Index triples_checked = 0;
  bool ok = false;
};

// Checks Phi(t,t) = I and Phi(t,r) Phi(r,s) = Phi(t,s) on sampled triples and
// estimates lambda = sup |Phi(t,s)|. All node pairs enter lambda when the grid
// has at most 64 steps.
AxiomReport verify_evolution_axioms(const EvolutionOperator& phi, Index samples, double tol,
                                    std::uint64_t seed = 1);

// Perturbed evolution with steps Phi_k (I + dt D(t_k)) (Pre) or
// (I + dt D(t_{k+1})) Phi_k (Post).
EvolutionOperator perturb_evolution(const EvolutionOperator& phi, const OpValuedFunction& d,
                                    PerturbSide side = PerturbSide::Pre);

struct PerturbationReport {
  std::vector<double> term_norms;
  std::vector<double> term_bounds;
  double residual = 0.0;
  double tail_bound = 0.0;
  double lambda_hat = 0.0;
  double lambda_d = 0.0;
};

// Expands the Pre-side perturbation Phi_D(t_j, t_i) in powers of D and compares
// the partial sum with the perturbed operator.
PerturbationReport perturbation_series(const EvolutionOperator& phi, const OpValuedFunction& d,
                                       Index j, Index i, Index max_terms, double tol = 1e-14);

}  // namespace placeopt
