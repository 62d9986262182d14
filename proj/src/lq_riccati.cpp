#include "placeopt/lq_riccati.hpp"

#include <Eigen/Cholesky>
#include <sstream>

namespace placeopt {

void LQProblem::validate() const {
  const TimeGrid& g = grid();
  for (const auto* f : {&B, &C, &F})
    if (f->grid() != g) throw Error(ErrorKind::Grid, "LQ coefficients sampled on different grids");
  const Index n = state_dim();
  if (B.rows() != n) throw Error(ErrorKind::Shape, "B must map controls into the state space");
  if (C.cols() != n) throw Error(ErrorKind::Shape, "C must act on the state space");
  if (F.rows() != B.cols() || F.cols() != B.cols())
    throw Error(ErrorKind::Shape, "F must be square on the control space");
  if (G.rows() != n || G.cols() != n) throw Error(ErrorKind::Shape, "G must be square on the state space");
  if (!psd_check(G).is_psd) throw Error(ErrorKind::NotPsd, "G is not PSD");
  for (Index k = 0; k < (F.is_constant() ? 1 : g.size()); ++k) {
    const Matrix& f = F[k];
    Eigen::LLT<Matrix> llt(symmetrize(f));
    if (llt.info() != Eigen::Success || (f - f.transpose()).norm() > 1e-10 * std::max(1.0, f.norm())) {
      std::ostringstream os;
      os << "F(t_" << k << ") is not uniformly positive definite";
      throw Error(ErrorKind::Conditioning, os.str());
    }
  }
}

namespace {

Matrix finish(const Matrix& pi, const RiccatiOptions& o) {
  if (pi.rows() <= o.clip_max_dim) return clip_psd(pi, o.clip_floor);
  return symmetrize(pi);
}

Matrix sandwich(const StepMap& s, const Matrix& pi) {
  // Phi^T Pi Phi with Pi symmetric
  Matrix a = s.apply_adjoint(pi);
  return s.apply_adjoint(Matrix(a.transpose()));
}

OpValuedFunction feedback_perturbation(const LQProblem& p, const std::vector<Matrix>& gains) {
  std::vector<Matrix> d;
  d.reserve(static_cast<size_t>(p.grid().size()));
  for (size_t k = 0; k < gains.size(); ++k) d.push_back(-p.B[static_cast<Index>(k)] * gains[k]);
  d.push_back(Matrix::Zero(p.state_dim(), p.state_dim()));
  return OpValuedFunction(p.grid(), std::move(d));
}

double max_rel_diff(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double r = 0.0;
  for (size_t k = 0; k < a.size(); ++k)
    r = std::max(r, operator_norm(Matrix(a[k] - b[k])) / std::max(1.0, operator_norm(b[k])));
  return r;
}

}  // namespace

GainStep riccati_gain(const LQProblem& p, Index k, const Matrix& pi_next) {
  const double dt = p.grid().dt();
  const Matrix& b = p.B[k];
  const Matrix& c = p.C[k];
  GainStep g;
  g.Y = sandwich(p.T.step(k), pi_next) + 0.5 * dt * c.transpose() * c;
  g.Y = symmetrize(g.Y);
  const Matrix yb = g.Y * b;
  const Matrix s = symmetrize(Matrix(p.F[k] + dt * b.transpose() * yb));
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) {
    std::ostringstream os;
    os << "gain system at node " << k << " is not positive definite";
    throw Error(ErrorKind::Conditioning, os.str());
  }
  g.L = llt.solve(Matrix(yb.transpose()));
  return g;
}

RiccatiSolution solve_ire1(const LQProblem& p, const RiccatiOptions& opts) {
  p.validate();
  const Index n = p.grid().steps();
  const double dt = p.grid().dt();
  const Matrix eye = Matrix::Identity(p.state_dim(), p.state_dim());
  RiccatiSolution sol;
  sol.Pi.assign(static_cast<size_t>(n + 1), Matrix());
  sol.gains.assign(static_cast<size_t>(n), Matrix());
  sol.Pi[static_cast<size_t>(n)] = symmetrize(p.G);
  for (Index k = n - 1; k >= 0; --k) {
    GainStep g = riccati_gain(p, k, sol.Pi[static_cast<size_t>(k + 1)]);
    const Matrix& c = p.C[k];
    const Matrix a = eye - dt * p.B[k] * g.L;
    Matrix pi = a.transpose() * g.Y * a + dt * g.L.transpose() * p.F[k] * g.L +
                0.5 * dt * c.transpose() * c;
    if (!pi.allFinite()) throw Error(ErrorKind::Conditioning, "Riccati recursion produced non-finite values");
    sol.Pi[static_cast<size_t>(k)] = finish(pi, opts);
    sol.gains[static_cast<size_t>(k)] = std::move(g.L);
  }
  sol.closed_loop = perturb_evolution(p.T, feedback_perturbation(p, sol.gains), PerturbSide::Pre);
  sol.iterations = 1;
  return sol;
}

RiccatiSolution solve_ire2(const LQProblem& p, const RiccatiOptions& opts) {
  p.validate();
  const Index n = p.grid().steps();
  const double dt = p.grid().dt();
  std::vector<Matrix> gains(static_cast<size_t>(n), Matrix::Zero(p.control_dim(), p.state_dim()));
  std::vector<Matrix> prev;
  RiccatiSolution sol;
  for (int it = 1; it <= opts.max_iters; ++it) {
    // policy evaluation along the closed-loop evolution
    const EvolutionOperator cl = perturb_evolution(p.T, feedback_perturbation(p, gains), PerturbSide::Pre);
    std::vector<Matrix> pi(static_cast<size_t>(n + 1));
    pi[static_cast<size_t>(n)] = symmetrize(p.G);
    for (Index k = n - 1; k >= 0; --k) {
      const Matrix& c = p.C[k];
      const Matrix& l = gains[static_cast<size_t>(k)];
      const Matrix a = Matrix::Identity(p.state_dim(), p.state_dim()) - dt * p.B[k] * l;
      const Matrix ctc = c.transpose() * c;
      const Matrix x = 0.5 * ctc + 0.5 * a.transpose() * ctc * a + l.transpose() * p.F[k] * l;
      pi[static_cast<size_t>(k)] = finish(Matrix(sandwich(cl.step(k), pi[static_cast<size_t>(k + 1)]) + dt * x), opts);
    }
    for (const auto& m : pi)
      if (!m.allFinite()) throw Error(ErrorKind::Conditioning, "policy evaluation produced non-finite values");
    // policy improvement
    for (Index k = 0; k < n; ++k) gains[static_cast<size_t>(k)] = riccati_gain(p, k, pi[static_cast<size_t>(k + 1)]).L;
    if (!prev.empty()) {
      sol.residual = max_rel_diff(pi, prev);
      if (sol.residual < opts.tol) {
        sol.Pi = std::move(pi);
        sol.gains = std::move(gains);
        sol.iterations = it;
        sol.closed_loop = perturb_evolution(p.T, feedback_perturbation(p, sol.gains), PerturbSide::Pre);
        return sol;
      }
    }
    prev = std::move(pi);
  }
  std::ostringstream os;
  os << "policy iteration did not converge in " << opts.max_iters << " iterations (last change "
     << sol.residual << ")";
  throw Error(ErrorKind::Iteration, os.str());
}

Trajectory simulate_mild(const LQProblem& p, const Vector& x0, const std::vector<Vector>& u) {
  const Index n = p.grid().steps();
  if (x0.size() != p.state_dim()) throw Error(ErrorKind::Shape, "initial state has the wrong dimension");
  if (static_cast<Index>(u.size()) != n && static_cast<Index>(u.size()) != n + 1)
    throw Error(ErrorKind::Grid, "control sequence length does not match the grid");
  Trajectory tr;
  tr.states.reserve(static_cast<size_t>(n + 1));
  tr.states.push_back(x0);
  const double dt = p.grid().dt();
  for (Index k = 0; k < n; ++k) {
    const Vector& uk = u[static_cast<size_t>(k)];
    if (uk.size() != p.control_dim()) throw Error(ErrorKind::Shape, "control has the wrong dimension");
    Vector z = tr.states.back() + dt * p.B[k] * uk;
    tr.states.push_back(p.T.step(k).apply(z));
    tr.controls.push_back(uk);
  }
  return tr;
}

Trajectory simulate_closed_loop(const LQProblem& p, const RiccatiSolution& sol, const Vector& x0) {
  const Index n = p.grid().steps();
  if (static_cast<Index>(sol.gains.size()) != n) throw Error(ErrorKind::Grid, "gain sequence does not match the grid");
  Trajectory tr;
  tr.states.push_back(x0);
  const double dt = p.grid().dt();
  for (Index k = 0; k < n; ++k) {
    Vector u = -sol.gains[static_cast<size_t>(k)] * tr.states.back();
    Vector z = tr.states.back() + dt * p.B[k] * u;
    tr.states.push_back(p.T.step(k).apply(z));
    tr.controls.push_back(std::move(u));
  }
  return tr;
}

double lq_cost(const LQProblem& p, const Trajectory& tr) {
  const Index n = p.grid().steps();
  if (static_cast<Index>(tr.states.size()) != n + 1 || static_cast<Index>(tr.controls.size()) < n)
    throw Error(ErrorKind::Grid, "trajectory length does not match the grid");
  const double dt = p.grid().dt();
  const Vector& xn = tr.states.back();
  double cost = xn.dot(p.G * xn);
  for (Index k = 0; k < n; ++k) {
    const Vector& x = tr.states[static_cast<size_t>(k)];
    const Vector& u = tr.controls[static_cast<size_t>(k)];
    const Vector z = x + dt * p.B[k] * u;
    const Matrix& c = p.C[k];
    cost += dt * (0.5 * (c * x).squaredNorm() + 0.5 * (c * z).squaredNorm() + u.dot(p.F[k] * u));
  }
  return cost;
}

}  // namespace placeopt
