#pragma once

#include <vector>

#include "placeopt/evolution.hpp"

namespace placeopt {

// min x_N^T G x_N + sum dt [ (|C x_k|^2 + |C z_k|^2) / 2 + u_k^T F u_k ]
// subject to z_k = x_k + dt B u_k, x_{k+1} = Phi_k z_k.
struct LQProblem {
  EvolutionOperator T;
  OpValuedFunction B, C, F;
  Matrix G;

  const TimeGrid& grid() const { return T.grid(); }
  Index state_dim() const { return T.dim(); }
  Index control_dim() const { return B.cols(); }
  Index output_dim() const { return C.rows(); }
  void validate() const;
};

struct RiccatiOptions {
  double tol = 1e-10;
  int max_iters = 50;
  double clip_floor = -1e-12;
  Index clip_max_dim = 256;
};

struct RiccatiSolution {
  std::vector<Matrix> Pi;     // Pi(t_k), k = 0..N
  std::vector<Matrix> gains;  // L_k, k = 0..N-1; control u_k = -L_k x_k
  EvolutionOperator closed_loop;
  int iterations = 0;
  double residual = 0.0;
};

RiccatiSolution solve_ire1(const LQProblem& p, const RiccatiOptions& opts = {});
RiccatiSolution solve_ire2(const LQProblem& p, const RiccatiOptions& opts = {});

struct Trajectory {
  std::vector<Vector> states;    // N + 1
  std::vector<Vector> controls;  // N
};

Trajectory simulate_mild(const LQProblem& p, const Vector& x0, const std::vector<Vector>& u);
Trajectory simulate_closed_loop(const LQProblem& p, const RiccatiSolution& sol, const Vector& x0);
double lq_cost(const LQProblem& p, const Trajectory& traj);

// Discrete greedy gain and the matching Y = Phi^T Pi Phi + dt/2 C^T C at node k.
struct GainStep {
  Matrix Y;
  Matrix L;
};
GainStep riccati_gain(const LQProblem& p, Index k, const Matrix& pi_next);

}  // namespace placeopt
