#pragma once

#include <utility>

#include "oracles.hpp"
#include "placeopt/kalman.hpp"

namespace fixture {

using namespace placeopt;

inline std::vector<Matrix> random_samples(NormalStream& rng, Index count, Index r, Index c, double scale = 1.0) {
  std::vector<Matrix> out;
  for (Index k = 0; k < count; ++k) out.push_back(scale * rng.normal_matrix(r, c));
  return out;
}

inline std::vector<Matrix> random_psd_samples(NormalStream& rng, Index count, Index n, double shift) {
  std::vector<Matrix> out;
  for (Index k = 0; k < count; ++k) out.push_back(oracle::random_psd(rng, n, shift));
  return out;
}

// Time-varying LQ problem with dims (n, m, p) on [0, b].
inline LQProblem random_lq(std::uint64_t seed, Index n, Index m, Index p, Index steps, double b = 1.0) {
  NormalStream rng(seed);
  const TimeGrid g(0.0, b, steps);
  std::vector<Matrix> phis;
  for (Index k = 0; k < steps; ++k) phis.push_back(oracle::random_step(rng, n, g.dt()));
  LQProblem lq;
  lq.T = EvolutionOperator::from_matrices(g, phis);
  lq.B = OpValuedFunction(g, random_samples(rng, steps + 1, n, m));
  lq.C = OpValuedFunction(g, random_samples(rng, steps + 1, p, n));
  lq.F = OpValuedFunction(g, random_psd_samples(rng, steps + 1, m, 0.5));
  lq.G = oracle::random_psd(rng, n);
  return lq;
}

struct FilterCase {
  FilterProblem fp;
  oracle::Model model;
};

// Time-varying filter problem with matching oracle data (intensity convention).
inline FilterCase random_filter(std::uint64_t seed, Index n, Index p, Index steps, double b = 1.0,
                                bool process_noise = true) {
  NormalStream rng(seed);
  const TimeGrid g(0.0, b, steps);
  FilterCase c;
  for (Index k = 0; k < steps; ++k) c.model.M.push_back(oracle::random_step(rng, n, g.dt()));
  std::vector<Matrix> d = random_samples(rng, steps + 1, n, n, process_noise ? 1.0 : 0.0);
  std::vector<Matrix> w = random_psd_samples(rng, steps + 1, n, 0.1);
  std::vector<Matrix> h = random_samples(rng, steps + 1, p, n);
  std::vector<Matrix> e = random_samples(rng, steps + 1, p, p);
  for (auto& x : e) x += 2.0 * Matrix::Identity(p, p);
  std::vector<Matrix> v = random_psd_samples(rng, steps + 1, p, 0.5);
  c.fp.M = EvolutionOperator::from_matrices(g, c.model.M);
  c.fp.D = OpValuedFunction(g, d);
  c.fp.W = OpValuedFunction(g, w);
  c.fp.H = OpValuedFunction(g, h);
  c.fp.E = OpValuedFunction(g, e);
  c.fp.V = OpValuedFunction(g, v);
  c.fp.P0 = oracle::random_psd(rng, n, 0.1);
  c.model.P0 = c.fp.P0;
  c.model.dt = g.dt();
  c.model.H = h;
  for (Index k = 0; k <= steps; ++k) {
    const auto i = static_cast<size_t>(k);
    c.model.Q.push_back(d[i] * w[i] * d[i].transpose());
    c.model.Rd.push_back(e[i] * v[i] * e[i].transpose() / g.dt());
  }
  return c;
}

// Constant scalar filter x' = a x + noise on [0, b].
inline FilterProblem scalar_filter(double m, double q, double h, double r, double p0, double b, Index steps) {
  const TimeGrid g(0.0, b, steps);
  FilterProblem fp;
  fp.M = EvolutionOperator::time_invariant(g, Matrix::Constant(1, 1, m));
  fp.D = OpValuedFunction::constant(g, Matrix::Constant(1, 1, 1.0));
  fp.W = OpValuedFunction::constant(g, Matrix::Constant(1, 1, q));
  fp.H = OpValuedFunction::constant(g, Matrix::Constant(1, 1, h));
  fp.E = OpValuedFunction::constant(g, Matrix::Constant(1, 1, 1.0));
  fp.V = OpValuedFunction::constant(g, Matrix::Constant(1, 1, r));
  fp.P0 = Matrix::Constant(1, 1, p0);
  return fp;
}

inline LQProblem scalar_lq(double phi, double b_, double c, double f, double g_, double b, Index steps) {
  const TimeGrid g(0.0, b, steps);
  LQProblem lq;
  lq.T = EvolutionOperator::time_invariant(g, Matrix::Constant(1, 1, phi));
  lq.B = OpValuedFunction::constant(g, Matrix::Constant(1, 1, b_));
  lq.C = OpValuedFunction::constant(g, Matrix::Constant(1, 1, c));
  lq.F = OpValuedFunction::constant(g, Matrix::Constant(1, 1, f));
  lq.G = Matrix::Constant(1, 1, g_);
  return lq;
}

}  // namespace fixture
