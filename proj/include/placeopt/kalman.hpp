#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "placeopt/lq_riccati.hpp"

namespace placeopt {

enum class NoiseConvention { Intensity, PerStep };

// x_{k+1} = M_k x_k + dt M_k B_k u_k + w- + w+,  w+- ~ N(0, dt/2 Q(t_{k+1})),
// y_{k+1} = H_{k+1} (x_{k+1} - w+) + v,          v  ~ N(0, R(t_{k+1}) / dt),
// with Q = D W D^T and R = E V E^T (times dt under the per-step convention).
struct FilterProblem {
  EvolutionOperator M;
  OpValuedFunction D, W, H, E, V;
  Matrix P0;
  NoiseConvention noise = NoiseConvention::Intensity;
  std::optional<OpValuedFunction> B;
  Matrix P0_factor;  // optional L with P0 = L L^T

  const TimeGrid& grid() const { return M.grid(); }
  Index state_dim() const { return M.dim(); }
  Index obs_dim() const { return H.rows(); }
  Matrix Q(Index k) const;
  // Observation noise intensity.
  Matrix R(Index k) const;
  bool process_noise_free() const;
  void validate() const;
};

struct CovarianceTrajectory {
  std::vector<Matrix> P;        // P(t_k | t_k)
  std::vector<Matrix> Y;        // covariance of the predicted state observed at t_k (Y_0 = P0)
  std::vector<Matrix> S;        // innovation covariance at t_k (empty at k = 0)
  std::vector<Matrix> K;        // gain intensity K_k = K^d_k / dt (zero at k = 0)
  std::vector<Matrix> Kd;       // discrete gain
  EvolutionOperator MK;         // steps (I - dt K_{k+1} H_{k+1}) M_k
};

CovarianceTrajectory run_filter_covariance(const FilterProblem& fp, const RiccatiOptions& opts = {});

// P(t_tau | t_t) for node indices tau <= t.
Matrix smoother_covariance(const FilterProblem& fp, const CovarianceTrajectory& cov, Index tau, Index t);

struct FilterEstimate {
  std::vector<Vector> states;       // xhat(t_k | t_k)
  std::vector<Vector> innovations;  // y_k - H_k xhat(t_k | t_{k-1}); empty at k = 0
};

// observations[k] is the measurement at t_k; observations[0] is ignored.
FilterEstimate run_filter_estimate(const FilterProblem& fp, const CovarianceTrajectory& cov,
                                   const std::vector<Vector>& observations, const Vector& prior_mean,
                                   const std::vector<Vector>& controls = {});

Vector run_smoother_estimate(const FilterProblem& fp, const CovarianceTrajectory& cov,
                             const FilterEstimate& est, Index tau, Index t);

// Dual LQ: node j carries filter data from node N - j.
LQProblem dual_lq_problem(const FilterProblem& fp);
// Inverse transform with D = C^T, W = I, E = I, V = F.
FilterProblem filter_from_lq(const LQProblem& lq);

struct SampleRealization {
  std::vector<Vector> states;
  std::vector<Vector> observations;
};

SampleRealization sample_model(const FilterProblem& fp, const Vector& prior_mean, std::uint64_t seed,
                               std::uint64_t index, const std::vector<Vector>& controls = {});

struct MonteCarloOptions {
  Index samples = 2000;
  std::uint64_t seed = 1;
  std::optional<Vector> prior_mean;
  std::optional<std::pair<Index, Index>> smoother;  // (tau, t)
  std::vector<std::pair<Index, Index>> orthogonality;  // (k, s) with s <= k
};

struct MonteCarloReport {
  std::vector<Matrix> empirical;     // empirical filter error covariance per node
  std::vector<double> deviation;     // |emp - P|_F / |P|_F per node
  double max_deviation = 0.0;
  Matrix smoother_empirical;
  double smoother_deviation = 0.0;
  std::vector<double> orthogonality;  // max |corr| per requested pair
  Index samples = 0;
};

MonteCarloReport monte_carlo_error_cov(const FilterProblem& fp, const CovarianceTrajectory& cov,
                                       const MonteCarloOptions& opts);

}  // namespace placeopt
