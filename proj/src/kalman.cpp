#include "placeopt/kalman.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <sstream>

#include "placeopt/random.hpp"

namespace placeopt {

Matrix FilterProblem::Q(Index k) const {
  const Matrix& d = D[k];
  return d * W[k] * d.transpose();
}

Matrix FilterProblem::R(Index k) const {
  const Matrix& e = E[k];
  Matrix r = e * V[k] * e.transpose();
  if (noise == NoiseConvention::PerStep) r *= grid().dt();
  return r;
}

bool FilterProblem::process_noise_free() const { return D.is_zero() || W.is_zero(); }

void FilterProblem::validate() const {
  const TimeGrid& g = grid();
  for (const auto* f : {&D, &W, &H, &E, &V})
    if (f->grid() != g) throw Error(ErrorKind::Grid, "filter coefficients sampled on different grids");
  const Index n = state_dim();
  if (D.rows() != n) throw Error(ErrorKind::Shape, "D must map into the state space");
  if (W.rows() != D.cols() || W.cols() != D.cols()) throw Error(ErrorKind::Shape, "W must be square on the noise space of D");
  if (H.cols() != n) throw Error(ErrorKind::Shape, "H must act on the state space");
  if (E.rows() != H.rows()) throw Error(ErrorKind::Shape, "E must map into the observation space");
  if (V.rows() != E.cols() || V.cols() != E.cols()) throw Error(ErrorKind::Shape, "V must be square on the noise space of E");
  if (P0.rows() != n || P0.cols() != n) throw Error(ErrorKind::Shape, "P0 must be square on the state space");
  if (P0_factor.size() != 0 && P0_factor.rows() != n) throw Error(ErrorKind::Shape, "P0 factor has the wrong row count");
  if (B && (B->grid() != g || B->rows() != n)) throw Error(ErrorKind::Shape, "B must map controls into the state space");
  if (n <= 512 && !psd_check(P0).is_psd) throw Error(ErrorKind::NotPsd, "P0 is not PSD");
  for (Index k = 0; k < (W.is_constant() ? 1 : g.size()); ++k)
    if (!psd_check(W[k]).is_psd) throw Error(ErrorKind::NotPsd, "W is not PSD");
  const Index nr = (E.is_constant() && V.is_constant()) ? 1 : g.size();
  for (Index k = 0; k < nr; ++k) {
    Eigen::LLT<Matrix> llt(symmetrize(R(k)));
    if (llt.info() != Eigen::Success) {
      std::ostringstream os;
      os << "observation noise at node " << k << " is not uniformly positive definite";
      throw Error(ErrorKind::Coercivity, os.str());
    }
  }
}

namespace {

Matrix sandwich_fwd(const StepMap& s, const Matrix& p) {
  // M P M^T with P symmetric
  Matrix a = s.apply(p);
  return s.apply(Matrix(a.transpose()));
}

Matrix finish(const Matrix& p, const RiccatiOptions& o) {
  if (p.rows() <= o.clip_max_dim) return clip_psd(p, o.clip_floor);
  return symmetrize(p);
}

// G_s = P(tau|tau) Psi(s,tau)^T H_s^T S_s^{-1} for s = tau+1..t
std::vector<Matrix> smoother_gains(const FilterProblem& fp, const CovarianceTrajectory& cov, Index tau, Index t) {
  if (tau > t) throw Error(ErrorKind::Ordering, "smoother needs tau <= t");
  if (tau < 0 || t > fp.grid().steps()) throw Error(ErrorKind::Grid, "smoother node out of range");
  std::vector<Matrix> gains;
  const Matrix& ptau = cov.P[static_cast<size_t>(tau)];
  // A = M_K(s-1, tau) P(tau|tau), then Psi P = M_{s-1} A
  Matrix a = ptau;
  for (Index s = tau + 1; s <= t; ++s) {
    Matrix psi_p = fp.M.step(s - 1).apply(a);
    const Matrix& h = fp.H[s];
    Eigen::LDLT<Matrix> sl(cov.S[static_cast<size_t>(s)]);
    Matrix hpp = h * psi_p;  // p x n, equals (G_s S_s)^T
    gains.push_back(sl.solve(hpp).transpose());
    a = psi_p - cov.Kd[static_cast<size_t>(s)] * hpp;
  }
  return gains;
}

Matrix sqrt_cov(const Matrix& c) {
  if (c.isZero(0.0)) return Matrix::Zero(c.rows(), c.cols());
  return psd_sqrt(c);
}

}  // namespace

CovarianceTrajectory run_filter_covariance(const FilterProblem& fp, const RiccatiOptions& opts) {
  fp.validate();
  const Index n = fp.grid().steps();
  const double dt = fp.grid().dt();
  const Index dim = fp.state_dim();
  const Matrix eye = Matrix::Identity(dim, dim);
  CovarianceTrajectory c;
  c.P.reserve(static_cast<size_t>(n + 1));
  c.P.push_back(symmetrize(fp.P0));
  c.Y.push_back(c.P.back());
  c.S.push_back(Matrix());
  c.K.push_back(Matrix::Zero(dim, fp.obs_dim()));
  c.Kd.push_back(Matrix::Zero(dim, fp.obs_dim()));
  const bool noisy = !fp.process_noise_free();
  for (Index k = 0; k < n; ++k) {
    Matrix halfq = noisy ? Matrix(0.5 * dt * fp.Q(k + 1)) : Matrix();
    Matrix y = sandwich_fwd(fp.M.step(k), c.P.back());
    if (noisy) y += halfq;
    y = symmetrize(y);
    const Matrix& h = fp.H[k + 1];
    const Matrix rd = fp.R(k + 1) / dt;
    const Matrix hy = h * y;
    Matrix s = symmetrize(Matrix(hy * h.transpose() + rd));
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) {
      std::ostringstream os;
      os << "innovation covariance at node " << k + 1 << " is not positive definite";
      throw Error(ErrorKind::Conditioning, os.str());
    }
    Matrix kd = llt.solve(hy).transpose();
    const Matrix a = eye - kd * h;
    Matrix p = a * y * a.transpose() + kd * rd * kd.transpose();
    if (noisy) p += halfq;
    if (!p.allFinite()) throw Error(ErrorKind::Conditioning, "filter recursion produced non-finite values");
    c.P.push_back(finish(p, opts));
    c.Y.push_back(std::move(y));
    c.S.push_back(std::move(s));
    c.K.push_back(kd / dt);
    c.Kd.push_back(std::move(kd));
  }
  std::vector<Matrix> dk;
  dk.reserve(static_cast<size_t>(n + 1));
  for (Index k = 0; k <= n; ++k) dk.push_back(-c.K[static_cast<size_t>(k)] * fp.H[k]);
  c.MK = perturb_evolution(fp.M, OpValuedFunction(fp.grid(), std::move(dk)), PerturbSide::Post);
  return c;
}

Matrix smoother_covariance(const FilterProblem& fp, const CovarianceTrajectory& cov, Index tau, Index t) {
  const std::vector<Matrix> g = smoother_gains(fp, cov, tau, t);
  Matrix p = cov.P[static_cast<size_t>(tau)];
  for (size_t i = 0; i < g.size(); ++i) p -= g[i] * cov.S[static_cast<size_t>(tau) + 1 + i] * g[i].transpose();
  return symmetrize(p);
}

FilterEstimate run_filter_estimate(const FilterProblem& fp, const CovarianceTrajectory& cov,
                                   const std::vector<Vector>& obs, const Vector& prior_mean,
                                   const std::vector<Vector>& controls) {
  const Index n = fp.grid().steps();
  const double dt = fp.grid().dt();
  if (static_cast<Index>(obs.size()) != n + 1)
    throw Error(ErrorKind::Grid, "need one observation per grid node");
  if (prior_mean.size() != fp.state_dim()) throw Error(ErrorKind::Shape, "prior mean has the wrong dimension");
  if (!controls.empty() && (!fp.B || static_cast<Index>(controls.size()) < n))
    throw Error(ErrorKind::InvalidInput, "controls need B and one value per interval");
  FilterEstimate est;
  est.states.push_back(prior_mean);
  est.innovations.push_back(Vector());
  for (Index k = 0; k < n; ++k) {
    Vector z = est.states.back();
    if (!controls.empty()) z += dt * (*fp.B)[k] * controls[static_cast<size_t>(k)];
    Vector pred = fp.M.step(k).apply(z);
    const Vector& y = obs[static_cast<size_t>(k + 1)];
    if (y.size() != fp.obs_dim()) throw Error(ErrorKind::Shape, "observation has the wrong dimension");
    Vector e = y - fp.H[k + 1] * pred;
    est.states.push_back(pred + cov.Kd[static_cast<size_t>(k + 1)] * e);
    est.innovations.push_back(std::move(e));
  }
  return est;
}

Vector run_smoother_estimate(const FilterProblem& fp, const CovarianceTrajectory& cov,
                             const FilterEstimate& est, Index tau, Index t) {
  const std::vector<Matrix> g = smoother_gains(fp, cov, tau, t);
  Vector x = est.states[static_cast<size_t>(tau)];
  for (size_t i = 0; i < g.size(); ++i) x += g[i] * est.innovations[static_cast<size_t>(tau) + 1 + i];
  return x;
}

LQProblem dual_lq_problem(const FilterProblem& fp) {
  fp.validate();
  const TimeGrid& g = fp.grid();
  std::vector<Matrix> b, c, f;
  for (Index j = 0; j <= g.steps(); ++j) {
    const Index k = g.steps() - j;
    b.push_back(fp.H[k].transpose());
    c.push_back(psd_sqrt(fp.Q(k)));
    f.push_back(fp.R(k));
  }
  LQProblem lq;
  lq.T = fp.M.time_reversed_adjoint();
  lq.B = OpValuedFunction(g, std::move(b));
  lq.C = OpValuedFunction(g, std::move(c));
  lq.F = OpValuedFunction(g, std::move(f));
  lq.G = fp.P0;
  return lq;
}

FilterProblem filter_from_lq(const LQProblem& lq) {
  lq.validate();
  const TimeGrid& g = lq.grid();
  FilterProblem fp;
  fp.M = lq.T.time_reversed_adjoint();
  fp.H = lq.B.reversed().transposed();
  fp.D = lq.C.reversed().transposed();
  fp.W = OpValuedFunction::constant(g, Matrix::Identity(lq.output_dim(), lq.output_dim()));
  fp.E = OpValuedFunction::constant(g, Matrix::Identity(lq.control_dim(), lq.control_dim()));
  fp.V = lq.F.reversed();
  fp.P0 = lq.G;
  return fp;
}

SampleRealization sample_model(const FilterProblem& fp, const Vector& prior_mean, std::uint64_t seed,
                               std::uint64_t index, const std::vector<Vector>& controls) {
  const Index n = fp.grid().steps();
  const double dt = fp.grid().dt();
  NormalStream rng(seed, index);
  const Matrix l0 = fp.P0_factor.size() ? fp.P0_factor : psd_factor(fp.P0);
  SampleRealization r;
  r.states.push_back(prior_mean + l0 * rng.normal_vector(l0.cols()));
  r.observations.push_back(Vector::Zero(fp.obs_dim()));
  const bool noisy = !fp.process_noise_free();
  const bool const_noise = fp.W.is_constant() && fp.V.is_constant() && fp.E.is_constant() && fp.D.is_constant();
  Matrix wroot, rroot;
  for (Index k = 0; k < n; ++k) {
    if (k == 0 || !const_noise) {
      if (noisy) wroot = fp.D[k + 1] * sqrt_cov(fp.W[k + 1]) * std::sqrt(0.5 * dt);
      rroot = sqrt_cov(Matrix(fp.R(k + 1) / dt));
    }
    Vector z = r.states.back();
    if (!controls.empty()) z += dt * (*fp.B)[k] * controls[static_cast<size_t>(k)];
    Vector xi = fp.M.step(k).apply(z);
    if (noisy) xi += wroot * rng.normal_vector(wroot.cols());
    Vector y = fp.H[k + 1] * xi + rroot * rng.normal_vector(rroot.cols());
    if (noisy) xi += wroot * rng.normal_vector(wroot.cols());
    r.states.push_back(std::move(xi));
    r.observations.push_back(std::move(y));
  }
  return r;
}

MonteCarloReport monte_carlo_error_cov(const FilterProblem& fp, const CovarianceTrajectory& cov,
                                       const MonteCarloOptions& opts) {
  if (opts.samples < 2) throw Error(ErrorKind::InvalidInput, "Monte Carlo needs at least two samples");
  const Index n = fp.grid().steps();
  const Index dim = fp.state_dim();
  const Vector mean = opts.prior_mean ? *opts.prior_mean : Vector::Zero(dim);
  MonteCarloReport rep;
  rep.samples = opts.samples;
  rep.empirical.assign(static_cast<size_t>(n + 1), Matrix::Zero(dim, dim));
  std::vector<Matrix> sg;
  if (opts.smoother) {
    sg = smoother_gains(fp, cov, opts.smoother->first, opts.smoother->second);
    rep.smoother_empirical = Matrix::Zero(dim, dim);
  }
  const Index np = static_cast<Index>(opts.orthogonality.size());
  std::vector<Matrix> err_samples(static_cast<size_t>(np)), inn_samples(static_cast<size_t>(np));
  for (Index i = 0; i < np; ++i) {
    const auto [k, s] = opts.orthogonality[static_cast<size_t>(i)];
    if (s < 1 || s > k || k > n) throw Error(ErrorKind::Ordering, "orthogonality pair needs 1 <= s <= k <= N");
    err_samples[static_cast<size_t>(i)].resize(dim, opts.samples);
    inn_samples[static_cast<size_t>(i)].resize(fp.obs_dim(), opts.samples);
  }
  for (Index m = 0; m < opts.samples; ++m) {
    const SampleRealization r = sample_model(fp, mean, opts.seed, static_cast<std::uint64_t>(m));
    const FilterEstimate est = run_filter_estimate(fp, cov, r.observations, mean);
    for (Index k = 0; k <= n; ++k) {
      const Vector e = r.states[static_cast<size_t>(k)] - est.states[static_cast<size_t>(k)];
      rep.empirical[static_cast<size_t>(k)].noalias() += e * e.transpose();
    }
    if (opts.smoother) {
      const auto [tau, t] = *opts.smoother;
      Vector xs = est.states[static_cast<size_t>(tau)];
      for (size_t i = 0; i < sg.size(); ++i) xs += sg[i] * est.innovations[static_cast<size_t>(tau) + 1 + i];
      const Vector e = r.states[static_cast<size_t>(tau)] - xs;
      rep.smoother_empirical.noalias() += e * e.transpose();
    }
    for (Index i = 0; i < np; ++i) {
      const auto [k, s] = opts.orthogonality[static_cast<size_t>(i)];
      err_samples[static_cast<size_t>(i)].col(m) = r.states[static_cast<size_t>(k)] - est.states[static_cast<size_t>(k)];
      inn_samples[static_cast<size_t>(i)].col(m) = est.innovations[static_cast<size_t>(s)];
    }
  }
  const double inv = 1.0 / static_cast<double>(opts.samples);
  for (Index k = 0; k <= n; ++k) {
    Matrix& e = rep.empirical[static_cast<size_t>(k)];
    e *= inv;
    const Matrix& p = cov.P[static_cast<size_t>(k)];
    const double scale = p.norm();
    const double dev = scale > 0.0 ? (e - p).norm() / scale : e.norm();
    rep.deviation.push_back(dev);
    rep.max_deviation = std::max(rep.max_deviation, dev);
  }
  if (opts.smoother) {
    rep.smoother_empirical *= inv;
    const Matrix ps = smoother_covariance(fp, cov, opts.smoother->first, opts.smoother->second);
    rep.smoother_deviation = (rep.smoother_empirical - ps).norm() / std::max(ps.norm(), 1e-300);
  }
  for (Index i = 0; i < np; ++i) {
    Matrix a = err_samples[static_cast<size_t>(i)];
    Matrix b = inn_samples[static_cast<size_t>(i)];
    a.colwise() -= a.rowwise().mean();
    b.colwise() -= b.rowwise().mean();
    const Matrix cross = a * b.transpose();
    const Vector na = a.rowwise().norm();
    const Vector nb = b.rowwise().norm();
    double worst = 0.0;
    for (Index r = 0; r < cross.rows(); ++r)
      for (Index c = 0; c < cross.cols(); ++c)
        if (na(r) > 0.0 && nb(c) > 0.0) worst = std::max(worst, std::abs(cross(r, c)) / (na(r) * nb(c)));
    rep.orthogonality.push_back(worst);
  }
  return rep;
}

}  // namespace placeopt
