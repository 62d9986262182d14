#include "placeopt/placement.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace placeopt {

std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::LqOperatorNorm: return "lq-op-norm";
    case Criterion::LqNuclear: return "lq-nuclear";
    case Criterion::FilterNuclear: return "filter-nuclear";
    case Criterion::SmootherNuclear: return "smoother-nuclear";
  }
  return "unknown";
}

Criterion criterion_from_string(const std::string& s) {
  for (Criterion c : {Criterion::LqOperatorNorm, Criterion::LqNuclear, Criterion::FilterNuclear,
                      Criterion::SmootherNuclear})
    if (to_string(c) == s) return c;
  throw Error(ErrorKind::InvalidInput, "unknown criterion '" + s + "'");
}

void LocationSpace::validate() const {
  if (candidates.empty()) throw Error(ErrorKind::Empty, "location space has no candidates");
  for (const auto& c : candidates)
    if (!contains(c)) throw Error(ErrorKind::Domain, "candidate outside the location box");
}

bool LocationSpace::contains(const Candidate& c) const {
  if (box.empty()) return true;
  if (c.coords.size() != box.size()) return false;
  for (size_t i = 0; i < box.size(); ++i)
    if (c.coords[i] < box[i].first - 1e-12 || c.coords[i] > box[i].second + 1e-12) return false;
  return true;
}

namespace {

bool is_lq(Criterion c) { return c == Criterion::LqOperatorNorm || c == Criterion::LqNuclear; }

void check_kinds(const LocationFamily& f, const Problem& base, Criterion c) {
  const bool lq = is_lq(c);
  if (lq != (f.kind == LocationFamily::Kind::Actuator))
    throw Error(ErrorKind::InvalidInput, "actuator families go with LQ criteria, sensor families with filter/smoother criteria");
  if (lq != std::holds_alternative<LQProblem>(base))
    throw Error(ErrorKind::InvalidInput, "criterion does not match the base problem kind");
  if (!f.builder) throw Error(ErrorKind::InvalidInput, "location family has no builder");
}

Index final_node(const Problem& p, Index t) {
  const Index n = std::visit([](const auto& q) { return q.grid().steps(); }, p);
  return t < 0 ? n : t;
}

std::pair<Index, Index> sensor_nodes(const Problem& p, Criterion c, const EvalPoint& e) {
  const Index t = final_node(p, e.t);
  if (c == Criterion::FilterNuclear) return {t, t};
  return {e.tau, t};
}

double op_deviation(const OpValuedFunction& a, const OpValuedFunction& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorKind::Shape, "family operators differ in shape");
  double d = 0.0;
  const Index n = (a.is_constant() && b.is_constant()) ? 1 : a.grid().size();
  for (Index k = 0; k < n; ++k) d = std::max(d, operator_norm(Matrix(a[k] - b[k])));
  return d;
}

template <typename F>
void parallel_for(Index count, int threads, F&& body) {
  if (threads <= 1 || count <= 1) {
    for (Index i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::thread> pool;
  const int nt = static_cast<int>(std::min<Index>(threads, count));
  for (int w = 0; w < nt; ++w)
    pool.emplace_back([&] {
      for (Index i = next++; i < count; i = next++) body(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

Problem instantiate(const LocationFamily& family, const Problem& base, const Candidate& r) {
  OpValuedFunction op = family.builder(r);
  if (family.kind == LocationFamily::Kind::Actuator) {
    LQProblem p = std::get<LQProblem>(base);
    if (op.grid() != p.grid()) throw Error(ErrorKind::Grid, "actuator operator sampled on a different grid");
    p.B = std::move(op);
    return p;
  }
  FilterProblem p = std::get<FilterProblem>(base);
  if (op.grid() != p.grid()) throw Error(ErrorKind::Grid, "sensor operator sampled on a different grid");
  p.H = std::move(op);
  return p;
}

Matrix criterion_operator(const Problem& p, Criterion criterion, const EvalPoint& eval, const SweepOptions& opts) {
  if (is_lq(criterion)) {
    const auto& lq = std::get<LQProblem>(p);
    const RiccatiSolution sol = opts.use_ire2 ? solve_ire2(lq, opts.riccati) : solve_ire1(lq, opts.riccati);
    if (eval.t_eval < 0 || eval.t_eval > lq.grid().steps()) throw Error(ErrorKind::Grid, "evaluation node out of range");
    return sol.Pi[static_cast<size_t>(eval.t_eval)];
  }
  const auto& fp = std::get<FilterProblem>(p);
  const auto [tau, t] = sensor_nodes(p, criterion, eval);
  const CovarianceTrajectory cov = run_filter_covariance(fp, opts.riccati);
  if (criterion == Criterion::FilterNuclear) return cov.P[static_cast<size_t>(t)];
  return smoother_covariance(fp, cov, tau, t);
}

double criterion_value(const Matrix& op, Criterion criterion) {
  return criterion == Criterion::LqOperatorNorm ? operator_norm(op) : nuclear_norm(op);
}

bool information_form_applicable(const FilterProblem& fp) { return fp.process_noise_free(); }

InformationEvaluator::InformationEvaluator(const FilterProblem& base, Index tau, Index t)
    : fp_(&base), tau_(tau), t_(t) {
  if (!information_form_applicable(base))
    throw Error(ErrorKind::InvalidInput, "information form needs a problem without process noise");
  if (tau < 0 || tau > t || t > base.grid().steps()) throw Error(ErrorKind::Ordering, "information form needs 0 <= tau <= t <= N");
  factor_ = base.P0_factor.size() ? base.P0_factor : psd_factor(base.P0);
  if (tau == 0) set_x(factor_);
}

void InformationEvaluator::set_x(const Matrix& x) const {
  x_tau_ = x;
  xtx_.resize(x.cols(), x.cols());
  xtx_.setZero();
  xtx_.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  xtx_.triangularView<Eigen::StrictlyUpper>() = xtx_.transpose();
  have_x_ = true;
}

const Matrix& InformationEvaluator::X() const {
  if (!have_x_) set_x(fp_->M.propagate(tau_, 0, factor_));
  return x_tau_;
}

std::vector<Matrix> InformationEvaluator::rows(const std::vector<OpValuedFunction>& hs) const {
  const FilterProblem& fp = *fp_;
  const double dt = fp.grid().dt();
  const Index p = fp.obs_dim();
  const Index r = factor_.cols();
  struct Pattern {
    std::vector<Index> cols;
    Matrix sub;
  };
  std::vector<Pattern> pat(hs.size());
  for (size_t c = 0; c < hs.size(); ++c) {
    if (hs[c].rows() != p || hs[c].cols() != fp.state_dim()) throw Error(ErrorKind::Shape, "observation operator has the wrong shape");
    if (hs[c].is_constant()) {
      const Matrix& h = hs[c][0];
      for (Index j = 0; j < h.cols(); ++j)
        if (!h.col(j).isZero(0.0)) pat[c].cols.push_back(j);
      pat[c].sub.resize(p, static_cast<Index>(pat[c].cols.size()));
      for (size_t j = 0; j < pat[c].cols.size(); ++j) pat[c].sub.col(static_cast<Index>(j)) = h.col(pat[c].cols[j]);
    }
  }
  std::vector<Matrix> w(hs.size(), Matrix(t_ * p, r));
  const bool const_r = fp.E.is_constant() && fp.V.is_constant();
  Matrix whiten;
  Matrix z = factor_;
  for (Index s = 1; s <= t_; ++s) {
    z = fp.M.step(s - 1).apply(z);
    if (s == tau_ && !have_x_) set_x(z);
    if (s == 1 || !const_r) {
      Eigen::LLT<Matrix> llt(symmetrize(Matrix(fp.R(s) / dt)));
      if (llt.info() != Eigen::Success) throw Error(ErrorKind::Conditioning, "observation noise is not positive definite");
      whiten = llt.matrixL().solve(Matrix::Identity(p, p));
    }
    for (size_t c = 0; c < hs.size(); ++c) {
      Matrix hz;
      if (hs[c].is_constant()) {
        hz = Matrix::Zero(p, r);
        for (size_t j = 0; j < pat[c].cols.size(); ++j) hz += pat[c].sub.col(static_cast<Index>(j)) * z.row(pat[c].cols[j]);
      } else {
        hz = hs[c][s] * z;
      }
      w[c].middleRows((s - 1) * p, p) = whiten * hz;
    }
  }
  return w;
}

double InformationEvaluator::trace(const Matrix& w) const {
  X();
  const Index m = w.rows();
  if (m == 0) return xtx_.trace();
  Matrix s = Matrix::Identity(m, m);
  s.selfadjointView<Eigen::Lower>().rankUpdate(w);
  Eigen::LLT<Matrix> llt(s.selfadjointView<Eigen::Lower>());
  const Matrix siw = llt.solve(w);
  Matrix a;
  if (xtx_.isDiagonal(0.0))
    a = w * xtx_.diagonal().asDiagonal();
  else
    a = w * xtx_;
  return xtx_.trace() - siw.cwiseProduct(a).sum();
}

Matrix InformationEvaluator::core(const Matrix& w) const {
  const Index m = w.rows();
  const Index r = w.cols();
  if (m == 0) return Matrix::Identity(r, r);
  Matrix s = Matrix::Identity(m, m) + w * w.transpose();
  Eigen::LLT<Matrix> llt(s);
  return Matrix::Identity(r, r) - w.transpose() * llt.solve(w);
}

Matrix InformationEvaluator::covariance(const Matrix& w) const {
  X();
  return symmetrize(Matrix(x_tau_ * core(w) * x_tau_.transpose()));
}

PlacementResult sweep_costs(const LocationFamily& family, const Problem& base, const std::vector<Candidate>& candidates,
                            Criterion criterion, const EvalPoint& eval, const SweepOptions& opts) {
  check_kinds(family, base, criterion);
  if (candidates.empty()) throw Error(ErrorKind::Empty, "no candidates to sweep");
  for (const auto& c : candidates)
    if (c.coords.size() != candidates.front().coords.size())
      throw Error(ErrorKind::InvalidInput, "candidates differ in coordinate count");
  PlacementResult res;
  res.criterion = criterion;
  res.entries.resize(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) res.entries[i].candidate = candidates[i];

  bool info = false;
  if (!is_lq(criterion)) {
    const auto& fp = std::get<FilterProblem>(base);
    switch (opts.evaluator) {
      case SensorEvaluator::Recursion: info = false; break;
      case SensorEvaluator::InformationForm:
        if (!information_form_applicable(fp)) throw Error(ErrorKind::InvalidInput, "information form needs Q = 0");
        info = true;
        break;
      case SensorEvaluator::Auto: info = information_form_applicable(fp) && fp.state_dim() > 64; break;
    }
  }
  res.evaluator = is_lq(criterion) ? (opts.use_ire2 ? "ire2" : "ire1") : (info ? "information-form" : "recursion");

  if (info) {
    const auto& fp = std::get<FilterProblem>(base);
    fp.validate();
    const auto [tau, t] = sensor_nodes(base, criterion, eval);
    const InformationEvaluator ev(fp, tau, t);
    std::vector<OpValuedFunction> hs;
    std::vector<size_t> which;
    for (size_t i = 0; i < candidates.size(); ++i) {
      try {
        OpValuedFunction h = family.builder(candidates[i]);
        if (h.grid() != fp.grid()) throw Error(ErrorKind::Grid, "sensor operator sampled on a different grid");
        hs.push_back(std::move(h));
        which.push_back(i);
      } catch (const std::exception& e) {
        res.entries[i].error = e.what();
      }
    }
    const std::vector<Matrix> ws = ev.rows(hs);
    for (size_t c = 0; c < ws.size(); ++c) {
      auto& e = res.entries[which[c]];
      try {
        e.cost = ev.trace(ws[c]);
        e.ok = std::isfinite(e.cost);
        if (!e.ok) e.error = "non-finite cost";
      } catch (const std::exception& ex) {
        e.error = ex.what();
      }
    }
  } else {
    parallel_for(static_cast<Index>(candidates.size()), opts.threads, [&](Index i) {
      auto& e = res.entries[static_cast<size_t>(i)];
      try {
        const Problem p = instantiate(family, base, e.candidate);
        e.cost = criterion_value(criterion_operator(p, criterion, eval, opts), criterion);
        e.ok = std::isfinite(e.cost);
        if (!e.ok) e.error = "non-finite cost";
      } catch (const std::exception& ex) {
        e.error = ex.what();
      }
    });
  }
  bool any = false;
  for (const auto& e : res.entries) any = any || e.ok;
  if (!any) throw Error(ErrorKind::Sweep, "every candidate failed: " + res.entries.front().error);
  const Selection sel = select_optimal(res);
  res.best = sel.best;
  res.best_cost = sel.cost;
  res.ties = sel.ties;
  return res;
}

Selection select_optimal(const PlacementResult& result, double rel_tol) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : result.entries)
    if (e.ok) best = std::min(best, e.cost);
  if (!std::isfinite(best)) throw Error(ErrorKind::Empty, "no successful costs to select from");
  const double cut = best + rel_tol * std::abs(best);
  Selection s;
  for (const auto& e : result.entries)
    if (e.ok && e.cost <= cut) s.ties.push_back(e.candidate);
  std::sort(s.ties.begin(), s.ties.end());
  s.ties.erase(std::unique(s.ties.begin(), s.ties.end()), s.ties.end());
  s.best = s.ties.front();
  for (const auto& e : result.entries)
    if (e.ok && e.candidate == s.best) s.cost = e.cost;
  return s;
}

ContinuityReport continuity_probe(const LocationFamily& family, const Problem& base, Criterion criterion,
                                  const EvalPoint& eval, const Candidate& r0, const std::vector<double>& radii,
                                  const std::vector<double>& direction, const LocationSpace& space, double slack,
                                  const SweepOptions& opts) {
  check_kinds(family, base, criterion);
  if (direction.size() != r0.coords.size()) throw Error(ErrorKind::InvalidInput, "direction and r0 differ in dimension");
  double dn = 0.0;
  for (double d : direction) dn += d * d;
  dn = std::sqrt(dn);
  if (!(dn > 0.0)) throw Error(ErrorKind::InvalidInput, "direction must be non-zero");
  std::vector<Candidate> cands;
  for (double rad : radii) {
    Candidate c = r0;
    for (size_t i = 0; i < c.coords.size(); ++i) c.coords[i] += rad * direction[i] / dn;
    if (!space.contains(c)) throw Error(ErrorKind::Domain, "continuity probe leaves the location box");
    cands.push_back(std::move(c));
  }
  if (!space.contains(r0)) throw Error(ErrorKind::Domain, "r0 outside the location box");

  const OpValuedFunction op0 = family.builder(r0);
  std::vector<OpValuedFunction> ops;
  for (const auto& c : cands) ops.push_back(family.builder(c));

  ContinuityReport rep;
  std::vector<Matrix> diffs;
  std::vector<double> values;
  double v0 = 0.0;
  bool info = false;
  if (!is_lq(criterion)) {
    const auto& fp = std::get<FilterProblem>(base);
    info = opts.evaluator == SensorEvaluator::InformationForm ||
           (opts.evaluator == SensorEvaluator::Auto && information_form_applicable(fp) && fp.state_dim() > 64);
  }
  if (info) {
    const auto& fp = std::get<FilterProblem>(base);
    const auto [tau, t] = sensor_nodes(base, criterion, eval);
    const InformationEvaluator ev(fp, tau, t);
    std::vector<OpValuedFunction> all = ops;
    all.insert(all.begin(), op0);
    const std::vector<Matrix> ws = ev.rows(all);
    const Matrix core0 = ev.core(ws[0]);
    // |X D X^T|_1 through a thin QR of X
    Eigen::HouseholderQR<Matrix> qr(ev.X());
    const Index k = std::min(ev.X().rows(), ev.X().cols());
    const Matrix rr = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    v0 = ev.trace(ws[0]);
    for (size_t i = 1; i < ws.size(); ++i) {
      diffs.push_back(rr * (ev.core(ws[i]) - core0) * rr.transpose());
      values.push_back(ev.trace(ws[i]));
    }
  } else {
    const Matrix a0 = criterion_operator(instantiate(family, base, r0), criterion, eval, opts);
    v0 = criterion_value(a0, criterion);
    for (const auto& c : cands) {
      const Matrix a = criterion_operator(instantiate(family, base, c), criterion, eval, opts);
      diffs.push_back(a - a0);
      values.push_back(criterion_value(a, criterion));
    }
  }
  for (size_t i = 0; i < cands.size(); ++i) {
    ContinuityRow row;
    row.radius = radii[i];
    row.candidate = cands[i];
    row.operator_deviation = op_deviation(ops[i], op0);
    row.cost_deviation = criterion == Criterion::LqOperatorNorm ? operator_norm(diffs[i]) : nuclear_norm(diffs[i]);
    row.value_deviation = std::abs(values[i] - v0);
    if (!std::isfinite(row.cost_deviation)) rep.blowup = true;
    if (!rep.rows.empty()) {
      const ContinuityRow& prev = rep.rows.back();
      const bool shrinking = std::abs(row.radius) <= std::abs(prev.radius);
      if (shrinking && row.cost_deviation > (1.0 + slack) * prev.cost_deviation + 1e-14) {
        rep.monotone = false;
        if (row.operator_deviation <= prev.operator_deviation) rep.blowup = true;
      }
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

}  // namespace placeopt
