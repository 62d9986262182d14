#include "placeopt/operators.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace placeopt {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid_input";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Grid: return "grid";
    case ErrorKind::Conditioning: return "conditioning";
    case ErrorKind::Iteration: return "iteration";
    case ErrorKind::Coercivity: return "coercivity";
    case ErrorKind::NotPsd: return "not_psd";
    case ErrorKind::Ordering: return "ordering";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Stability: return "stability";
    case ErrorKind::Empty: return "empty";
    case ErrorKind::Sweep: return "sweep";
    case ErrorKind::Hierarchy: return "hierarchy";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Schema: return "schema";
  }
  return "unknown";
}

TimeGrid::TimeGrid(double t0, double b, Index steps) : t0_(t0), b_(b), steps_(steps) {
  if (!std::isfinite(t0) || !std::isfinite(b) || !(b > t0))
    throw Error(ErrorKind::Grid, "time grid needs finite t0 < b");
  if (steps < 1) throw Error(ErrorKind::Grid, "time grid needs at least one step");
  dt_ = (b - t0) / static_cast<double>(steps);
}

double TimeGrid::node(Index k) const {
  if (k < 0 || k > steps_) throw Error(ErrorKind::Grid, "node index out of range");
  if (k == steps_) return b_;
  return t0_ + static_cast<double>(k) * dt_;
}

Index TimeGrid::index_of(double t, double tol) const {
  const double r = (t - t0_) / dt_;
  const double k = std::round(r);
  if (!std::isfinite(r) || std::abs(r - k) > tol || k < 0 || k > static_cast<double>(steps_)) {
    std::ostringstream os;
    os << "time " << t << " is not a grid node";
    throw Error(ErrorKind::Grid, os.str());
  }
  return static_cast<Index>(k);
}

bool TimeGrid::operator==(const TimeGrid& o) const {
  const double scale = std::max(1.0, std::abs(b_ - t0_));
  return steps_ == o.steps_ && std::abs(t0_ - o.t0_) <= 1e-12 * scale &&
         std::abs(b_ - o.b_) <= 1e-12 * scale;
}

OpValuedFunction::OpValuedFunction(TimeGrid grid, std::vector<Matrix> samples)
    : grid_(grid), samples_(std::move(samples)) {
  if (samples_.size() != 1 && static_cast<Index>(samples_.size()) != grid_.size())
    throw Error(ErrorKind::Grid, "operator-valued function needs one sample per grid node");
  for (const auto& s : samples_) {
    if (s.rows() != samples_.front().rows() || s.cols() != samples_.front().cols())
      throw Error(ErrorKind::Shape, "operator-valued function samples differ in shape");
    detail::require_finite(s, "operator-valued function sample");
  }
}

OpValuedFunction OpValuedFunction::constant(const TimeGrid& grid, const Matrix& value) {
  return OpValuedFunction(grid, std::vector<Matrix>{value});
}

OpValuedFunction OpValuedFunction::from_function(const TimeGrid& grid,
                                                 const std::function<Matrix(double)>& f) {
  std::vector<Matrix> s;
  s.reserve(static_cast<size_t>(grid.size()));
  for (Index k = 0; k < grid.size(); ++k) s.push_back(f(grid.node(k)));
  return OpValuedFunction(grid, std::move(s));
}

const Matrix& OpValuedFunction::operator[](Index k) const {
  if (k < 0 || k >= grid_.size()) throw Error(ErrorKind::Grid, "sample index out of range");
  return is_constant() ? samples_.front() : samples_[static_cast<size_t>(k)];
}

const Matrix& OpValuedFunction::at(double t) const {
  if (t < grid_.t0() - 1e-12 || t > grid_.b() + 1e-12)
    throw Error(ErrorKind::Grid, "time outside the grid");
  Index k = static_cast<Index>(std::floor((t - grid_.t0()) / grid_.dt() + 1e-9));
  k = std::clamp<Index>(k, 0, grid_.steps());
  return (*this)[k];
}

double OpValuedFunction::sup_norm() const {
  double s = 0.0;
  for (const auto& m : samples_) s = std::max(s, operator_norm(m));
  return s;
}

bool OpValuedFunction::is_zero() const {
  for (const auto& m : samples_)
    if (!m.isZero(0.0)) return false;
  return true;
}

OpValuedFunction OpValuedFunction::reversed() const {
  if (is_constant()) return *this;
  std::vector<Matrix> s(samples_.rbegin(), samples_.rend());
  return OpValuedFunction(grid_, std::move(s));
}

OpValuedFunction OpValuedFunction::transposed() const {
  return map([](const Matrix& m) { return Matrix(m.transpose()); });
}

OpValuedFunction OpValuedFunction::map(const std::function<Matrix(const Matrix&)>& f) const {
  std::vector<Matrix> s;
  s.reserve(samples_.size());
  for (const auto& m : samples_) s.push_back(f(m));
  return OpValuedFunction(grid_, std::move(s));
}

namespace detail {

void require_finite(const Matrix& a, const char* what) {
  if (!all_finite(a)) throw Error(ErrorKind::InvalidInput, std::string(what) + ": non-finite entry");
}

double operator_norm_impl(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  if (std::max(a.rows(), a.cols()) <= 512) {
    Eigen::BDCSVD<Matrix> svd(a);
    return svd.singularValues()(0);
  }
  // power iteration on a^T a
  Vector v = Vector::Ones(a.cols()) / std::sqrt(static_cast<double>(a.cols()));
  for (Index i = 0; i < a.cols(); i += 7) v(i) *= -1.0;
  double sigma = 0.0;
  for (int it = 0; it < 2000; ++it) {
    Vector w = a.transpose() * (a * v);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    const double next = std::sqrt(nw);
    v = w / nw;
    if (std::abs(next - sigma) <= 1e-14 * next) return next;
    sigma = next;
  }
  return sigma;
}

double nuclear_norm_impl(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  if (std::max(a.rows(), a.cols()) > 512 && a.rows() == a.cols() &&
      (a - a.transpose()).lpNorm<Eigen::Infinity>() <= 1e-12 * a.lpNorm<Eigen::Infinity>()) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().sum();
  }
  Eigen::BDCSVD<Matrix> svd(a);
  return svd.singularValues().sum();
}

}  // namespace detail

bool all_finite(const Matrix& a) { return a.allFinite(); }

PsdReport psd_check(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::Shape, "psd_check needs a square matrix");
  detail::require_finite(a, "psd_check");
  PsdReport r;
  if (a.size() == 0) {
    r.is_psd = true;
    return r;
  }
  const double scale = std::max(1.0, operator_norm(a));
  r.asymmetry = operator_norm(Matrix(a - a.transpose()));
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a), Eigen::EigenvaluesOnly);
  r.min_eigenvalue = es.eigenvalues().minCoeff();
  r.is_psd = r.asymmetry <= tol * scale && r.min_eigenvalue >= -tol * scale;
  return r;
}

Matrix clip_psd(const Matrix& a, double floor) {
  Matrix s = symmetrize(a);
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  Vector ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  bool changed = false;
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < 0.0 && ev(i) >= floor * scale) {
      ev(i) = 0.0;
      changed = true;
    }
  }
  if (!changed) return s;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Matrix psd_sqrt(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::Shape, "psd_sqrt needs a square matrix");
  detail::require_finite(a, "psd_sqrt");
  if (a.size() == 0) return a;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a));
  const Vector& ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -tol * scale || operator_norm(Matrix(a - a.transpose())) > tol * scale)
    throw Error(ErrorKind::NotPsd, "square root requested of a matrix that is not PSD");
  const Vector root = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

Matrix psd_factor(const Matrix& a, double drop, double tol) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::Shape, "psd_factor needs a square matrix");
  detail::require_finite(a, "psd_factor");
  const Index n = a.rows();
  if (n == 0) return Matrix(0, 0);
  if (a.isDiagonal(0.0)) {
    const Vector d = a.diagonal();
    if (d.minCoeff() < -tol * std::max(1.0, d.cwiseAbs().maxCoeff()))
      throw Error(ErrorKind::NotPsd, "factor requested of a matrix that is not PSD");
    const double cut = drop * d.maxCoeff();
    std::vector<Index> keep;
    for (Index i = 0; i < n; ++i)
      if (d(i) > cut && d(i) > 0.0) keep.push_back(i);
    Matrix l = Matrix::Zero(n, static_cast<Index>(keep.size()));
    for (size_t j = 0; j < keep.size(); ++j)
      l(keep[j], static_cast<Index>(j)) = std::sqrt(d(keep[j]));
    return l;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a));
  const Vector& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  if (ev.minCoeff() < -tol * std::max(1.0, top))
    throw Error(ErrorKind::NotPsd, "factor requested of a matrix that is not PSD");
  std::vector<Index> keep;
  for (Index i = n - 1; i >= 0; --i)
    if (ev(i) > drop * top && ev(i) > 0.0) keep.push_back(i);
  Matrix l(n, static_cast<Index>(keep.size()));
  for (size_t j = 0; j < keep.size(); ++j)
    l.col(static_cast<Index>(j)) = es.eigenvectors().col(keep[j]) * std::sqrt(ev(keep[j]));
  return l;
}

}  // namespace placeopt
