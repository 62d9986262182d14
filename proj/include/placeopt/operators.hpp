#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "placeopt/error.hpp"

namespace placeopt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Uniform grid t0 < t1 < ... < tN = b.
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double t0, double b, Index steps);

  double t0() const { return t0_; }
  double b() const { return b_; }
  Index steps() const { return steps_; }
  Index size() const { return steps_ + 1; }
  double dt() const { return dt_; }
  double node(Index k) const;
  // Index of the node equal to t (within tol * dt); throws Grid otherwise.
  Index index_of(double t, double tol = 1e-6) const;

  bool operator==(const TimeGrid& other) const;
  bool operator!=(const TimeGrid& other) const { return !(*this == other); }

 private:
  double t0_ = 0.0;
  double b_ = 1.0;
  Index steps_ = 1;
  double dt_ = 1.0;
};

// Operator-valued function sampled on the nodes of a grid, piecewise constant
// from the left between nodes.
class OpValuedFunction {
 public:
  OpValuedFunction() = default;
  OpValuedFunction(TimeGrid grid, std::vector<Matrix> samples);

  static OpValuedFunction constant(const TimeGrid& grid, const Matrix& value);
  static OpValuedFunction from_function(const TimeGrid& grid,
                                        const std::function<Matrix(double)>& f);

  const TimeGrid& grid() const { return grid_; }
  Index rows() const { return samples_.front().rows(); }
  Index cols() const { return samples_.front().cols(); }
  bool is_constant() const { return samples_.size() == 1; }

  const Matrix& operator[](Index k) const;
  const Matrix& at(double t) const;

  double sup_norm() const;
  bool is_zero() const;

  // Sample j of the result is sample N - j of this function.
  OpValuedFunction reversed() const;
  OpValuedFunction transposed() const;
  OpValuedFunction map(const std::function<Matrix(const Matrix&)>& f) const;

 private:
  TimeGrid grid_;
  std::vector<Matrix> samples_;
};

namespace detail {
double operator_norm_impl(const Matrix& a);
double nuclear_norm_impl(const Matrix& a);
void require_finite(const Matrix& a, const char* what);
}  // namespace detail

template <typename Derived>
double operator_norm(const Eigen::MatrixBase<Derived>& a) {
  const Matrix m = a.eval();
  detail::require_finite(m, "operator_norm");
  return detail::operator_norm_impl(m);
}

template <typename Derived>
double nuclear_norm(const Eigen::MatrixBase<Derived>& a) {
  const Matrix m = a.eval();
  detail::require_finite(m, "nuclear_norm");
  return detail::nuclear_norm_impl(m);
}

struct PsdReport {
  bool is_psd = false;
  double min_eigenvalue = 0.0;
  double asymmetry = 0.0;
};

PsdReport psd_check(const Matrix& a, double tol = 1e-10);

template <typename Derived>
Matrix symmetrize(const Eigen::MatrixBase<Derived>& a) {
  return 0.5 * (a + a.transpose());
}

// Symmetrizes and sets eigenvalues in [floor * max(1, lambda_max), 0) to zero.
Matrix clip_psd(const Matrix& a, double floor = -1e-12);

// Symmetric PSD square root. Throws NotPsd if a is not PSD within tol.
Matrix psd_sqrt(const Matrix& a, double tol = 1e-10);

// Tall factor L with a = L L^T, keeping only eigenvalues above drop * lambda_max.
Matrix psd_factor(const Matrix& a, double drop = 0.0, double tol = 1e-10);

bool all_finite(const Matrix& a);

}  // namespace placeopt
