#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "placeopt/operators.hpp"
#include "placeopt/random.hpp"

using namespace placeopt;

TEST_CASE("operator norm of simple matrices") {
  CHECK(operator_norm(Matrix::Identity(3, 3)) == doctest::Approx(1.0).epsilon(1e-14));
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal() << 3.0, 1.0;
  CHECK(operator_norm(d) == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("operator norm agrees with power iteration") {
  NormalStream rng(7);
  const Matrix a = rng.normal_matrix(5, 5);
  CHECK(std::abs(operator_norm(a) - oracle::power_iteration_norm(a)) <= 1e-10);
}

TEST_CASE("nuclear norm of simple matrices") {
  CHECK(nuclear_norm(Matrix::Identity(4, 4)) == doctest::Approx(4.0));
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal() << 2.0, -3.0;
  CHECK(nuclear_norm(d) == doctest::Approx(5.0).epsilon(1e-14));
}

TEST_CASE("nuclear norm of a Gram matrix is its trace") {
  NormalStream rng(11);
  const Matrix a = rng.normal_matrix(6, 6);
  const Matrix g = a.transpose() * a;
  double trace = 0.0;
  for (Index i = 0; i < 6; ++i) trace += a.col(i).squaredNorm();
  CHECK(std::abs(nuclear_norm(g) - trace) <= 1e-10 * trace);
}

TEST_CASE("large matrices use the iterative paths") {
  NormalStream rng(3);
  const Matrix a = rng.normal_matrix(600, 20);
  const Matrix g = a * a.transpose();
  Eigen::JacobiSVD<Matrix> svd(a);
  const double s0 = svd.singularValues()(0);
  CHECK(std::abs(operator_norm(g) - s0 * s0) <= 1e-8 * s0 * s0);
  CHECK(std::abs(nuclear_norm(g) - a.squaredNorm()) <= 1e-8 * a.squaredNorm());
}

TEST_CASE("non-finite entries are rejected") {
  Matrix a = Matrix::Identity(2, 2);
  a(0, 1) = std::nan("");
  CHECK_THROWS_AS(operator_norm(a), Error);
  try {
    nuclear_norm(a);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }
}

TEST_CASE("psd check") {
  const PsdReport id = psd_check(Matrix::Identity(3, 3));
  CHECK(id.is_psd);
  CHECK(id.min_eigenvalue == doctest::Approx(1.0));
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal() << 1.0, -1.0;
  const PsdReport neg = psd_check(d);
  CHECK_FALSE(neg.is_psd);
  CHECK(neg.min_eigenvalue == doctest::Approx(-1.0));
  CHECK_THROWS_AS(psd_check(Matrix::Ones(2, 3)), Error);
  Matrix asym = Matrix::Identity(2, 2);
  asym(0, 1) = 0.5;
  CHECK_FALSE(psd_check(asym).is_psd);
}

TEST_CASE("norm inequalities on random matrices") {
  NormalStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.next_u64() % 6);
    const Matrix a = rng.normal_matrix(n, n), b = rng.normal_matrix(n, n);
    CAPTURE(trial);
    CHECK(operator_norm(a) <= nuclear_norm(a) * (1 + 1e-12));
    CHECK(nuclear_norm(Matrix(a + b)) <= (nuclear_norm(a) + nuclear_norm(b)) * (1 + 1e-12));
    CHECK(operator_norm(Matrix(a * b)) <= operator_norm(a) * operator_norm(b) * (1 + 1e-12));
    CHECK(psd_check(Matrix(a.transpose() * a)).is_psd);
    const Vector u = rng.normal_vector(n), v = rng.normal_vector(n);
    const Matrix r1 = u * v.transpose();
    CHECK(std::abs(operator_norm(r1) - nuclear_norm(r1)) <= 1e-12 * nuclear_norm(r1));
  }
}

TEST_CASE("psd square root and factor") {
  NormalStream rng(9);
  const Matrix a = oracle::random_psd(rng, 4);
  const Matrix s = psd_sqrt(a);
  CHECK((s * s - a).norm() <= 1e-10 * a.norm());
  CHECK((s - s.transpose()).norm() <= 1e-14);
  const Matrix l = psd_factor(a);
  CHECK((l * l.transpose() - a).norm() <= 1e-10 * a.norm());
  Matrix neg = -Matrix::Identity(2, 2);
  CHECK_THROWS_AS(psd_sqrt(neg), Error);
  const Matrix diag = Vector::LinSpaced(5, 0.0, 4.0).asDiagonal();
  const Matrix ld = psd_factor(diag);
  CHECK(ld.cols() == 4);
  CHECK((ld * ld.transpose() - diag).norm() <= 1e-14);
}

TEST_CASE("clip_psd removes round-off negatives only") {
  Matrix a = Matrix::Zero(2, 2);
  a.diagonal() << 1.0, -1e-14;
  const Matrix c = clip_psd(a);
  CHECK(psd_check(c, 0.0).min_eigenvalue >= 0.0);
  Matrix b = Matrix::Zero(2, 2);
  b.diagonal() << 1.0, -0.5;
  CHECK(clip_psd(b)(1, 1) == doctest::Approx(-0.5));
}

TEST_CASE("time grid") {
  const TimeGrid g(0.0, 3.0, 300);
  CHECK(g.dt() == doctest::Approx(0.01));
  CHECK(g.node(300) == 3.0);
  CHECK(g.index_of(1.5) == 150);
  CHECK_THROWS_AS(g.index_of(1.505), Error);
  CHECK_THROWS_AS(TimeGrid(1.0, 1.0, 3), Error);
  CHECK_THROWS_AS(TimeGrid(0.0, 1.0, 0), Error);
}

TEST_CASE("operator valued function sampling") {
  const TimeGrid g(0.0, 1.0, 4);
  const auto f = OpValuedFunction::from_function(g, [](double t) { return Matrix::Constant(1, 1, t); });
  CHECK(f[2](0, 0) == doctest::Approx(0.5));
  CHECK(f.at(0.6)(0, 0) == doctest::Approx(0.5));  // piecewise constant from the left
  CHECK(f.sup_norm() == doctest::Approx(1.0));
  CHECK(f.reversed()[0](0, 0) == doctest::Approx(1.0));
  const auto c = OpValuedFunction::constant(g, Matrix::Ones(2, 3));
  CHECK(c.rows() == 2);
  CHECK(c.transposed().rows() == 3);
  CHECK(c[4] == Matrix::Ones(2, 3));
  CHECK_FALSE(c.is_zero());
  CHECK_THROWS_AS(OpValuedFunction(g, {Matrix::Ones(1, 1), Matrix::Ones(1, 1)}), Error);
  CHECK_THROWS_AS(OpValuedFunction(g, {Matrix::Ones(1, 1), Matrix::Ones(1, 1), Matrix::Ones(1, 1),
                                       Matrix::Ones(1, 1), Matrix::Ones(2, 1)}),
                  Error);
}
