#include <doctest.h>

#include "oracles.hpp"
#include "placeopt/evolution.hpp"

using namespace placeopt;

namespace {

EvolutionOperator from_generator_seeded(std::uint64_t seed, Index n, const TimeGrid& g, Matrix* a_out = nullptr) {
  NormalStream rng(seed);
  const Matrix a = rng.normal_matrix(n, n);
  if (a_out) *a_out = a;
  return EvolutionOperator::from_generator(g, a);
}

}  // namespace

TEST_CASE("identical exponential steps satisfy the axioms") {
  const TimeGrid g(0.0, 1.0, 20);
  const auto phi = from_generator_seeded(1, 3, g);
  const AxiomReport r = verify_evolution_axioms(phi, 50, 1e-12);
  CHECK(r.ok);
  CHECK(r.identity_residual == 0.0);
  CHECK(r.max_cocycle_residual <= 1e-13);
  CHECK(r.triples_checked == 50);
}

TEST_CASE("an altered step shows up in lambda but not in the cocycle") {
  const TimeGrid g(0.0, 1.0, 10);
  std::vector<Matrix> steps(10, Matrix::Identity(2, 2));
  steps[4] = 7.0 * Matrix::Identity(2, 2);
  const auto phi = EvolutionOperator::from_matrices(g, steps);
  const AxiomReport r = verify_evolution_axioms(phi, 30, 1e-12);
  CHECK(r.ok);
  CHECK(r.lambda_hat == doctest::Approx(7.0));
}

TEST_CASE("scalar identity evolution has lambda one") {
  const TimeGrid g(0.0, 1.0, 8);
  const auto phi = EvolutionOperator::time_invariant(g, Matrix::Ones(1, 1));
  CHECK(verify_evolution_axioms(phi, 10, 1e-14).lambda_hat == doctest::Approx(1.0));
}

TEST_CASE("evaluation and ordering") {
  const TimeGrid g(0.0, 1.0, 6);
  NormalStream rng(4);
  std::vector<Matrix> steps;
  for (int k = 0; k < 6; ++k) steps.push_back(rng.normal_matrix(3, 3));
  const auto phi = EvolutionOperator::from_matrices(g, steps);
  CHECK((phi.evaluate(5, 2) - steps[4] * steps[3] * steps[2]).norm() <= 1e-12);
  CHECK(phi.evaluate(3, 3) == Matrix::Identity(3, 3));
  const Matrix x = rng.normal_matrix(3, 2);
  CHECK((phi.propagate_adjoint(4, 1, x) - (steps[3] * steps[2] * steps[1]).transpose() * x).norm() <= 1e-12);
  CHECK_THROWS_AS(phi.evaluate(1, 2), Error);
  try {
    phi.evaluate(0, 3);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Ordering);
  }
  CHECK_THROWS_AS(EvolutionOperator::from_matrices(g, {Matrix::Identity(2, 2)}), Error);
}

TEST_CASE("time reversed adjoint") {
  const TimeGrid g(0.0, 2.0, 8);
  NormalStream rng(8);
  std::vector<Matrix> steps;
  for (int k = 0; k < 8; ++k) steps.push_back(rng.normal_matrix(2, 2));
  const auto phi = EvolutionOperator::from_matrices(g, steps);
  const auto psi = phi.time_reversed_adjoint();
  for (Index i = 0; i <= 8; ++i)
    for (Index j = i; j <= 8; ++j)
      CHECK((psi.evaluate(j, i) - phi.evaluate(8 - i, 8 - j).transpose()).norm() <= 1e-12);
  const auto back = psi.time_reversed_adjoint();
  CHECK((back.evaluate(8, 0) - phi.evaluate(8, 0)).norm() <= 1e-12);
}

TEST_CASE("zero perturbation leaves the evolution unchanged") {
  const TimeGrid g(0.0, 1.0, 10);
  const auto phi = from_generator_seeded(2, 3, g);
  const auto zero = OpValuedFunction::constant(g, Matrix::Zero(3, 3));
  const auto pd = perturb_evolution(phi, zero);
  CHECK(pd.evaluate(10, 0) == phi.evaluate(10, 0));
}

TEST_CASE("scalar perturbation approaches the exponential") {
  const TimeGrid g(0.0, 1.0, 10000);
  const auto phi = EvolutionOperator::time_invariant(g, Matrix::Ones(1, 1));
  const auto pd = perturb_evolution(phi, OpValuedFunction::constant(g, Matrix::Ones(1, 1)));
  CHECK(std::abs(pd.evaluate(10000, 0)(0, 0) - std::exp(1.0)) <= 1e-3);
}

TEST_CASE("perturbed evolution converges at first order") {
  // e^{A dt}(I + dt D) composed N times tends to e^{(A + D)(b - t0)}
  NormalStream rng(12);
  const Matrix a = rng.normal_matrix(2, 2), d = rng.normal_matrix(2, 2);
  const Matrix exact = Matrix((a + d) * 1.0).exp();
  std::vector<double> err;
  for (Index n : {50, 100, 200, 400}) {
    const TimeGrid g(0.0, 1.0, n);
    const auto pd = perturb_evolution(EvolutionOperator::from_generator(g, a), OpValuedFunction::constant(g, d));
    err.push_back((pd.evaluate(n, 0) - exact).norm());
  }
  for (size_t i = 1; i < err.size(); ++i) {
    CAPTURE(i);
    CHECK(err[i - 1] / err[i] == doctest::Approx(2.0).epsilon(0.1));
  }
}

TEST_CASE("perturbation invariants") {
  const TimeGrid g(0.0, 1.0, 40);
  NormalStream rng(21);
  const auto phi = from_generator_seeded(5, 3, g);
  std::vector<Matrix> ds;
  for (int k = 0; k <= 40; ++k) ds.push_back(rng.normal_matrix(3, 3));
  const OpValuedFunction d(g, ds);
  const auto pd = perturb_evolution(phi, d);

  SUBCASE("perturbing again by zero changes nothing") {
    const auto again = perturb_evolution(pd, OpValuedFunction::constant(g, Matrix::Zero(3, 3)));
    CHECK(again.evaluate(40, 0) == pd.evaluate(40, 0));
  }
  SUBCASE("discrete Duhamel identity") {
    for (int trial = 0; trial < 10; ++trial) {
      Index i = static_cast<Index>(rng.next_u64() % 41), j = static_cast<Index>(rng.next_u64() % 41);
      if (i > j) std::swap(i, j);
      const Vector x = rng.normal_vector(3);
      Vector rhs = phi.propagate(j, i, x);
      for (Index k = i; k < j; ++k) rhs += g.dt() * phi.propagate(j, k, ds[static_cast<size_t>(k)] * pd.propagate(k, i, x));
      CHECK((pd.propagate(j, i, x) - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }
  }
  SUBCASE("exponential bound") {
    const double lam = verify_evolution_axioms(phi, 0, 1e-12).lambda_hat;
    const double lam_d = d.sup_norm();
    for (Index i = 0; i <= 40; i += 8)
      for (Index j = i; j <= 40; j += 8)
        CHECK(operator_norm(pd.evaluate(j, i)) <= lam * std::exp(lam * lam_d * g.dt() * (j - i)) * (1 + 1e-12));
  }
  SUBCASE("series expansion") {
    const PerturbationReport r = perturbation_series(phi, d, 40, 0, 60);
    CHECK(r.residual <= 1e-10 * operator_norm(pd.evaluate(40, 0)));
    for (size_t n = 0; n < r.term_norms.size(); ++n) CHECK(r.term_norms[n] <= r.term_bounds[n] * (1 + 1e-9));
  }
  SUBCASE("post side uses the right endpoint") {
    const auto post = perturb_evolution(phi, d, PerturbSide::Post);
    const Matrix step = (Matrix::Identity(3, 3) + g.dt() * ds[6]) * phi.evaluate(6, 5);
    CHECK((post.evaluate(6, 5) - step).norm() <= 1e-13);
  }
  CHECK_THROWS_AS(perturb_evolution(phi, OpValuedFunction::constant(TimeGrid(0.0, 1.0, 20), Matrix::Zero(3, 3))),
                  Error);
}
