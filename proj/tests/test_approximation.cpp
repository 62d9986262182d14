#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "placeopt/advdiff.hpp"
#include "placeopt/approximation.hpp"

using namespace placeopt;

namespace {

Matrix random_orthonormal(std::uint64_t seed, Index n) {
  NormalStream rng(seed);
  Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(n, n));
  return qr.householderQ() * Matrix::Identity(n, n);
}

double max_step_norm(const EvolutionOperator& t) {
  double m = 0.0;
  for (Index k = 0; k < t.grid().steps(); ++k) m = std::max(m, operator_norm(t.step(k).dense()));
  return m;
}

double max_norm(const OpValuedFunction& f) {
  double m = 0.0;
  for (Index k = 0; k <= f.grid().steps(); ++k) m = std::max(m, operator_norm(f[k]));
  return m;
}

AdvDiffConfig small_config(double horizon = 0.5) {
  AdvDiffConfig c;
  c.t1 = horizon;
  c.dt = 0.05;
  return c;
}

// Isometric representation of a smooth field on both blocks.
Vector smooth_probe(const AdvDiffConfig& cfg, const std::function<double(double, double, double)>& f) {
  const AdvDiffGrid g(cfg);
  const Vector avg = cell_average_projection(f, g, cfg.quadrature_points);
  const Vector sv = g.volumes().cwiseSqrt();
  Vector x(2 * g.cells());
  x << sv.cwiseProduct(avg), sv.cwiseProduct(avg);
  return x;
}

}  // namespace

TEST_CASE("finest level returns the reference problem") {
  const LQProblem lq = fixture::random_lq(3, 4, 2, 2, 10);
  const auto h = ProjectionHierarchy::from_orthonormal_basis(Matrix::Identity(4, 4), {2, 4});
  CHECK(h.is_identity(1));
  CHECK_FALSE(h.is_identity(0));
  const LQProblem q = project_problem(lq, h, 1);
  CHECK(q.G == lq.G);
  for (Index k = 0; k <= 10; ++k) {
    CHECK(q.B[k] == lq.B[k]);
    CHECK(q.C[k] == lq.C[k]);
  }
  CHECK(q.T.propagate(10, 0, Matrix::Identity(4, 4)) == lq.T.propagate(10, 0, Matrix::Identity(4, 4)));

  const AssumptionReport rep = assumption_residuals(h, Problem(lq), 1, 5, 11);
  CHECK(rep.evolution == 0.0);
  CHECK(rep.evolution_adjoint == 0.0);
  CHECK(rep.input == 0.0);
  CHECK(rep.input_adjoint == 0.0);
  CHECK(rep.output == 0.0);
  CHECK(rep.output_adjoint == 0.0);
  CHECK(rep.terminal == 0.0);
  CHECK(rep.samples == 5);
}

TEST_CASE("cell averaging keeps constants") {
  AdvDiffConfig c = small_config();
  const auto h = advdiff_hierarchy(c, {2, 4, 8});
  c.nx = c.ny = 8;
  const Vector fine = smooth_probe(c, [](double, double, double) { return 3.0; });
  for (Index i = 0; i < h.size(); ++i) {
    AdvDiffConfig cc = c;
    cc.nx = cc.ny = Index{2} << i;
    const Vector coarse = smooth_probe(cc, [](double, double, double) { return 3.0; });
    const auto& l = h.level(i);
    CHECK((l.project * fine - coarse).norm() <= 1e-12 * coarse.norm());
    CHECK((l.lift * coarse - fine).norm() <= 1e-12 * fine.norm());
  }
}

TEST_CASE("projection is a contraction") {
  const LQProblem lq = fixture::random_lq(17, 8, 3, 2, 12);
  FilterProblem fp = fixture::random_filter(18, 8, 2, 12).fp;
  const auto h = ProjectionHierarchy::from_orthonormal_basis(random_orthonormal(19, 8), {4, 8});
  const LQProblem q = project_problem(lq, h, 0);
  CHECK(q.state_dim() == 4);
  CHECK(max_step_norm(q.T) <= max_step_norm(lq.T) + 1e-12);
  CHECK(max_norm(q.B) <= max_norm(lq.B) + 1e-12);
  CHECK(max_norm(q.C) <= max_norm(lq.C) + 1e-12);
  CHECK(operator_norm(q.G) <= operator_norm(lq.G) + 1e-12);
  CHECK(psd_check(q.G).is_psd);

  const FilterProblem pf = project_problem(fp, h, 0);
  CHECK(max_step_norm(pf.M) <= max_step_norm(fp.M) + 1e-12);
  CHECK(max_norm(pf.D) <= max_norm(fp.D) + 1e-12);
  CHECK(max_norm(pf.H) <= max_norm(fp.H) + 1e-12);
  CHECK(operator_norm(pf.P0) <= operator_norm(fp.P0) + 1e-12);
  CHECK(psd_check(pf.P0).is_psd);
  for (Index k = 0; k <= 12; ++k) CHECK(psd_check(pf.Q(k)).is_psd);
}

TEST_CASE("project after lift is the identity") {
  for (std::uint64_t seed = 1; seed < 4; ++seed) {
    const auto h = ProjectionHierarchy::from_orthonormal_basis(random_orthonormal(seed, 9), {2, 5, 9});
    for (Index i = 0; i < h.size(); ++i) CHECK(h.project_lift_residual(i) <= 1e-12);
    const Matrix m = h.inter_level(0, 1);
    CHECK((h.inter_level(1, 0) * m - Matrix::Identity(2, 2)).norm() <= 1e-12);
  }
  AdvDiffConfig c = small_config();
  const auto h = advdiff_hierarchy(c, {5, 10});
  for (Index i = 0; i < h.size(); ++i) CHECK(h.project_lift_residual(i) <= 1e-12);
  // lifting preserves the norm
  NormalStream rng(4);
  const Vector x = rng.normal_vector(h.level(0).dim);
  CHECK((h.level(0).lift * x).norm() == doctest::Approx(x.norm()).epsilon(1e-12));
}

TEST_CASE("evolution residual vanishes on an aligned eigenbasis") {
  const Index n = 6, steps = 15;
  const Matrix u = random_orthonormal(31, n);
  NormalStream rng(32);
  const TimeGrid g(0.0, 1.0, steps);
  std::vector<Matrix> phis;
  for (Index k = 0; k < steps; ++k) {
    const Vector d = (0.1 * rng.normal_vector(n)).array().exp();
    phis.push_back(u * d.asDiagonal() * u.transpose());
  }
  FilterProblem fp = fixture::random_filter(33, n, 1, steps).fp;
  fp.M = EvolutionOperator::from_matrices(g, phis);
  const auto h = ProjectionHierarchy::from_orthonormal_basis(u, {1, 3, 6});
  for (Index i = 0; i < h.size(); ++i) {
    const AssumptionReport rep = assumption_residuals(h, Problem(fp), i, 8, 34);
    CHECK(rep.evolution <= 1e-13);
    CHECK(rep.evolution_adjoint <= 1e-13);
  }
}

TEST_CASE("advdiff residuals shrink under refinement") {
  AdvDiffConfig base = small_config(1.0);
  const std::vector<Index> sizes = {2, 4, 8};
  const auto h = advdiff_hierarchy(base, sizes);
  AdvDiffConfig fine_cfg = base;
  fine_cfg.nx = fine_cfg.ny = 8;
  const auto fine = AdvDiffModel::build(fine_cfg);
  const std::array<double, 3> r{2.5, 2.5, 0.0};
  const Problem reference(fine->sensor_problem(r));
  const double kx = 2.0 * std::acos(-1.0) / base.lx;
  Matrix probes(fine->dim(), 3);
  probes.col(0) = smooth_probe(fine_cfg, [&](double x, double y, double) { return std::sin(kx * x) + std::cos(kx * y); });
  probes.col(1) = smooth_probe(fine_cfg, [&](double x, double, double z) { return std::cos(kx * x) * (1.0 + z); });
  probes.col(2) = smooth_probe(fine_cfg, [&](double, double y, double z) { return 2.0 + std::sin(kx * y) * z; });
  std::vector<AssumptionReport> reps;
  for (Index i = 0; i < 2; ++i) {
    AdvDiffConfig c = base;
    c.nx = c.ny = sizes[static_cast<size_t>(i)];
    const auto m = AdvDiffModel::build(c);
    const Problem lp(m->sensor_problem(r));
    reps.push_back(assumption_residuals(h, reference, i, 0, 5, &lp, &probes));
  }
  reps.push_back(assumption_residuals(h, reference, 2, 0, 5, nullptr, &probes));
  for (size_t i = 1; i < reps.size(); ++i) {
    CHECK(reps[i].evolution < reps[i - 1].evolution);
    CHECK(reps[i].evolution_adjoint < reps[i - 1].evolution_adjoint);
  }
  CHECK(reps.back().evolution == 0.0);
  CHECK(reps.back().output == 0.0);
}

TEST_CASE("embedded problem gives identical records on every level") {
  const Index steps = 20;
  const TimeGrid g(0.0, 1.0, steps);
  // three observed sites plus three inert states
  FilterProblem fp;
  Matrix m = Matrix::Identity(6, 6);
  m(0, 0) = 0.97;
  m(2, 2) = 1.02;
  fp.M = EvolutionOperator::time_invariant(g, m);
  Matrix d = Matrix::Zero(6, 1);
  d(1, 0) = 1.0;
  fp.D = OpValuedFunction::constant(g, d);
  fp.W = OpValuedFunction::constant(g, Matrix::Ones(1, 1));
  fp.H = OpValuedFunction::constant(g, Matrix::Zero(1, 6));
  fp.E = OpValuedFunction::constant(g, Matrix::Ones(1, 1));
  fp.V = OpValuedFunction::constant(g, Matrix::Ones(1, 1));
  fp.P0 = Matrix::Zero(6, 6);
  fp.P0.topLeftCorner(3, 3) = Vector::LinSpaced(3, 1.0, 2.0).asDiagonal();
  LocationFamily fam;
  fam.kind = LocationFamily::Kind::Sensor;
  fam.builder = [g](const Candidate& c) {
    Matrix hh = Matrix::Zero(1, 6);
    hh(0, static_cast<Index>(c.coords[0])) = 1.0;
    return OpValuedFunction::constant(g, hh);
  };
  const auto h = ProjectionHierarchy::from_orthonormal_basis(Matrix::Identity(6, 6), {3, 4, 6});
  const std::vector<Candidate> cands = {{{0.0}}, {{1.0}}, {{2.0}}};
  for (Criterion cr : {Criterion::FilterNuclear, Criterion::SmootherNuclear}) {
    EvalPoint e;
    e.tau = 5;
    e.t = 15;
    const auto recs = refinement_study(levels_from_hierarchy(Problem(fp), fam, h), cands, cr, e);
    REQUIRE(recs.size() == 3);
    for (const auto& r : recs) {
      CHECK(r.ok);
      CHECK(r.cost == doctest::Approx(recs.front().cost).epsilon(1e-12));
      CHECK(r.location == recs.front().location);
    }
    CHECK(recs[1].displacement == 0.0);
    CHECK(recs[2].relative_change <= 1e-12);
    CHECK(stability_test(recs).stable);
  }
}

TEST_CASE("prior traces across grid levels") {
  std::vector<double> nuclear;
  for (Index nx : {5, 10, 20}) {
    AdvDiffConfig c = small_config();
    c.nx = c.ny = nx;
    c.prior = PriorKind::Nuclear;
    const Matrix l = AdvDiffModel::build(c)->prior_factor();
    nuclear.push_back(l.squaredNorm());
    if (nx <= 10) {
      c.prior = PriorKind::ScaledIdentity;
      const auto m = AdvDiffModel::build(c);
      const FilterProblem fp = m->sensor_problem({2.5, 2.5, 0.0});
      const double n = static_cast<double>(m->dim());
      CHECK(nuclear_norm(fp.P0) == doctest::Approx(n * std::exp(-8.0)).epsilon(1e-12));
      CHECK(m->prior_factor().squaredNorm() == doctest::Approx(n * std::exp(-8.0)).epsilon(1e-12));
    }
  }
  double bound = 0.0;
  for (int i = 1; i <= 12; ++i) bound += std::exp(-static_cast<double>(i * i));
  for (double v : nuclear) CHECK(v <= bound * (1.0 + 1e-3));
  CHECK(std::abs(nuclear[2] - nuclear[1]) <= std::abs(nuclear[1] - nuclear[0]) + 1e-15);
  CHECK(std::abs(nuclear[2] - nuclear[1]) <= 1e-3 * nuclear[2]);
}

TEST_CASE("two finest levels stability test") {
  auto rec = [](double cost, double x, double change) {
    RefinementRecord r;
    r.ok = true;
    r.cost = cost;
    r.location = {{x, 0.5}};
    r.relative_change = change;
    return r;
  };
  CHECK(stability_test({rec(1.0, 0.5, 0.0), rec(1.01, 0.5, 0.01)}).stable);
  const auto moved = stability_test({rec(1.0, 0.5, 0.0), rec(1.01, 1.5, 0.01)});
  CHECK_FALSE(moved.stable);
  CHECK_FALSE(moved.same_location);
  const auto grew = stability_test({rec(1.0, 0.5, 0.0), rec(2.0, 0.5, 1.0)});
  CHECK(grew.same_location);
  CHECK_FALSE(grew.stable);
  CHECK(grew.relative_change == 1.0);
  auto failed = rec(1.0, 0.5, 0.0);
  failed.ok = false;
  CHECK_FALSE(stability_test({rec(1.0, 0.5, 0.0), failed}).stable);
  CHECK_THROWS_AS(stability_test({rec(1.0, 0.5, 0.0)}), Error);
}

TEST_CASE("malformed hierarchies") {
  auto expect_hierarchy = [](auto&& f) {
    try {
      f();
      FAIL("accepted");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Hierarchy);
    }
  };
  expect_hierarchy([] { ProjectionHierarchy::from_orthonormal_basis(Matrix::Identity(4, 4), {3, 2}); });
  expect_hierarchy([] { ProjectionHierarchy::from_orthonormal_basis(Matrix::Identity(4, 4), {5}); });
  expect_hierarchy([] { ProjectionHierarchy::from_orthonormal_basis(2.0 * Matrix::Identity(4, 4), {2}); });
  expect_hierarchy([] { ProjectionHierarchy(4, {}); });
  expect_hierarchy([] {
    HierarchyLevel l;
    l.dim = 2;
    l.project = Matrix::Identity(2, 3);
    l.lift = Matrix::Identity(4, 2);
    ProjectionHierarchy(4, {l});
  });
  const auto h = ProjectionHierarchy::from_orthonormal_basis(Matrix::Identity(4, 4), {2, 4});
  expect_hierarchy([&] { h.level(2); });
  expect_hierarchy([&] { project_problem(fixture::random_lq(1, 3, 1, 1, 5), h, 0); });
  AdvDiffConfig c = small_config();
  expect_hierarchy([&] { advdiff_hierarchy(c, {3, 5}); });
}
