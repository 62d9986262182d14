#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "placeopt/approximation.hpp"
#include "placeopt/io.hpp"

namespace placeopt {

using Field = std::function<double(double t, double x, double y, double z)>;

enum class EmissionCoupling { Trapezoidal, OneSided };
enum class PriorKind { ScaledIdentity, Nuclear };
enum class PriorBasis { Fourier, DiscreteCosine, CellIndicator };

struct AdvDiffConfig {
  double lx = 5.0, ly = 5.0, lz = 1.0;
  double t0 = 0.0, t1 = 3.0;
  Index nx = 5, ny = 5, nz = 3;
  double vx = 1.0, vy = 0.5;
  std::function<double(double)> Kz = [](double z) { return 0.05 * (1.0 + z); };
  Field e_b;         // defaults to 1 + 0.5 sin(2 pi t / 3)
  Field deposition;  // known forcing; empty means zero
  double dt = 0.01;
  PriorKind prior = PriorKind::Nuclear;
  PriorBasis basis = PriorBasis::Fourier;
  Index prior_modes = 12;
  double identity_variance = 3.3546262790251185e-4;  // e^-8
  EmissionCoupling coupling = EmissionCoupling::Trapezoidal;
  Index quadrature_points = 4;  // Gauss-Legendre points per axis
  double obs_noise = 1.0;
  NoiseConvention noise = NoiseConvention::PerStep;
  // JSON descriptions of Kz, e_b and deposition when read from a config.
  Json kz_spec, eb_spec, deposition_spec;

  Index steps() const;
  void validate() const;
  double emission(double t, double x, double y, double z) const;
};

// Reads an advdiff config object. Unknown keys are rejected.
AdvDiffConfig advdiff_config_from_json(const Json& j, const std::string& path = "advdiff");
Json advdiff_config_to_json(const AdvDiffConfig& cfg);

// Cells are vertex-centred in z: node k sits at z_k with a control volume
// clipped to [0, lz]. Cell (i, j, k) has index (i * ny + j) * nz + k.
struct AdvDiffGrid {
  Index nx = 0, ny = 0, nz = 0;
  double lx = 0, ly = 0, lz = 0;
  double dx = 0, dy = 0;
  std::vector<double> z;                                 // node heights
  std::vector<std::array<double, 2>> z_bounds;           // control volumes
  explicit AdvDiffGrid(const AdvDiffConfig& cfg);
  Index cells() const { return nx * ny * nz; }
  Index index(Index i, Index j, Index k) const { return (i * ny + j) * nz + k; }
  Vector volumes() const;
  double z_weight(Index k) const { return z_bounds[static_cast<size_t>(k)][1] - z_bounds[static_cast<size_t>(k)][0]; }
};

// Per-cell averages of f via tensor Gauss-Legendre quadrature.
Vector cell_average_projection(const std::function<double(double, double, double)>& f, const AdvDiffGrid& g,
                               Index points = 4);

// Advances by h with I + h A + h^2/2 A^2, A the centred periodic difference
// of -v d/dx (axis 0) or -v d/dy (axis 1). Columns of `field` are fields.
Matrix lax_wendroff_step(const Matrix& field, double v, double h, int axis, const AdvDiffGrid& g);

// Flux-form vertical diffusion operator on one column (nz x nz).
Matrix vertical_diffusion(const std::function<double(double)>& kz, const AdvDiffGrid& g);

// (I - dt/2 D)^{-1} (I + dt/2 D) per column, by tridiagonal solves.
Matrix crank_nicolson_step(const Matrix& field, const std::function<double(double)>& kz, double dt,
                           const AdvDiffGrid& g);

// diag of M_e(t, s): per-cell ratios of integrated background emission.
Vector emission_transition(const AdvDiffConfig& cfg, const AdvDiffGrid& g, double t, double s);

// Observation row over the extended state: window dx x dy x (control volume of
// the nearest z node) centred at r, periodic horizontally.
Matrix observation_operator(const std::array<double, 3>& r, const AdvDiffGrid& g);

class AdvDiffModel;

// One step of the extended model, column by column. With sqrt weights s the
// step is diag(s) Phi diag(s)^{-1}.
class AdvDiffStep final : public StepMap {
 public:
  AdvDiffStep(std::shared_ptr<const AdvDiffModel> model, Index k, Vector sqrt_weights = Vector())
      : model_(std::move(model)), k_(k), s_(std::move(sqrt_weights)) {}
  Index dim() const override;
  Matrix apply(const Matrix& x) const override;
  Matrix apply_adjoint(const Matrix& x) const override;

 private:
  std::shared_ptr<const AdvDiffModel> model_;
  Index k_;
  Vector s_;
};

// D^{1/2} Phi D^{-1/2} for a positive diagonal D given by its square root.
class ScaledStep final : public StepMap {
 public:
  ScaledStep(StepPtr base, Vector sqrt_weights);
  Index dim() const override { return base_->dim(); }
  Matrix apply(const Matrix& x) const override;
  Matrix apply_adjoint(const Matrix& x) const override;

 private:
  StepPtr base_;
  Vector s_, inv_;
};

class AdvDiffModel : public std::enable_shared_from_this<AdvDiffModel> {
 public:
  static std::shared_ptr<const AdvDiffModel> build(const AdvDiffConfig& cfg);

  const AdvDiffConfig& config() const { return cfg_; }
  const AdvDiffGrid& grid() const { return grid_; }
  const TimeGrid& time_grid() const { return time_; }
  Index cells() const { return grid_.cells(); }
  Index dim() const { return 2 * grid_.cells(); }

  // Concentration transport-diffusion S = Sx Sy Sz Sy Sx (and its transpose).
  Matrix transport(const Matrix& c) const;
  Matrix transport_adjoint(const Matrix& c) const;
  // dt/2 Sx Sy (I - dt/2 D)^{-1} diag(w) e with the coupling weights of step k.
  Matrix coupling(const Matrix& e, Index k) const;
  Matrix coupling_adjoint(const Matrix& c, Index k) const;
  const Vector& emission_ratio(Index k) const { return ratio_[static_cast<size_t>(k)]; }
  Vector coupling_weights(Index k) const;

  // Fused step on the columns of x (see AdvDiffStep).
  Matrix step_columns(const Matrix& x, Index k, bool adjoint, const Vector& sqrt_weights) const;

  // Linear step plus the known deposition forcing.
  Vector strang_transition(const Vector& state, Index k) const;
  // Dense block transition of step k.
  Matrix assemble_transition(Index k) const;

  EvolutionOperator evolution() const;           // physical coordinates
  EvolutionOperator isometric_evolution() const;  // xbar = V^{1/2} x
  const Vector& sqrt_volumes() const { return sqrt_vol_; }  // extended state

  // Prior factor L in isometric coordinates, P0 = L L^T.
  Matrix prior_factor() const;
  // Isometric sensor row for location r.
  Matrix sensor_row(const std::array<double, 3>& r) const;
  FilterProblem sensor_problem(const std::array<double, 3>& r) const;
  LocationFamily sensor_family() const;

 private:
  explicit AdvDiffModel(const AdvDiffConfig& cfg);
  Matrix lw_pair(const Matrix& x, bool adjoint, bool yfirst) const;

  AdvDiffConfig cfg_;
  AdvDiffGrid grid_;
  TimeGrid time_;
  Matrix dz_, ainv_, sz_;
  std::vector<Vector> ratio_;
  std::vector<Vector> emission_integral_;
  Vector sqrt_vol_;
  mutable std::vector<StepPtr> steps_;
};

// Candidates at the centres of an nx x ny horizontal grid at height z.
std::vector<Candidate> grid_candidates(const AdvDiffConfig& cfg, Index nx, Index ny, double z = 0.0);

// Isometric cell-average projection from a fine grid onto a coarser one
// (nx, ny must divide the fine counts; nz equal).
Matrix coarsening_projection(const AdvDiffGrid& fine, const AdvDiffGrid& coarse);
ProjectionHierarchy advdiff_hierarchy(const AdvDiffConfig& base, const std::vector<Index>& levels);

// One level per horizontal resolution, each a native model.
std::vector<LevelSpec> advdiff_levels(const AdvDiffConfig& base, const std::vector<Index>& levels);

}  // namespace placeopt
