#include "placeopt/advdiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <tuple>

namespace placeopt {

namespace {

constexpr double kPi = std::numbers::pi;

struct GaussRule {
  std::vector<double> x, w;  // on [-1, 1]
};

GaussRule gauss_rule(Index n) {
  switch (n) {
    case 1: return {{0.0}, {2.0}};
    case 2: return {{-0.5773502691896257, 0.5773502691896257}, {1.0, 1.0}};
    case 3: return {{-0.7745966692414834, 0.0, 0.7745966692414834},
                    {0.5555555555555556, 0.8888888888888888, 0.5555555555555556}};
    case 4: return {{-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526},
                    {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538}};
    case 5: return {{-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640},
                    {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                     0.2369268850561891}};
    default: throw Error(ErrorKind::InvalidInput, "quadrature supports 1 to 5 points per axis");
  }
}

double overlap(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

// Weights of a periodic window [c - w/2, c + w/2] over n cells of width d.
std::vector<std::pair<Index, double>> periodic_window(double c, double w, Index n, double d) {
  const double len = d * static_cast<double>(n);
  std::vector<double> acc(static_cast<size_t>(n), 0.0);
  for (Index i = 0; i < n; ++i)
    for (double shift : {-len, 0.0, len})
      acc[static_cast<size_t>(i)] += overlap(c - 0.5 * w, c + 0.5 * w, i * d + shift, (i + 1) * d + shift) / w;
  std::vector<std::pair<Index, double>> out;
  for (Index i = 0; i < n; ++i)
    if (acc[static_cast<size_t>(i)] > 0.0) out.emplace_back(i, acc[static_cast<size_t>(i)]);
  return out;
}

Matrix centered(const Matrix& x, double v, int axis, const AdvDiffGrid& g) {
  const Index stride = axis == 0 ? g.ny * g.nz : g.nz;
  const Index count = axis == 0 ? g.nx : g.ny;
  const Index outer = axis == 0 ? 1 : g.nx;
  const double c = v / (2.0 * (axis == 0 ? g.dx : g.dy));
  Matrix y(x.rows(), x.cols());
  for (Index o = 0; o < outer; ++o) {
    const Index base = o * count * stride;
    for (Index i = 0; i < count; ++i) {
      const Index plus = base + ((i + 1) % count) * stride;
      const Index minus = base + ((i + count - 1) % count) * stride;
      y.middleRows(base + i * stride, stride) = c * (x.middleRows(minus, stride) - x.middleRows(plus, stride));
    }
  }
  return y;
}

// Raw single-field kernels for the fused step.
struct Stencil {
  Index outer, count, stride;
  double c;
};

Stencil stencil(double v, int axis, const AdvDiffGrid& g) {
  if (axis == 0) return {1, g.nx, g.ny * g.nz, v / (2.0 * g.dx)};
  return {g.nx, g.ny, g.nz, v / (2.0 * g.dy)};
}

void centered_raw(const double* x, double* y, const Stencil& st) {
  for (Index o = 0; o < st.outer; ++o) {
    const Index base = o * st.count * st.stride;
    for (Index i = 0; i < st.count; ++i) {
      const double* xp = x + base + ((i + 1) % st.count) * st.stride;
      const double* xm = x + base + ((i + st.count - 1) % st.count) * st.stride;
      double* yy = y + base + i * st.stride;
      for (Index s = 0; s < st.stride; ++s) yy[s] = st.c * (xm[s] - xp[s]);
    }
  }
}

// out = x + h A x + h^2/2 A^2 x; tmp is scratch
void lw_raw(const double* x, double* out, double* tmp, const Stencil& st, double h, Index n) {
  centered_raw(x, tmp, st);
  centered_raw(tmp, out, st);
  const double h2 = 0.5 * h * h;
  for (Index i = 0; i < n; ++i) out[i] = x[i] + h * tmp[i] + h2 * out[i];
}

void columns_raw(const double* x, double* y, const Matrix& m, Index cols) {
  const Index nz = m.rows();
  for (Index c = 0; c < cols; ++c) {
    const double* xx = x + c * nz;
    double* yy = y + c * nz;
    for (Index a = 0; a < nz; ++a) {
      double acc = 0.0;
      for (Index b = 0; b < nz; ++b) acc += m(a, b) * xx[b];
      yy[a] = acc;
    }
  }
}

Matrix per_column(const Matrix& x, const Matrix& m, const AdvDiffGrid& g) {
  Matrix y(x.rows(), x.cols());
  const Index nz = g.nz;
  for (Index c = 0; c < g.nx * g.ny; ++c) y.middleRows(c * nz, nz).noalias() = m * x.middleRows(c * nz, nz);
  return y;
}

void check_cfl(double v, double h, double d, const char* axis) {
  if (std::abs(v) * h / d > 1.0 + 1e-12) {
    std::ostringstream os;
    os << "CFL condition violated along " << axis << ": |v| dt / d = " << std::abs(v) * h / d;
    throw Error(ErrorKind::Stability, os.str());
  }
}

double json_num(const Json& j, const char* key, double def, const std::string& path) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number()) throw Error(ErrorKind::Config, path + "." + key + ": expected a number");
  return j[key].get<double>();
}

std::function<double(double)> kz_from_json(const Json& j, const std::string& path) {
  if (j.is_number()) {
    const double c = j.get<double>();
    return [c](double) { return c; };
  }
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw Error(ErrorKind::Config, path + ": expected {\"kind\": ...}");
  const std::string kind = j["kind"];
  if (kind == "linear") {
    const double a = json_num(j, "a", 0.05, path), b = json_num(j, "b", 0.05, path);
    return [a, b](double z) { return a + b * z; };
  }
  if (kind == "constant") {
    const double c = json_num(j, "value", 0.05, path);
    return [c](double) { return c; };
  }
  throw Error(ErrorKind::Config, path + ".kind: unknown diffusion profile '" + kind + "'");
}

Field field_from_json(const Json& j, const std::string& path) {
  if (j.is_number()) {
    const double c = j.get<double>();
    return [c](double, double, double, double) { return c; };
  }
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw Error(ErrorKind::Config, path + ": expected {\"kind\": ...}");
  const std::string kind = j["kind"];
  if (kind == "constant") {
    const double c = json_num(j, "value", 1.0, path);
    return [c](double, double, double, double) { return c; };
  }
  if (kind == "sinusoid") {
    const double m = json_num(j, "mean", 1.0, path), a = json_num(j, "amplitude", 0.5, path),
                 p = json_num(j, "period", 3.0, path);
    if (!(p > 0)) throw Error(ErrorKind::Config, path + ".period: must be positive");
    return [m, a, p](double t, double, double, double) { return m + a * std::sin(2.0 * kPi * t / p); };
  }
  if (kind == "exponential") {
    const double r = json_num(j, "rate", 1.0, path), s = json_num(j, "scale", 1.0, path);
    return [r, s](double t, double, double, double) { return s * std::exp(r * t); };
  }
  if (kind == "plume") {
    // background plus a Gaussian bump in x, y
    const double b = json_num(j, "background", 1.0, path), a = json_num(j, "amplitude", 1.0, path);
    const double cx = json_num(j, "x", 2.5, path), cy = json_num(j, "y", 2.5, path), w = json_num(j, "width", 1.0, path);
    return [=](double, double x, double y, double) {
      return b + a * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (w * w));
    };
  }
  throw Error(ErrorKind::Config, path + ".kind: unknown field kind '" + kind + "'");
}

}  // namespace

Index AdvDiffConfig::steps() const {
  const double n = (t1 - t0) / dt;
  const double r = std::round(n);
  if (!(dt > 0) || std::abs(n - r) > 1e-6 || r < 1) throw Error(ErrorKind::Grid, "horizon must be a whole number of time steps");
  return static_cast<Index>(r);
}

void AdvDiffConfig::validate() const {
  if (!(lx > 0 && ly > 0 && lz > 0)) throw Error(ErrorKind::InvalidInput, "domain extents must be positive");
  if (nx < 1 || ny < 1) throw Error(ErrorKind::InvalidInput, "need at least one horizontal cell per axis");
  if (nz < 2) throw Error(ErrorKind::InvalidInput, "need at least two vertical layers");
  if (!(t1 > t0)) throw Error(ErrorKind::Grid, "horizon must have t1 > t0");
  steps();
  check_cfl(vx, dt, lx / static_cast<double>(nx), "x");
  check_cfl(vy, dt, ly / static_cast<double>(ny), "y");
  if (!Kz) throw Error(ErrorKind::InvalidInput, "missing diffusion profile");
  if (prior_modes < 1) throw Error(ErrorKind::InvalidInput, "prior needs at least one mode");
  if (!(identity_variance > 0)) throw Error(ErrorKind::InvalidInput, "prior variance must be positive");
  if (!(obs_noise > 0)) throw Error(ErrorKind::Coercivity, "observation noise must be positive");
  gauss_rule(quadrature_points);
}

double AdvDiffConfig::emission(double t, double x, double y, double z) const {
  if (e_b) return e_b(t, x, y, z);
  return 1.0 + 0.5 * std::sin(2.0 * kPi * t / 3.0);
}

AdvDiffConfig advdiff_config_from_json(const Json& j, const std::string& path) {
  if (!j.is_object()) throw Error(ErrorKind::Config, path + ": expected an object");
  static const std::set<std::string> known = {
      "domain", "horizon", "nx", "ny", "nz", "vx", "vy", "Kz", "e_b", "deposition", "dt", "prior", "prior_basis",
      "prior_modes", "identity_variance", "emission_coupling", "quadrature_points", "obs_noise", "noise_convention"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw Error(ErrorKind::Config, path + "." + it.key() + ": unknown key");
  AdvDiffConfig c;
  auto pair = [&](const char* key, double& a, double& b) {
    if (!j.contains(key)) return;
    const Json& v = j[key];
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw Error(ErrorKind::Config, path + "." + key + ": expected [a, b]");
    a = v[0].get<double>();
    b = v[1].get<double>();
  };
  auto integer = [&](const char* key, Index& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer() || j[key].get<long long>() < 1)
      throw Error(ErrorKind::Config, path + "." + key + ": expected a positive integer");
    out = static_cast<Index>(j[key].get<long long>());
  };
  auto choice = [&](const char* key, const std::vector<std::string>& opts) -> int {
    if (!j.contains(key)) return -1;
    if (!j[key].is_string()) throw Error(ErrorKind::Config, path + "." + key + ": expected a string");
    const std::string v = j[key];
    for (size_t i = 0; i < opts.size(); ++i)
      if (opts[i] == v) return static_cast<int>(i);
    throw Error(ErrorKind::Config, path + "." + key + ": unknown value '" + v + "'");
  };
  if (j.contains("domain")) {
    const Json& d = j["domain"];
    if (!d.is_array() || d.size() != 3) throw Error(ErrorKind::Config, path + ".domain: expected [lx, ly, lz]");
    for (const auto& e : d)
      if (!e.is_number()) throw Error(ErrorKind::Config, path + ".domain: expected numbers");
    c.lx = d[0].get<double>();
    c.ly = d[1].get<double>();
    c.lz = d[2].get<double>();
  }
  pair("horizon", c.t0, c.t1);
  integer("nx", c.nx);
  c.ny = c.nx;
  integer("ny", c.ny);
  integer("nz", c.nz);
  c.vx = json_num(j, "vx", c.vx, path);
  c.vy = json_num(j, "vy", c.vy, path);
  c.dt = json_num(j, "dt", c.dt, path);
  if (j.contains("Kz")) {
    c.Kz = kz_from_json(j["Kz"], path + ".Kz");
    c.kz_spec = j["Kz"];
  }
  if (j.contains("e_b")) {
    c.e_b = field_from_json(j["e_b"], path + ".e_b");
    c.eb_spec = j["e_b"];
  }
  if (j.contains("deposition")) {
    c.deposition = field_from_json(j["deposition"], path + ".deposition");
    c.deposition_spec = j["deposition"];
  }
  if (int v = choice("prior", {"nuclear", "scaled-identity"}); v >= 0)
    c.prior = v == 0 ? PriorKind::Nuclear : PriorKind::ScaledIdentity;
  if (int v = choice("prior_basis", {"fourier", "discrete-cosine", "cell-indicator"}); v >= 0)
    c.basis = static_cast<PriorBasis>(v);
  integer("prior_modes", c.prior_modes);
  c.identity_variance = json_num(j, "identity_variance", c.identity_variance, path);
  if (int v = choice("emission_coupling", {"trapezoidal", "one-sided"}); v >= 0)
    c.coupling = v == 0 ? EmissionCoupling::Trapezoidal : EmissionCoupling::OneSided;
  integer("quadrature_points", c.quadrature_points);
  c.obs_noise = json_num(j, "obs_noise", c.obs_noise, path);
  if (int v = choice("noise_convention", {"per-step", "intensity"}); v >= 0)
    c.noise = v == 0 ? NoiseConvention::PerStep : NoiseConvention::Intensity;
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, path + ": " + e.what());
  }
  return c;
}

Json advdiff_config_to_json(const AdvDiffConfig& c) {
  Json j;
  j["domain"] = {c.lx, c.ly, c.lz};
  j["horizon"] = {c.t0, c.t1};
  j["nx"] = c.nx;
  j["ny"] = c.ny;
  j["nz"] = c.nz;
  j["vx"] = c.vx;
  j["vy"] = c.vy;
  j["Kz"] = c.kz_spec.is_null() ? Json{{"kind", "linear"}, {"a", 0.05}, {"b", 0.05}} : c.kz_spec;
  j["e_b"] = c.eb_spec.is_null() ? Json{{"kind", "sinusoid"}, {"mean", 1.0}, {"amplitude", 0.5}, {"period", 3.0}}
                                  : c.eb_spec;
  if (!c.deposition_spec.is_null()) j["deposition"] = c.deposition_spec;
  j["dt"] = c.dt;
  j["prior"] = c.prior == PriorKind::Nuclear ? "nuclear" : "scaled-identity";
  j["prior_basis"] = c.basis == PriorBasis::Fourier ? "fourier"
                     : c.basis == PriorBasis::DiscreteCosine ? "discrete-cosine"
                                                              : "cell-indicator";
  j["prior_modes"] = c.prior_modes;
  j["identity_variance"] = c.identity_variance;
  j["emission_coupling"] = c.coupling == EmissionCoupling::Trapezoidal ? "trapezoidal" : "one-sided";
  j["quadrature_points"] = c.quadrature_points;
  j["obs_noise"] = c.obs_noise;
  j["noise_convention"] = c.noise == NoiseConvention::PerStep ? "per-step" : "intensity";
  return j;
}

AdvDiffGrid::AdvDiffGrid(const AdvDiffConfig& c)
    : nx(c.nx), ny(c.ny), nz(c.nz), lx(c.lx), ly(c.ly), lz(c.lz) {
  if (nx < 1 || ny < 1 || nz < 2) throw Error(ErrorKind::InvalidInput, "grid needs nx, ny >= 1 and nz >= 2");
  dx = lx / static_cast<double>(nx);
  dy = ly / static_cast<double>(ny);
  const double h = lz / static_cast<double>(nz - 1);
  for (Index k = 0; k < nz; ++k) {
    const double zk = k == nz - 1 ? lz : h * static_cast<double>(k);
    z.push_back(zk);
    z_bounds.push_back({std::max(0.0, zk - 0.5 * h), std::min(lz, zk + 0.5 * h)});
  }
}

Vector AdvDiffGrid::volumes() const {
  Vector v(cells());
  for (Index i = 0; i < nx; ++i)
    for (Index j = 0; j < ny; ++j)
      for (Index k = 0; k < nz; ++k) v(index(i, j, k)) = dx * dy * z_weight(k);
  return v;
}

Vector cell_average_projection(const std::function<double(double, double, double)>& f, const AdvDiffGrid& g,
                               Index points) {
  const GaussRule q = gauss_rule(points);
  Vector out(g.cells());
  for (Index i = 0; i < g.nx; ++i)
    for (Index j = 0; j < g.ny; ++j)
      for (Index k = 0; k < g.nz; ++k) {
        const double x0 = g.dx * static_cast<double>(i), y0 = g.dy * static_cast<double>(j);
        const auto zb = g.z_bounds[static_cast<size_t>(k)];
        double s = 0.0;
        for (size_t a = 0; a < q.x.size(); ++a)
          for (size_t b = 0; b < q.x.size(); ++b)
            for (size_t c = 0; c < q.x.size(); ++c) {
              const double x = x0 + 0.5 * g.dx * (q.x[a] + 1.0);
              const double y = y0 + 0.5 * g.dy * (q.x[b] + 1.0);
              const double z = zb[0] + 0.5 * (zb[1] - zb[0]) * (q.x[c] + 1.0);
              s += q.w[a] * q.w[b] * q.w[c] * f(x, y, z);
            }
        out(g.index(i, j, k)) = s / 8.0;
      }
  return out;
}

Matrix lax_wendroff_step(const Matrix& field, double v, double h, int axis, const AdvDiffGrid& g) {
  if (axis != 0 && axis != 1) throw Error(ErrorKind::InvalidInput, "Lax-Wendroff axis must be 0 (x) or 1 (y)");
  if (field.rows() != g.cells()) throw Error(ErrorKind::Shape, "field does not match the grid");
  check_cfl(v, h, axis == 0 ? g.dx : g.dy, axis == 0 ? "x" : "y");
  const Matrix a1 = centered(field, v, axis, g);
  const Matrix a2 = centered(a1, v, axis, g);
  return field + h * a1 + (0.5 * h * h) * a2;
}

Matrix vertical_diffusion(const std::function<double(double)>& kz, const AdvDiffGrid& g) {
  Matrix d = Matrix::Zero(g.nz, g.nz);
  for (Index k = 0; k < g.nz; ++k)
    for (Index kk : {k - 1, k + 1}) {
      if (kk < 0 || kk >= g.nz) continue;
      const double zf = 0.5 * (g.z[static_cast<size_t>(k)] + g.z[static_cast<size_t>(kk)]);
      const double kap = kz(zf);
      if (!(kap >= 0.0) || !std::isfinite(kap)) throw Error(ErrorKind::Domain, "diffusion profile must be finite and non-negative");
      const double c = kap / std::abs(g.z[static_cast<size_t>(kk)] - g.z[static_cast<size_t>(k)]) / g.z_weight(k);
      d(k, kk) += c;
      d(k, k) -= c;
    }
  return d;
}

Matrix crank_nicolson_step(const Matrix& field, const std::function<double(double)>& kz, double dt,
                           const AdvDiffGrid& g) {
  if (field.rows() != g.cells()) throw Error(ErrorKind::Shape, "field does not match the grid");
  const Matrix d = vertical_diffusion(kz, g);
  const Index nz = g.nz;
  std::vector<double> lo(static_cast<size_t>(nz), 0.0), di(static_cast<size_t>(nz)), up(static_cast<size_t>(nz), 0.0);
  for (Index k = 0; k < nz; ++k) {
    di[static_cast<size_t>(k)] = 1.0 - 0.5 * dt * d(k, k);
    if (k > 0) lo[static_cast<size_t>(k)] = -0.5 * dt * d(k, k - 1);
    if (k + 1 < nz) up[static_cast<size_t>(k)] = -0.5 * dt * d(k, k + 1);
  }
  const Matrix rhs_op = Matrix::Identity(nz, nz) + 0.5 * dt * d;
  Matrix out(field.rows(), field.cols());
  std::vector<double> cp(static_cast<size_t>(nz)), dp(static_cast<size_t>(nz));
  for (Index col = 0; col < field.cols(); ++col)
    for (Index c = 0; c < g.nx * g.ny; ++c) {
      const Vector rhs = rhs_op * field.col(col).segment(c * nz, nz);
      // Thomas algorithm
      for (Index k = 0; k < nz; ++k) {
        const size_t s = static_cast<size_t>(k);
        const double denom = di[s] - (k > 0 ? lo[s] * cp[s - 1] : 0.0);
        if (std::abs(denom) < 1e-300) throw Error(ErrorKind::Conditioning, "singular tridiagonal system");
        cp[s] = up[s] / denom;
        dp[s] = (rhs(k) - (k > 0 ? lo[s] * dp[s - 1] : 0.0)) / denom;
      }
      for (Index k = nz - 1; k >= 0; --k) {
        const size_t s = static_cast<size_t>(k);
        out(c * nz + k, col) = dp[s] - (k + 1 < nz ? cp[s] * out(c * nz + k + 1, col) : 0.0);
      }
    }
  return out;
}

Vector emission_transition(const AdvDiffConfig& cfg, const AdvDiffGrid& g, double t, double s) {
  if (t < s) throw Error(ErrorKind::Ordering, "emission transition needs s <= t");
  auto avg = [&](double tt) {
    return cell_average_projection([&](double x, double y, double z) { return cfg.emission(tt, x, y, z); }, g,
                                   cfg.quadrature_points);
  };
  const Vector a = avg(t), b = avg(s);
  if ((a.array() <= 0.0).any() || (b.array() <= 0.0).any())
    throw Error(ErrorKind::Domain, "background emission must be positive");
  return a.cwiseQuotient(b);
}

Matrix observation_operator(const std::array<double, 3>& r, const AdvDiffGrid& g) {
  if (!(r[0] >= 0.0 && r[0] <= g.lx && r[1] >= 0.0 && r[1] <= g.ly && r[2] >= 0.0 && r[2] <= g.lz))
    throw Error(ErrorKind::Domain, "sensor location outside the domain");
  const auto wx = periodic_window(r[0], g.dx, g.nx, g.dx);
  const auto wy = periodic_window(r[1], g.dy, g.ny, g.dy);
  const double hz = g.lz / static_cast<double>(g.nz - 1);
  const double z0 = std::max(0.0, r[2] - 0.5 * hz), z1 = std::min(g.lz, r[2] + 0.5 * hz);
  std::vector<std::pair<Index, double>> wz;
  for (Index k = 0; k < g.nz; ++k) {
    const auto zb = g.z_bounds[static_cast<size_t>(k)];
    const double o = overlap(z0, z1, zb[0], zb[1]);
    if (o > 0.0) wz.emplace_back(k, o / (z1 - z0));
  }
  Matrix h = Matrix::Zero(1, 2 * g.cells());
  for (const auto& [i, a] : wx)
    for (const auto& [j, b] : wy)
      for (const auto& [k, c] : wz) h(0, g.index(i, j, k)) += a * b * c;
  return h;
}

Index AdvDiffStep::dim() const { return model_->dim(); }

Matrix AdvDiffStep::apply(const Matrix& x) const { return model_->step_columns(x, k_, false, s_); }

Matrix AdvDiffStep::apply_adjoint(const Matrix& x) const { return model_->step_columns(x, k_, true, s_); }

ScaledStep::ScaledStep(StepPtr base, Vector sqrt_weights) : base_(std::move(base)), s_(std::move(sqrt_weights)) {
  if (s_.size() != base_->dim() || (s_.array() <= 0.0).any())
    throw Error(ErrorKind::Shape, "scaling weights must be positive and match the state dimension");
  inv_ = s_.cwiseInverse();
}

Matrix ScaledStep::apply(const Matrix& x) const { return s_.asDiagonal() * base_->apply(inv_.asDiagonal() * x); }

Matrix ScaledStep::apply_adjoint(const Matrix& x) const {
  return inv_.asDiagonal() * base_->apply_adjoint(s_.asDiagonal() * x);
}

AdvDiffModel::AdvDiffModel(const AdvDiffConfig& cfg) : cfg_(cfg), grid_(cfg), time_(cfg.t0, cfg.t1, cfg.steps()) {
  cfg_.validate();
  const double dt = time_.dt();
  dz_ = vertical_diffusion(cfg_.Kz, grid_);
  const Matrix eye = Matrix::Identity(grid_.nz, grid_.nz);
  ainv_ = (eye - 0.5 * dt * dz_).inverse();
  sz_ = ainv_ * (eye + 0.5 * dt * dz_);
  for (Index k = 0; k <= time_.steps(); ++k) {
    const double t = time_.node(k);
    Vector a = cell_average_projection([&](double x, double y, double z) { return cfg_.emission(t, x, y, z); }, grid_,
                                       cfg_.quadrature_points);
    if ((a.array() <= 0.0).any() || !a.allFinite()) throw Error(ErrorKind::Domain, "background emission must be positive");
    emission_integral_.push_back(std::move(a));
  }
  for (Index k = 0; k < time_.steps(); ++k)
    ratio_.push_back(emission_integral_[static_cast<size_t>(k + 1)].cwiseQuotient(emission_integral_[static_cast<size_t>(k)]));
  const Vector v = grid_.volumes().cwiseSqrt();
  sqrt_vol_.resize(2 * v.size());
  sqrt_vol_ << v, v;
}

std::shared_ptr<const AdvDiffModel> AdvDiffModel::build(const AdvDiffConfig& cfg) {
  return std::shared_ptr<const AdvDiffModel>(new AdvDiffModel(cfg));
}

Matrix AdvDiffModel::lw_pair(const Matrix& x, bool adjoint, bool yfirst) const {
  const double h = 0.5 * time_.dt();
  const double sgn = adjoint ? -1.0 : 1.0;
  if (yfirst) return lax_wendroff_step(lax_wendroff_step(x, sgn * cfg_.vy, h, 1, grid_), sgn * cfg_.vx, h, 0, grid_);
  return lax_wendroff_step(lax_wendroff_step(x, sgn * cfg_.vx, h, 0, grid_), sgn * cfg_.vy, h, 1, grid_);
}

Matrix AdvDiffModel::transport(const Matrix& c) const {
  // S = Sx Sy Sz Sy Sx, applied right to left
  Matrix y = lw_pair(c, false, false);
  y = per_column(y, sz_, grid_);
  return lw_pair(y, false, true);
}

Matrix AdvDiffModel::transport_adjoint(const Matrix& c) const {
  Matrix y = lw_pair(c, true, false);
  y = per_column(y, sz_.transpose(), grid_);
  return lw_pair(y, true, true);
}

Vector AdvDiffModel::coupling_weights(Index k) const {
  const Vector& r = ratio_[static_cast<size_t>(k)];
  if (cfg_.coupling == EmissionCoupling::OneSided) return r;
  return r.array() + 1.0;
}

Matrix AdvDiffModel::coupling(const Matrix& e, Index k) const {
  Matrix y = per_column(coupling_weights(k).asDiagonal() * e, ainv_, grid_);
  return (0.5 * time_.dt()) * lw_pair(y, false, true);
}

Matrix AdvDiffModel::coupling_adjoint(const Matrix& c, Index k) const {
  Matrix y = lw_pair(c, true, false);
  y = per_column(y, ainv_.transpose(), grid_);
  return (0.5 * time_.dt()) * (coupling_weights(k).asDiagonal() * y);
}

Matrix AdvDiffModel::step_columns(const Matrix& x, Index k, bool adjoint, const Vector& sw) const {
  const Index n = cells();
  if (x.rows() != 2 * n) throw Error(ErrorKind::Shape, "state does not match the extended model");
  const bool scaled = sw.size() > 0;
  if (scaled && sw.size() != 2 * n) throw Error(ErrorKind::Shape, "scaling weights do not match the state");
  const double h = 0.5 * time_.dt();
  const double sgn = adjoint ? -1.0 : 1.0;
  const Stencil sx = stencil(sgn * cfg_.vx, 0, grid_), sy = stencil(sgn * cfg_.vy, 1, grid_);
  const Vector& ratio = ratio_[static_cast<size_t>(k)];
  const Vector w = (0.5 * time_.dt()) * coupling_weights(k);
  const Matrix szt = sz_.transpose(), ainvt = ainv_.transpose();
  const Index hc = grid_.nx * grid_.ny;
  Vector in(2 * n), a(n), b(n), tmp(n);
  Matrix y(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    if (!scaled)
      in = x.col(j);
    else if (adjoint)
      in = x.col(j).cwiseProduct(sw);
    else
      in = x.col(j).cwiseQuotient(sw);
    double* out = y.col(j).data();
    if (!adjoint) {
      // c' = Sx Sy [Sz Sy Sx c + dt/2 A^{-1} (w e)],  e' = ratio e
      lw_raw(in.data(), a.data(), tmp.data(), sx, h, n);
      lw_raw(a.data(), b.data(), tmp.data(), sy, h, n);
      columns_raw(b.data(), a.data(), sz_, hc);
      b = w.cwiseProduct(in.tail(n));
      columns_raw(b.data(), tmp.data(), ainv_, hc);
      a += tmp;
      lw_raw(a.data(), b.data(), tmp.data(), sy, h, n);
      lw_raw(b.data(), out, tmp.data(), sx, h, n);
      Eigen::Map<Vector>(out + n, n) = ratio.cwiseProduct(in.tail(n));
    } else {
      // u = Sy^T Sx^T c;  c' = Sx^T Sy^T Sz^T u,  e' = dt/2 w A^{-T} u + ratio e
      lw_raw(in.data(), a.data(), tmp.data(), sx, h, n);
      lw_raw(a.data(), b.data(), tmp.data(), sy, h, n);
      columns_raw(b.data(), tmp.data(), ainvt, hc);
      Eigen::Map<Vector>(out + n, n) = w.cwiseProduct(tmp) + ratio.cwiseProduct(in.tail(n));
      columns_raw(b.data(), a.data(), szt, hc);
      lw_raw(a.data(), b.data(), tmp.data(), sy, h, n);
      lw_raw(b.data(), out, tmp.data(), sx, h, n);
    }
    if (scaled) {
      if (adjoint)
        y.col(j).array() /= sw.array();
      else
        y.col(j).array() *= sw.array();
    }
  }
  return y;
}

Vector AdvDiffModel::strang_transition(const Vector& state, Index k) const {
  const Index n = cells();
  if (state.size() != 2 * n) throw Error(ErrorKind::Shape, "state does not match the extended model");
  Vector out(2 * n);
  out.head(n) = transport(state.head(n)) + coupling(state.tail(n), k);
  out.tail(n) = ratio_[static_cast<size_t>(k)].cwiseProduct(state.tail(n));
  if (cfg_.deposition) {
    const double t = time_.node(k), t1 = time_.node(k + 1);
    const Vector d = cell_average_projection([&](double x, double y, double z) { return cfg_.deposition(t1, x, y, z) + cfg_.deposition(t, x, y, z); },
                                             grid_, cfg_.quadrature_points);
    Matrix f = per_column(Matrix(d), ainv_, grid_);
    out.head(cells()) -= (0.5 * time_.dt()) * lw_pair(f, false, true);
  }
  return out;
}

Matrix AdvDiffModel::assemble_transition(Index k) const {
  return AdvDiffStep(shared_from_this(), k).apply(Matrix::Identity(dim(), dim()));
}

EvolutionOperator AdvDiffModel::evolution() const {
  if (steps_.empty()) {
    bool uniform = true;
    for (const auto& r : ratio_) uniform = uniform && r == ratio_.front();
    if (uniform) {
      steps_.push_back(std::make_shared<AdvDiffStep>(shared_from_this(), 0));
    } else {
      for (Index k = 0; k < time_.steps(); ++k) steps_.push_back(std::make_shared<AdvDiffStep>(shared_from_this(), k));
    }
  }
  return EvolutionOperator(time_, steps_);
}

EvolutionOperator AdvDiffModel::isometric_evolution() const {
  evolution();  // decides uniform vs per-step
  std::vector<StepPtr> s;
  const Index n = steps_.size() == 1 ? 1 : time_.steps();
  for (Index k = 0; k < n; ++k) s.push_back(std::make_shared<AdvDiffStep>(shared_from_this(), k, sqrt_vol_));
  return EvolutionOperator(time_, std::move(s));
}

namespace {

struct Mode {
  int a, b, c;
};

std::vector<Mode> fourier_modes() {
  std::vector<Mode> m;
  for (int kx = -3; kx <= 3; ++kx)
    for (int ky = -3; ky <= 3; ++ky)
      for (int kz = 0; kz <= 3; ++kz) m.push_back({kx, ky, kz});
  auto key = [](const Mode& t) {
    return std::make_tuple(std::abs(t.a) + std::abs(t.b) + t.c, t.c, std::abs(t.b), std::abs(t.a), -t.b, -t.a);
  };
  std::stable_sort(m.begin(), m.end(), [&](const Mode& x, const Mode& y) { return key(x) < key(y); });
  return m;
}

std::vector<Mode> cosine_modes() {
  std::vector<Mode> m;
  for (int a = 0; a <= 3; ++a)
    for (int b = 0; b <= 3; ++b)
      for (int c = 0; c <= 3; ++c) m.push_back({a, b, c});
  auto key = [](const Mode& t) { return std::make_tuple(t.a + t.b + t.c, t.c, t.b, t.a); };
  std::stable_sort(m.begin(), m.end(), [&](const Mode& x, const Mode& y) { return key(x) < key(y); });
  return m;
}

double periodic_mode(int k, double x, double len) {
  if (k == 0) return 1.0 / std::sqrt(len);
  const double w = 2.0 * kPi * std::abs(k) * x / len;
  return std::sqrt(2.0 / len) * (k > 0 ? std::cos(w) : std::sin(w));
}

double cosine_mode(int k, double x, double len) {
  if (k == 0) return 1.0 / std::sqrt(len);
  return std::sqrt(2.0 / len) * std::cos(k * kPi * x / len);
}

}  // namespace

Matrix AdvDiffModel::prior_factor() const {
  const Index n2 = dim();
  if (cfg_.prior == PriorKind::ScaledIdentity) return std::sqrt(cfg_.identity_variance) * Matrix::Identity(n2, n2);
  const Index m = cfg_.prior_modes;
  const Index n = cells();
  Matrix l = Matrix::Zero(n2, m);
  const Vector sv = sqrt_vol_.head(n);
  std::vector<Mode> modes;
  if (cfg_.basis == PriorBasis::Fourier) modes = fourier_modes();
  if (cfg_.basis == PriorBasis::DiscreteCosine) modes = cosine_modes();
  for (Index i = 0; i < m; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>((i + 1) * (i + 1)));
    const Index block = i % 2;
    const Index j = i / 2;
    if (cfg_.basis == PriorBasis::CellIndicator) {
      if (j >= n) throw Error(ErrorKind::InvalidInput, "more prior modes than cells");
      l(block * n + j, i) = w;
      continue;
    }
    if (j >= static_cast<Index>(modes.size())) throw Error(ErrorKind::InvalidInput, "too many prior modes for the basis");
    const Mode md = modes[static_cast<size_t>(j)];
    const bool fourier = cfg_.basis == PriorBasis::Fourier;
    auto f = [&](double x, double y, double z) {
      const double hx = fourier ? periodic_mode(md.a, x, cfg_.lx) : cosine_mode(md.a, x, cfg_.lx);
      const double hy = fourier ? periodic_mode(md.b, y, cfg_.ly) : cosine_mode(md.b, y, cfg_.ly);
      return hx * hy * cosine_mode(md.c, z, cfg_.lz);
    };
    const Vector avg = cell_average_projection(f, grid_, cfg_.quadrature_points);
    l.col(i).segment(block * n, n) = w * sv.cwiseProduct(avg);
  }
  return l;
}

Matrix AdvDiffModel::sensor_row(const std::array<double, 3>& r) const {
  return observation_operator(r, grid_) * sqrt_vol_.cwiseInverse().asDiagonal();
}

FilterProblem AdvDiffModel::sensor_problem(const std::array<double, 3>& r) const {
  FilterProblem fp;
  fp.M = isometric_evolution();
  fp.D = OpValuedFunction::constant(time_, Matrix::Zero(dim(), 1));
  fp.W = OpValuedFunction::constant(time_, Matrix::Zero(1, 1));
  fp.H = OpValuedFunction::constant(time_, sensor_row(r));
  fp.E = OpValuedFunction::constant(time_, Matrix::Identity(1, 1));
  fp.V = OpValuedFunction::constant(time_, Matrix::Constant(1, 1, cfg_.obs_noise));
  fp.noise = cfg_.noise;
  fp.P0_factor = prior_factor();
  if (cfg_.prior == PriorKind::ScaledIdentity)
    fp.P0 = cfg_.identity_variance * Matrix::Identity(dim(), dim());
  else
    fp.P0 = fp.P0_factor * fp.P0_factor.transpose();
  return fp;
}

LocationFamily AdvDiffModel::sensor_family() const {
  LocationFamily f;
  f.kind = LocationFamily::Kind::Sensor;
  auto self = shared_from_this();
  f.builder = [self](const Candidate& c) {
    if (c.coords.size() != 2 && c.coords.size() != 3)
      throw Error(ErrorKind::InvalidInput, "advdiff sensor candidates need 2 or 3 coordinates");
    const std::array<double, 3> r{c.coords[0], c.coords[1], c.coords.size() == 3 ? c.coords[2] : 0.0};
    return OpValuedFunction::constant(self->time_grid(), self->sensor_row(r));
  };
  return f;
}

std::vector<Candidate> grid_candidates(const AdvDiffConfig& cfg, Index nx, Index ny, double z) {
  std::vector<Candidate> out;
  for (Index i = 0; i < nx; ++i)
    for (Index j = 0; j < ny; ++j)
      out.push_back({{(static_cast<double>(i) + 0.5) * cfg.lx / static_cast<double>(nx),
                      (static_cast<double>(j) + 0.5) * cfg.ly / static_cast<double>(ny), z}});
  return out;
}

Matrix coarsening_projection(const AdvDiffGrid& fine, const AdvDiffGrid& coarse) {
  if (fine.nz != coarse.nz || fine.nx % coarse.nx != 0 || fine.ny % coarse.ny != 0)
    throw Error(ErrorKind::Hierarchy, "coarse grid must divide the fine grid horizontally with equal layers");
  const Index fx = fine.nx / coarse.nx, fy = fine.ny / coarse.ny;
  const Index nf = fine.cells(), nc = coarse.cells();
  const double w = 1.0 / std::sqrt(static_cast<double>(fx * fy));
  Matrix p = Matrix::Zero(2 * nc, 2 * nf);
  for (Index i = 0; i < fine.nx; ++i)
    for (Index j = 0; j < fine.ny; ++j)
      for (Index k = 0; k < fine.nz; ++k) {
        const Index cf = fine.index(i, j, k), cc = coarse.index(i / fx, j / fy, k);
        p(cc, cf) = w;
        p(nc + cc, nf + cf) = w;
      }
  return p;
}

ProjectionHierarchy advdiff_hierarchy(const AdvDiffConfig& base, const std::vector<Index>& levels) {
  if (levels.empty()) throw Error(ErrorKind::Hierarchy, "no hierarchy levels");
  std::vector<Index> sorted = levels;
  std::sort(sorted.begin(), sorted.end());
  AdvDiffConfig fc = base;
  fc.nx = fc.ny = sorted.back();
  const AdvDiffGrid fine(fc);
  std::vector<HierarchyLevel> out;
  for (Index nx : sorted) {
    AdvDiffConfig cc = base;
    cc.nx = cc.ny = nx;
    const AdvDiffGrid coarse(cc);
    HierarchyLevel l;
    l.dim = 2 * coarse.cells();
    l.project = coarsening_projection(fine, coarse);
    l.lift = l.project.transpose();
    l.label = "nx=" + std::to_string(nx);
    out.push_back(std::move(l));
  }
  return ProjectionHierarchy(2 * fine.cells(), std::move(out));
}

std::vector<LevelSpec> advdiff_levels(const AdvDiffConfig& base, const std::vector<Index>& levels) {
  std::vector<LevelSpec> out;
  for (Index nx : levels) {
    AdvDiffConfig c = base;
    c.nx = c.ny = nx;
    auto model = AdvDiffModel::build(c);
    LevelSpec s;
    s.label = "nx=" + std::to_string(nx);
    s.dim = model->dim();
    s.build = [model] { return Problem(model->sensor_problem({0.5 * model->config().lx, 0.5 * model->config().ly, 0.0})); };
    s.family = model->sensor_family();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace placeopt
