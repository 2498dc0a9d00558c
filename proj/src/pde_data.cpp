#include "physinstruct/pde_data.hpp"

#include <cmath>
#include <complex>
#include <map>
#include <numbers>

#include "physinstruct/errors.hpp"
#include "physinstruct/spectral.hpp"

namespace physinstruct {

namespace {

constexpr double kPi = std::numbers::pi;
using cd = std::complex<double>;

bool power_of_two(Index n) { return n > 0 && (n & (n - 1)) == 0; }

const Dft& dft(Index n) {
  thread_local std::map<Index, Dft> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Dft(n)).first;
  return it->second;
}

// 2/3 rule: keep |k| <= n/3 along each axis.
bool kept(const Dft& d, Index k) { return std::abs(d.wavenumber(k)) <= static_cast<double>(d.size()) / 3.0; }

}  // namespace

std::string_view to_string(PdeKind kind) {
  switch (kind) {
    case PdeKind::darcy: return "darcy";
    case PdeKind::poisson: return "poisson";
    case PdeKind::helmholtz: return "helmholtz";
    case PdeKind::navier_stokes: return "navier_stokes";
    case PdeKind::burgers: return "burgers";
  }
  return "?";
}

PdeKind parse_pde_kind(std::string_view name) {
  for (auto k : {PdeKind::darcy, PdeKind::poisson, PdeKind::helmholtz, PdeKind::navier_stokes, PdeKind::burgers}) {
    if (to_string(k) == name) return k;
  }
  throw ContractViolation("unknown pde kind '" + std::string(name) + "'");
}

Index channel_count(PdeKind kind) { return kind == PdeKind::burgers ? 1 : 2; }
Index a_channel_count(PdeKind kind) { return kind == PdeKind::burgers ? 0 : 1; }
bool is_dirichlet(PdeKind kind) {
  return kind == PdeKind::darcy || kind == PdeKind::poisson || kind == PdeKind::helmholtz;
}

Field FieldSample::channel(Index c) const {
  const Index h = height(), w = width();
  Field f(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) f(y, x) = channels.data[(c * h + y) * w + x];
  return f;
}

void FieldSample::set_channel(Index c, const Field& f) {
  const Index h = height(), w = width();
  if (f.rows() != h || f.cols() != w) throw ContractViolation("set_channel: field extents differ from sample grid");
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) channels.data[(c * h + y) * w + x] = f(y, x);
}

FieldSample make_sample(PdeKind kind, Index height, Index width) {
  return {kind, Tensor(Shape{channel_count(kind), height, width})};
}

PdeConfig PdeConfig::defaults(PdeKind kind) {
  PdeConfig c;
  switch (kind) {
    case PdeKind::darcy:
    case PdeKind::poisson: c.height = c.width = 16; break;
    case PdeKind::helmholtz:
    case PdeKind::navier_stokes: c.height = c.width = 32; break;
    case PdeKind::burgers: c.height = c.width = 64; break;
  }
  return c;
}

GrfSpec PdeConfig::grf_for(PdeKind kind) const {
  if (grf) return *grf;
  GrfSpec s;
  s.height = height;
  s.width = width;
  if (kind == PdeKind::navier_stokes) {
    s.scale = std::pow(7.0, 1.5);
    s.shift = 49.0;
    s.power = 2.5;
  } else if (kind == PdeKind::burgers) {
    s.scale = 625.0;
    s.shift = 25.0;
    s.power = 2.0;
    s.height = 1;
  } else if (kind == PdeKind::poisson || kind == PdeKind::helmholtz) {
    s.scale = 300.0;  // mollified forcing of unit rms
  }
  return s;
}

void PdeConfig::validate() const {
  if (height < 1 || width < 1) throw ContractViolation("PdeConfig: grid extents must be positive");
  if (!(ns_viscosity > 0) || !(burgers_viscosity > 0)) throw ContractViolation("PdeConfig: viscosity must be positive");
  if (!(tol > 0)) throw ContractViolation("PdeConfig: tolerance must be positive");
  if (ns_steps < 1 || max_iter < 1) throw ContractViolation("PdeConfig: step and iteration counts must be positive");
}

CgResult cg_solve(const LinearOperator& apply_a, const Eigen::VectorXd& b, double tol, Index max_iter,
                  const Eigen::VectorXd* diagonal) {
  if (!(tol > 0)) throw ContractViolation("cg_solve: tolerance must be positive");
  if (diagonal && diagonal->size() != b.size()) throw ContractViolation("cg_solve: preconditioner length differs from b");
  CgResult res;
  res.x = Eigen::VectorXd::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) return res;

  Eigen::VectorXd r = b;
  auto precondition = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return diagonal ? Eigen::VectorXd(v.cwiseQuotient(*diagonal)) : v;
  };
  Eigen::VectorXd z = precondition(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  res.residual_norm = bnorm;
  while (res.iterations < max_iter) {
    const Eigen::VectorXd ap = apply_a(p);
    const double pap = p.dot(ap);
    if (!(pap > 0)) throw SolverFailure("cg_solve: operator is not positive definite", r.norm());
    const double alpha = rz / pap;
    res.x += alpha * p;
    r -= alpha * ap;
    ++res.iterations;
    res.residual_norm = r.norm();
    if (res.residual_norm <= tol * bnorm) {
      res.residual_norm = (b - apply_a(res.x)).norm();
      return res;
    }
    z = precondition(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  throw SolverFailure("cg_solve: no convergence in " + std::to_string(max_iter) +
                          " iterations, residual norm " + std::to_string(res.residual_norm),
                      res.residual_norm);
}

Eigen::VectorXd EllipticSystem::interior(const Field& f) const {
  Eigen::VectorXd v(unknowns());
  const Index iw = width - 2;
  for (Index y = 1; y < height - 1; ++y)
    for (Index x = 1; x < width - 1; ++x) v[(y - 1) * iw + (x - 1)] = f(y, x);
  return v;
}

Field EllipticSystem::embed(const Eigen::VectorXd& v) const {
  Field f = Field::Zero(height, width);
  const Index iw = width - 2;
  for (Index y = 1; y < height - 1; ++y)
    for (Index x = 1; x < width - 1; ++x) f(y, x) = v[(y - 1) * iw + (x - 1)];
  return f;
}

Eigen::VectorXd EllipticSystem::apply(const Eigen::VectorXd& v) const {
  const Field u = embed(v);
  Field out = Field::Zero(height, width);
  const double ix2 = 1.0 / (hx * hx), iy2 = 1.0 / (hy * hy);
  for (Index y = 1; y < height - 1; ++y) {
    for (Index x = 1; x < width - 1; ++x) {
      const double c = u(y, x);
      if (coefficient) {
        const Field& a = *coefficient;
        const double ae = 0.5 * (a(y, x) + a(y, x + 1)), aw = 0.5 * (a(y, x) + a(y, x - 1));
        const double an = 0.5 * (a(y, x) + a(y + 1, x)), as = 0.5 * (a(y, x) + a(y - 1, x));
        out(y, x) = (ae * (c - u(y, x + 1)) + aw * (c - u(y, x - 1))) * ix2 +
                    (an * (c - u(y + 1, x)) + as * (c - u(y - 1, x))) * iy2;
      } else {
        out(y, x) = (2.0 * c - u(y, x + 1) - u(y, x - 1)) * ix2 + (2.0 * c - u(y + 1, x) - u(y - 1, x)) * iy2 - k2 * c;
      }
    }
  }
  return interior(out);
}

Eigen::VectorXd EllipticSystem::diagonal() const {
  Field d = Field::Zero(height, width);
  const double ix2 = 1.0 / (hx * hx), iy2 = 1.0 / (hy * hy);
  for (Index y = 1; y < height - 1; ++y) {
    for (Index x = 1; x < width - 1; ++x) {
      if (coefficient) {
        const Field& a = *coefficient;
        d(y, x) = 0.5 * ((2 * a(y, x) + a(y, x + 1) + a(y, x - 1)) * ix2 + (2 * a(y, x) + a(y + 1, x) + a(y - 1, x)) * iy2);
      } else {
        d(y, x) = 2.0 * ix2 + 2.0 * iy2 - k2;
      }
    }
  }
  return interior(d);
}

EllipticSystem darcy_system(const Field& a) {
  EllipticSystem s = helmholtz_system(a.rows(), a.cols(), 0.0);
  s.coefficient = a;
  return s;
}

EllipticSystem helmholtz_system(Index height, Index width, double k2) {
  if (height < 3 || width < 3) throw ContractViolation("Dirichlet grids need at least 3 nodes per axis");
  EllipticSystem s;
  s.height = height;
  s.width = width;
  s.hy = 1.0 / static_cast<double>(height - 1);
  s.hx = 1.0 / static_cast<double>(width - 1);
  s.k2 = k2;
  return s;
}

namespace {

Field solve_system(const EllipticSystem& sys, const Field& rhs, const PdeConfig& cfg) {
  const Eigen::VectorXd diag = sys.diagonal();
  auto res = cg_solve([&](const Eigen::VectorXd& v) { return sys.apply(v); }, sys.interior(rhs), cfg.tol, cfg.max_iter,
                      &diag);
  return sys.embed(res.x);
}

}  // namespace

FieldSample darcy_from_field(const Field& m, const PdeConfig& cfg) {
  Field a = m.unaryExpr([&](double v) { return v >= 0.0 ? cfg.darcy_high : cfg.darcy_low; });
  const auto sys = darcy_system(a);
  Field u = solve_system(sys, Field::Constant(m.rows(), m.cols(), cfg.darcy_forcing), cfg);
  FieldSample s = make_sample(PdeKind::darcy, m.rows(), m.cols());
  s.set_channel(0, a);
  s.set_channel(1, u);
  return s;
}

FieldSample poisson_from_forcing(const Field& forcing, const PdeConfig& cfg, PdeKind kind) {
  if (kind != PdeKind::poisson && kind != PdeKind::helmholtz) throw ContractViolation("poisson_from_forcing: kind must be poisson or helmholtz");
  const double k2 = kind == PdeKind::helmholtz ? cfg.helmholtz_k * cfg.helmholtz_k : 0.0;
  const Index h = forcing.rows(), w = forcing.cols();
  const auto sys = helmholtz_system(h, w, k2);
  Field a(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      a(y, x) = forcing(y, x) * std::sin(kPi * static_cast<double>(x) * sys.hx) * std::sin(kPi * static_cast<double>(y) * sys.hy);
  // Lap u + k2 u = a  <=>  (-Lap - k2) u = -a
  Field u = solve_system(sys, -a, cfg);
  FieldSample s = make_sample(kind, h, w);
  s.set_channel(0, a);
  s.set_channel(1, u);
  return s;
}

Field ns_forcing(Index n, double amplitude) {
  Field q(n, n);
  for (Index y = 0; y < n; ++y) {
    for (Index x = 0; x < n; ++x) {
      const double t = 2.0 * kPi * static_cast<double>(x + y) / static_cast<double>(n);
      q(y, x) = amplitude * (std::sin(t) + std::cos(t));
    }
  }
  return q;
}

Field spectral_step_ns(const Field& omega, const PdeConfig& cfg) {
  return spectral_step_ns(omega, cfg, ns_forcing(omega.rows(), cfg.ns_forcing_amplitude));
}

Field spectral_step_ns(const Field& omega, const PdeConfig& cfg, const Field& forcing) {
  const Index n = omega.rows();
  if (omega.cols() != n || !power_of_two(n)) throw ContractViolation("spectral_step_ns: needs a square power-of-two grid");
  if (forcing.rows() != n || forcing.cols() != n) throw ContractViolation("spectral_step_ns: forcing extents differ");
  const Dft& d = dft(n);
  const double dt = cfg.ns_horizon / static_cast<double>(cfg.ns_steps);
  const double nu = cfg.ns_viscosity;

  const Eigen::MatrixXcd w_hat = fft2(d, d, omega);
  const Eigen::MatrixXcd q_hat = fft2(d, d, forcing);
  Eigen::MatrixXcd nl_hat = Eigen::MatrixXcd::Zero(n, n);
  if (cfg.advection) {
    Eigen::MatrixXcd psi_hat(n, n), vx_hat(n, n), vy_hat(n, n), wx_hat(n, n), wy_hat(n, n);
    const cd i1(0.0, 1.0);
    for (Index r = 0; r < n; ++r) {
      const double ky = 2.0 * kPi * d.wavenumber(r);
      for (Index c = 0; c < n; ++c) {
        const double kx = 2.0 * kPi * d.wavenumber(c);
        const double k2 = kx * kx + ky * ky;
        // Lap psi = -omega; the mean of psi is pinned to zero.
        psi_hat(r, c) = k2 > 0 ? w_hat(r, c) / k2 : cd(0.0);
        vx_hat(r, c) = i1 * ky * psi_hat(r, c);
        vy_hat(r, c) = -i1 * kx * psi_hat(r, c);
        wx_hat(r, c) = i1 * kx * w_hat(r, c);
        wy_hat(r, c) = i1 * ky * w_hat(r, c);
      }
    }
    const Field nl = ifft2_real(d, d, vx_hat).cwiseProduct(ifft2_real(d, d, wx_hat)) +
                     ifft2_real(d, d, vy_hat).cwiseProduct(ifft2_real(d, d, wy_hat));
    nl_hat = fft2(d, d, nl);
    if (cfg.dealias) {
      for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < n; ++c)
          if (!kept(d, r) || !kept(d, c)) nl_hat(r, c) = 0.0;
    }
  }
  Eigen::MatrixXcd next(n, n);
  for (Index r = 0; r < n; ++r) {
    const double ky = 2.0 * kPi * d.wavenumber(r);
    for (Index c = 0; c < n; ++c) {
      const double kx = 2.0 * kPi * d.wavenumber(c);
      const double damp = 0.5 * dt * nu * (kx * kx + ky * ky);
      next(r, c) = ((1.0 - damp) * w_hat(r, c) + dt * (q_hat(r, c) - nl_hat(r, c))) / (1.0 + damp);
    }
  }
  return ifft2_real(d, d, next);
}

Eigen::VectorXd spectral_step_burgers(const Eigen::VectorXd& u, double dt, const PdeConfig& cfg) {
  const Index n = u.size();
  if (!power_of_two(n)) throw ContractViolation("spectral_step_burgers: extent must be a power of two");
  const Dft& d = dft(n);
  Eigen::VectorXd k(n);
  Eigen::VectorXcd e(n), e2(n);
  for (Index j = 0; j < n; ++j) {
    k[j] = 2.0 * kPi * d.wavenumber(j);
    const double lin = -cfg.burgers_viscosity * k[j] * k[j];
    e[j] = std::exp(lin * dt);
    e2[j] = std::exp(lin * dt / 2.0);
  }
  const cd i1(0.0, 1.0);
  // N(u_hat) = -i k FFT(u^2 / 2)
  auto nonlinear = [&](const Eigen::VectorXcd& uh) -> Eigen::VectorXcd {
    if (!cfg.advection) return Eigen::VectorXcd::Zero(n);
    const Eigen::VectorXd phys = d.inverse_real(uh);
    Eigen::VectorXcd f = d.forward(0.5 * phys.cwiseProduct(phys));
    for (Index j = 0; j < n; ++j) f[j] = (cfg.dealias && !kept(d, j)) ? cd(0.0) : -i1 * k[j] * f[j];
    return f;
  };
  const Eigen::VectorXcd uh = d.forward(u);
  const Eigen::VectorXcd k1 = nonlinear(uh);
  const Eigen::VectorXcd k2 = nonlinear(e2.cwiseProduct(uh + 0.5 * dt * k1));
  const Eigen::VectorXcd k3 = nonlinear(e2.cwiseProduct(uh) + 0.5 * dt * k2);
  const Eigen::VectorXcd k4 = nonlinear(e.cwiseProduct(uh) + dt * e2.cwiseProduct(k3));
  const Eigen::VectorXcd next =
      e.cwiseProduct(uh) + (dt / 6.0) * (e.cwiseProduct(k1) + 2.0 * e2.cwiseProduct(k2 + k3) + k4);
  return d.inverse_real(next);
}

FieldSample ns_from_initial(const Field& omega0, const PdeConfig& cfg) {
  const Field q = ns_forcing(omega0.rows(), cfg.ns_forcing_amplitude);
  Field w = omega0;
  for (Index s = 0; s < cfg.ns_steps; ++s) w = spectral_step_ns(w, cfg, q);
  if (!w.allFinite()) throw SolverFailure("navier_stokes: non-finite vorticity", std::nan(""));
  FieldSample out = make_sample(PdeKind::navier_stokes, omega0.rows(), omega0.cols());
  out.set_channel(0, omega0);
  out.set_channel(1, w);
  return out;
}

FieldSample burgers_from_initial(const Eigen::VectorXd& u0, const PdeConfig& cfg) {
  const Index steps = cfg.height, n = u0.size();
  if (steps < 2) throw ContractViolation("burgers needs at least two time snapshots");
  const double dt_snap = cfg.burgers_horizon / static_cast<double>(steps - 1);
  const double h = 1.0 / static_cast<double>(n);
  Field st(steps, n);
  Eigen::VectorXd u = u0;
  st.row(0) = u.transpose();
  for (Index t = 1; t < steps; ++t) {
    const double umax = std::max(u.cwiseAbs().maxCoeff(), 1e-12);
    const auto sub = std::max<Index>(1, static_cast<Index>(std::ceil(dt_snap * umax / (cfg.burgers_cfl * h))));
    for (Index s = 0; s < sub; ++s) u = spectral_step_burgers(u, dt_snap / static_cast<double>(sub), cfg);
    if (!u.allFinite()) throw SolverFailure("burgers: non-finite state", std::nan(""));
    st.row(t) = u.transpose();
  }
  FieldSample out = make_sample(PdeKind::burgers, steps, n);
  out.set_channel(0, st);
  return out;
}

FieldSample generate(PdeKind kind, const PdeConfig& cfg, const SeedKey& key) {
  cfg.validate();
  Generator gen = derive_seed(key);
  const GrfSpec spec = cfg.grf_for(kind);
  switch (kind) {
    case PdeKind::darcy: return darcy_from_field(grf_sample(spec, gen), cfg);
    case PdeKind::poisson: return poisson_from_forcing(grf_sample(spec, gen), cfg, PdeKind::poisson);
    case PdeKind::helmholtz: return poisson_from_forcing(grf_sample(spec, gen), cfg, PdeKind::helmholtz);
    case PdeKind::navier_stokes: return ns_from_initial(grf_sample(spec, gen), cfg);
    case PdeKind::burgers: {
      const Field u0 = grf_sample(spec, gen);
      return burgers_from_initial(u0.row(0).transpose(), cfg);
    }
  }
  throw ContractViolation("generate: unknown pde kind");
}

std::vector<FieldSample> generate_dataset(PdeKind kind, const PdeConfig& cfg, const SeedKey& key, Index count) {
  std::vector<FieldSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) out.push_back(generate(kind, cfg, key.child(static_cast<std::uint64_t>(i))));
  return out;
}

}  // namespace physinstruct
