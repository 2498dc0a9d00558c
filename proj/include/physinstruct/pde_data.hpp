#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "physinstruct/grf.hpp"
#include "physinstruct/rng.hpp"
#include "physinstruct/tensor.hpp"

namespace physinstruct {

enum class PdeKind { darcy, poisson, helmholtz, navier_stokes, burgers };

std::string_view to_string(PdeKind kind);
PdeKind parse_pde_kind(std::string_view name);

/// 2 for darcy/poisson/helmholtz/navier_stokes, 1 for burgers.
Index channel_count(PdeKind kind);
/// Number of leading a-channels (0 for burgers).
Index a_channel_count(PdeKind kind);
bool is_dirichlet(PdeKind kind);

/// One PDE instance: a-channels then u-channels, shape (C, H, W).
/// Burgers stores the space-time field with time on rows and space on columns.
struct FieldSample {
  PdeKind kind = PdeKind::poisson;
  Tensor channels;

  Index height() const { return channels.shape[1]; }
  Index width() const { return channels.shape[2]; }
  Field channel(Index c) const;
  void set_channel(Index c, const Field& f);
};

FieldSample make_sample(PdeKind kind, Index height, Index width);

struct PdeConfig {
  Index height = 16;
  Index width = 16;
  double ns_viscosity = 1e-3;
  double burgers_viscosity = 0.01;
  double helmholtz_k = 1.0;
  double darcy_forcing = 1.0;
  double darcy_high = 12.0;
  double darcy_low = 3.0;
  Index ns_steps = 10;
  double ns_horizon = 1.0;
  double ns_forcing_amplitude = 0.1;
  double burgers_horizon = 1.0;  // snapshots = height rows, t in [0, horizon]
  double burgers_cfl = 0.25;
  double tol = 1e-10;
  Index max_iter = 20000;
  bool advection = true;  // false drops the nonlinear terms of NS and burgers
  bool dealias = true;
  std::optional<GrfSpec> grf;  // overrides the default covariance of the kind

  /// Desk-scale defaults: darcy/poisson 16x16, helmholtz and NS 32x32, burgers 64x64.
  static PdeConfig defaults(PdeKind kind);
  GrfSpec grf_for(PdeKind kind) const;
  void validate() const;
};

using LinearOperator = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct CgResult {
  Eigen::VectorXd x;
  Index iterations = 0;
  double residual_norm = 0.0;
};

/// Conjugate gradients from a zero initial guess, stopping once
/// ||A x - b|| <= tol * ||b||. `diagonal` enables Jacobi preconditioning.
CgResult cg_solve(const LinearOperator& apply_a, const Eigen::VectorXd& b, double tol, Index max_iter,
                  const Eigen::VectorXd* diagonal = nullptr);

/// Negated (SPD) form of the Dirichlet operators on interior nodes, flattened row-major
/// over the (H-2) x (W-2) interior. Boundary values are zero.
///   darcy:     (A u)_i = -div(a grad u)_i with face averages (a_i + a_j)/2
///   poisson:   A = -Lap_h - k2 (k2 = 0), helmholtz with k2 = k^2
struct EllipticSystem {
  Index height = 0, width = 0;
  double hy = 0.0, hx = 0.0;
  std::optional<Field> coefficient;  // darcy only
  double k2 = 0.0;

  Index unknowns() const { return (height - 2) * (width - 2); }
  Eigen::VectorXd apply(const Eigen::VectorXd& u) const;
  Eigen::VectorXd diagonal() const;
  Eigen::VectorXd interior(const Field& f) const;
  Field embed(const Eigen::VectorXd& v) const;  // interior vector -> field with zero ring
};

EllipticSystem darcy_system(const Field& a);
EllipticSystem helmholtz_system(Index height, Index width, double k2);

FieldSample generate(PdeKind kind, const PdeConfig& cfg, const SeedKey& key);
/// Samples key.child(0..count-1).
std::vector<FieldSample> generate_dataset(PdeKind kind, const PdeConfig& cfg, const SeedKey& key, Index count);

// Pipelines of generate with the random draw supplied by the caller.
FieldSample darcy_from_field(const Field& m, const PdeConfig& cfg);
/// Mollifies the forcing by sin(pi c1) sin(pi c2), then solves Lap_h u + k2 u = a
/// (k2 = helmholtz_k^2 for helmholtz, 0 for poisson).
FieldSample poisson_from_forcing(const Field& forcing, const PdeConfig& cfg, PdeKind kind = PdeKind::poisson);
FieldSample ns_from_initial(const Field& omega0, const PdeConfig& cfg);
FieldSample burgers_from_initial(const Eigen::VectorXd& u0, const PdeConfig& cfg);

/// NS forcing q(c) = amp (sin(2 pi (c1 + c2)) + cos(2 pi (c1 + c2))) on the periodic grid.
Field ns_forcing(Index n, double amplitude);

/// One step of the vorticity equation, dt = ns_horizon / ns_steps. Crank-Nicolson
/// diffusion, explicit advection and forcing, 2/3-rule dealiasing of the product.
Field spectral_step_ns(const Field& omega, const PdeConfig& cfg);
Field spectral_step_ns(const Field& omega, const PdeConfig& cfg, const Field& forcing);

/// One integrating-factor RK4 step of viscous burgers on the periodic unit interval.
Eigen::VectorXd spectral_step_burgers(const Eigen::VectorXd& u, double dt, const PdeConfig& cfg);

}  // namespace physinstruct
