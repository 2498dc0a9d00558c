#pragma once

#include <span>
#include <vector>

#include "physinstruct/autodiff.hpp"
#include "physinstruct/pde_data.hpp"

namespace physinstruct {

/// Discrete PDE error map of one benchmark. The interior set is the rectangle
/// rows [row_begin, row_end) x cols [col_begin, col_end):
///   darcy/poisson/helmholtz: all nodes off the boundary ring
///   navier_stokes: every node (periodic)
///   burgers: time rows 1..T-2, every space column
struct ResidualOperator {
  PdeKind kind = PdeKind::poisson;
  Index height = 0, width = 0;
  double hy = 0.0, hx = 0.0;  // burgers: hy is the time spacing
  double nu = 0.0;
  double k2 = 0.0;
  double q = 1.0;  // darcy forcing
  Index row_begin = 0, row_end = 0, col_begin = 0, col_end = 0;

  static ResidualOperator make(PdeKind kind, const PdeConfig& cfg);

  Index interior_count() const { return (row_end - row_begin) * (col_end - col_begin); }
  /// (1,1,H,W) indicator of the interior set.
  Tensor mask() const;
  void check(const Shape& batch_shape) const;
};

/// Residual of a (B,C,H,W) batch as a (B,1,H,W) node, zero outside the interior set.
Var residual_var(const ResidualOperator& op, Var x);
/// Mean over the batch of R(x) = mean squared interior residual.
Var physics_loss_var(const ResidualOperator& op, Var x);

struct ResidualField {
  Eigen::MatrixXd values;  // interior block only
  Index height = 0, width = 0;
};

ResidualField residual_field(const ResidualOperator& op, const FieldSample& x);
double physics_error(const ResidualOperator& op, const FieldSample& x);
/// Gradient of physics_error with respect to every channel, shape (C,H,W).
Tensor residual_gradient(const ResidualOperator& op, const FieldSample& x);

/// R for each item of a (B,C,H,W) batch.
std::vector<double> physics_errors(const ResidualOperator& op, const Tensor& batch);
/// Mean over samples of sqrt(R).
double rms_pde_error(const ResidualOperator& op, std::span<const FieldSample> batch);
double rms_pde_error(const ResidualOperator& op, const Tensor& batch);

}  // namespace physinstruct
