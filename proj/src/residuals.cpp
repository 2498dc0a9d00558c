#include "physinstruct/residuals.hpp"

#include <cmath>

#include "physinstruct/errors.hpp"

namespace physinstruct {

ResidualOperator ResidualOperator::make(PdeKind kind, const PdeConfig& cfg) {
  cfg.validate();
  ResidualOperator op;
  op.kind = kind;
  op.height = cfg.height;
  op.width = cfg.width;
  switch (kind) {
    case PdeKind::darcy:
    case PdeKind::poisson:
    case PdeKind::helmholtz:
      if (cfg.height < 3 || cfg.width < 3) throw ContractViolation("Dirichlet grids need at least 3 nodes per axis");
      op.hy = 1.0 / static_cast<double>(cfg.height - 1);
      op.hx = 1.0 / static_cast<double>(cfg.width - 1);
      op.k2 = kind == PdeKind::helmholtz ? cfg.helmholtz_k * cfg.helmholtz_k : 0.0;
      op.q = cfg.darcy_forcing;
      op.row_begin = op.col_begin = 1;
      op.row_end = cfg.height - 1;
      op.col_end = cfg.width - 1;
      break;
    case PdeKind::navier_stokes:
      op.hy = 1.0 / static_cast<double>(cfg.height);
      op.hx = 1.0 / static_cast<double>(cfg.width);
      op.nu = cfg.ns_viscosity;
      op.row_end = cfg.height;
      op.col_end = cfg.width;
      break;
    case PdeKind::burgers:
      if (cfg.height < 3) throw ContractViolation("burgers residual needs at least 3 time snapshots");
      op.hy = cfg.burgers_horizon / static_cast<double>(cfg.height - 1);
      op.hx = 1.0 / static_cast<double>(cfg.width);
      op.nu = cfg.burgers_viscosity;
      op.row_begin = 1;
      op.row_end = cfg.height - 1;
      op.col_end = cfg.width;
      break;
  }
  return op;
}

Tensor ResidualOperator::mask() const {
  Tensor m(Shape{1, 1, height, width});
  for (Index y = row_begin; y < row_end; ++y)
    for (Index x = col_begin; x < col_end; ++x) m(0, 0, y, x) = 1.0;
  return m;
}

void ResidualOperator::check(const Shape& s) const {
  if (s.rank() != 4 || s[1] != channel_count(kind) || s[2] != height || s[3] != width) {
    throw ContractViolation("residual(" + std::string(to_string(kind)) + "): expected (B," +
                            std::to_string(channel_count(kind)) + "," + std::to_string(height) + "," +
                            std::to_string(width) + "), got " + s.str());
  }
}

namespace {

// Neighbour values: east(u)(y,x) = u(y,x+1) and so on, wrapping at the edges.
Var east(Var u) { return shift(u, 0, -1, true); }
Var west(Var u) { return shift(u, 0, 1, true); }
Var north(Var u) { return shift(u, -1, 0, true); }
Var south(Var u) { return shift(u, 1, 0, true); }

Var laplacian(Var u, double hy, double hx) {
  Var dxx = scale(sub(add(east(u), west(u)), scale(u, 2.0)), 1.0 / (hx * hx));
  Var dyy = scale(sub(add(north(u), south(u)), scale(u, 2.0)), 1.0 / (hy * hy));
  return add(dxx, dyy);
}

Var raw_residual(const ResidualOperator& op, Var x) {
  const Shape& s = x.shape();
  switch (op.kind) {
    case PdeKind::darcy: {
      Var a = slice_channels(x, 0, 1), u = slice_channels(x, 1, 2);
      Var fe = mul(scale(add(a, east(a)), 0.5), sub(east(u), u));
      Var fw = mul(scale(add(a, west(a)), 0.5), sub(u, west(u)));
      Var fn = mul(scale(add(a, north(a)), 0.5), sub(north(u), u));
      Var fs = mul(scale(add(a, south(a)), 0.5), sub(u, south(u)));
      Var div = add(scale(sub(fe, fw), 1.0 / (op.hx * op.hx)), scale(sub(fn, fs), 1.0 / (op.hy * op.hy)));
      return add_const(scale(div, -1.0), Tensor::constant(Shape{1, 1, s[2], s[3]}, -op.q));
    }
    case PdeKind::poisson:
    case PdeKind::helmholtz: {
      Var a = slice_channels(x, 0, 1), u = slice_channels(x, 1, 2);
      Var r = laplacian(u, op.hy, op.hx);
      if (op.k2 != 0.0) r = add(r, scale(u, op.k2));
      return sub(r, a);
    }
    case PdeKind::navier_stokes: {
      Var w = slice_channels(x, 1, 2);
      Var dx = scale(sub(east(w), west(w)), 0.5 / op.hx);
      Var dy = scale(sub(north(w), south(w)), 0.5 / op.hy);
      return add(dx, dy);
    }
    case PdeKind::burgers: {
      Var u = x;
      Var ut = scale(sub(north(u), south(u)), 0.5 / op.hy);
      Var f = scale(mul(u, u), 0.5);
      Var fx = scale(sub(east(f), west(f)), 0.5 / op.hx);
      Var uxx = scale(sub(add(east(u), west(u)), scale(u, 2.0)), op.nu / (op.hx * op.hx));
      return sub(add(ut, fx), uxx);
    }
  }
  throw ContractViolation("residual: unknown pde kind");
}

Tensor batch_of(const FieldSample& x) { return stack({x.channels}); }

}  // namespace

Var residual_var(const ResidualOperator& op, Var x) {
  op.check(x.shape());
  return mul_const(raw_residual(op, x), op.mask());
}

Var physics_loss_var(const ResidualOperator& op, Var x) {
  Var r = residual_var(op, x);
  const double n = static_cast<double>(x.shape()[0] * op.interior_count());
  return scale(sum(mul(r, r)), 1.0 / n);
}

ResidualField residual_field(const ResidualOperator& op, const FieldSample& x) {
  if (x.kind != op.kind) {
    throw ContractViolation("residual: sample kind " + std::string(to_string(x.kind)) + " does not match operator kind " +
                            std::string(to_string(op.kind)));
  }
  Tape tape;
  Var r = residual_var(op, tape.constant(batch_of(x)));
  ResidualField out;
  out.height = op.height;
  out.width = op.width;
  out.values.resize(op.row_end - op.row_begin, op.col_end - op.col_begin);
  for (Index y = op.row_begin; y < op.row_end; ++y)
    for (Index c = op.col_begin; c < op.col_end; ++c) out.values(y - op.row_begin, c - op.col_begin) = r.value()(0, 0, y, c);
  return out;
}

double physics_error(const ResidualOperator& op, const FieldSample& x) {
  return residual_field(op, x).values.array().square().mean();
}

Tensor residual_gradient(const ResidualOperator& op, const FieldSample& x) {
  if (x.kind != op.kind) throw ContractViolation("residual_gradient: sample kind does not match operator kind");
  Tape tape;
  Var xv = tape.variable(batch_of(x));
  tape.backward(physics_loss_var(op, xv));
  return unstack(tape.grad(xv), 0);
}

std::vector<double> physics_errors(const ResidualOperator& op, const Tensor& batch) {
  Tape tape;
  Var r = residual_var(op, tape.constant(batch));
  const Tensor& rv = r.value();
  const Index plane = op.height * op.width;
  std::vector<double> out;
  for (Index n = 0; n < batch.shape[0]; ++n) {
    out.push_back(rv.data.segment(n * plane, plane).square().sum() / static_cast<double>(op.interior_count()));
  }
  return out;
}

double rms_pde_error(const ResidualOperator& op, std::span<const FieldSample> batch) {
  if (batch.empty()) throw ContractViolation("rms_pde_error: empty batch");
  double acc = 0.0;
  for (const auto& s : batch) acc += std::sqrt(physics_error(op, s));
  return acc / static_cast<double>(batch.size());
}

double rms_pde_error(const ResidualOperator& op, const Tensor& batch) {
  if (batch.shape.rank() != 4 || batch.shape[0] == 0) throw ContractViolation("rms_pde_error: empty batch");
  double acc = 0.0;
  for (double r : physics_errors(op, batch)) acc += std::sqrt(r);
  return acc / static_cast<double>(batch.shape[0]);
}

}  // namespace physinstruct
