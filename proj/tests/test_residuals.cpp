#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "physinstruct/errors.hpp"
#include "physinstruct/parameters.hpp"
#include "physinstruct/residuals.hpp"

using namespace physinstruct;

namespace {

constexpr double kPi = std::numbers::pi;

PdeConfig small(PdeKind kind) {
  PdeConfig c = PdeConfig::defaults(kind);
  c.height = c.width = 8;
  return c;
}

FieldSample random_sample(PdeKind kind, Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.5, 1.5);
  FieldSample s = make_sample(kind, h, w);
  for (Index i = 0; i < s.channels.numel(); ++i) s.channels.data[i] = d(rng);
  return s;
}

double gradient_fd_error(PdeKind kind, std::uint64_t seed) {
  const PdeConfig cfg = small(kind);
  const auto op = ResidualOperator::make(kind, cfg);
  const FieldSample s = random_sample(kind, cfg.height, cfg.width, seed);
  Parameters p;
  p.add("x", stack({s.channels}));
  auto fn = [&](Tape&, const BoundParams& b) { return physics_loss_var(op, b["x"]); };
  const double err = grad_check(fn, p, {.step = 1e-4, .coordinates = 1000});
  // residual_gradient must agree with the taped loss
  Tape t;
  Var x = t.variable(p["x"]);
  t.backward(physics_loss_var(op, x));
  CHECK((unstack(t.grad(x), 0).data - residual_gradient(op, s).data).abs().maxCoeff() < 1e-12);
  return err;
}

}  // namespace

TEST_CASE("helmholtz with k = 0 matches poisson") {
  PdeConfig cfg = small(PdeKind::helmholtz);
  cfg.helmholtz_k = 0.0;
  FieldSample s = random_sample(PdeKind::helmholtz, 8, 8, 1);
  FieldSample p = s;
  p.kind = PdeKind::poisson;
  const auto rh = residual_field(ResidualOperator::make(PdeKind::helmholtz, cfg), s);
  const auto rp = residual_field(ResidualOperator::make(PdeKind::poisson, cfg), p);
  CHECK(rh.values == rp.values);
}

TEST_CASE("burgers constant field has zero residual") {
  PdeConfig cfg = small(PdeKind::burgers);
  FieldSample s = make_sample(PdeKind::burgers, 8, 8);
  s.channels.data.setConstant(0.37);
  const auto op = ResidualOperator::make(PdeKind::burgers, cfg);
  CHECK(residual_field(op, s).values.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(residual_field(op, s).values.rows() == 6);
  CHECK(residual_field(op, s).values.cols() == 8);
}

TEST_CASE("navier-stokes terminal residual of a sine") {
  PdeConfig cfg = small(PdeKind::navier_stokes);
  const Index n = 16;
  cfg.height = cfg.width = n;
  FieldSample s = make_sample(PdeKind::navier_stokes, n, n);
  Field w(n, n);
  const double h = 1.0 / n;
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) w(y, x) = std::sin(2 * kPi * x * h);
  s.set_channel(1, w);
  const auto r = residual_field(ResidualOperator::make(PdeKind::navier_stokes, cfg), s);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) CHECK(r.values(y, x) == doctest::Approx(std::sin(2 * kPi * h) / h * std::cos(2 * kPi * x * h)).epsilon(1e-12));
}

TEST_CASE("kind mismatch is rejected") {
  const auto op = ResidualOperator::make(PdeKind::poisson, small(PdeKind::poisson));
  CHECK_THROWS_AS(residual_field(op, random_sample(PdeKind::darcy, 8, 8, 2)), ContractViolation);
}

TEST_CASE("physics_error definition") {
  PdeConfig cfg = small(PdeKind::poisson);
  const auto op = ResidualOperator::make(PdeKind::poisson, cfg);
  FieldSample s = make_sample(PdeKind::poisson, 8, 8);
  CHECK(physics_error(op, s) == 0.0);
  // u = 0, a = -1 gives r = 0 - a = 1 on every interior node
  s.set_channel(0, Field::Constant(8, 8, -1.0));
  CHECK(physics_error(op, s) == 1.0);
}

TEST_CASE("generated data has vanishing residual") {
  for (auto kind : {PdeKind::poisson, PdeKind::helmholtz, PdeKind::darcy}) {
    PdeConfig cfg = PdeConfig::defaults(kind);
    const auto op = ResidualOperator::make(kind, cfg);
    const auto data = generate_dataset(kind, cfg, {8, "data", 0}, 5);
    for (const auto& s : data) {
      CHECK(physics_error(op, s) <= 1e-16);
      CHECK(std::sqrt(physics_error(op, s)) <= 10 * cfg.tol);
      CHECK(residual_gradient(op, s).data.abs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("residual gradients match finite differences for every kind") {
  CHECK(gradient_fd_error(PdeKind::poisson, 3) < 1e-6);
  CHECK(gradient_fd_error(PdeKind::helmholtz, 4) < 1e-5);
  CHECK(gradient_fd_error(PdeKind::darcy, 5) < 1e-5);
  CHECK(gradient_fd_error(PdeKind::navier_stokes, 6) < 1e-5);
  CHECK(gradient_fd_error(PdeKind::burgers, 7) < 1e-5);
}

TEST_CASE("linear kinds scale with the field when constants are zeroed") {
  for (auto kind : {PdeKind::poisson, PdeKind::helmholtz, PdeKind::navier_stokes}) {
    const auto op = ResidualOperator::make(kind, small(kind));
    FieldSample s = random_sample(kind, 8, 8, 9);
    FieldSample t = s;
    t.channels.data *= -2.5;
    CHECK((residual_field(op, t).values - (-2.5) * residual_field(op, s).values).cwiseAbs().maxCoeff() < 1e-9);
  }
  auto op = ResidualOperator::make(PdeKind::darcy, small(PdeKind::darcy));
  op.q = 0.0;
  FieldSample s = random_sample(PdeKind::darcy, 8, 8, 10);
  FieldSample t = s;
  t.set_channel(1, 3.0 * s.channel(1));
  CHECK((residual_field(op, t).values - 3.0 * residual_field(op, s).values).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("boundary of u only matters where the stencil reaches it") {
  const auto op = ResidualOperator::make(PdeKind::poisson, small(PdeKind::poisson));
  const Tensor g = residual_gradient(op, random_sample(PdeKind::poisson, 8, 8, 11));
  // corners of the u-channel are never referenced by the 5-point stencil
  CHECK(g.data[(1 * 8 + 0) * 8 + 0] == 0.0);
  CHECK(g.data[(1 * 8 + 7) * 8 + 7] == 0.0);
  // a-channel boundary is outside the interior set
  CHECK(g.data[0] == 0.0);
}

TEST_CASE("rms_pde_error averages square roots") {
  PdeConfig cfg = small(PdeKind::poisson);
  const auto op = ResidualOperator::make(PdeKind::poisson, cfg);
  auto with_r = [&](double r) {
    FieldSample s = make_sample(PdeKind::poisson, 8, 8);
    s.set_channel(0, Field::Constant(8, 8, -std::sqrt(r)));
    return s;
  };
  std::vector<FieldSample> one{with_r(4.0)};
  CHECK(rms_pde_error(op, one) == doctest::Approx(2.0).epsilon(1e-14));
  std::vector<FieldSample> zeros{with_r(0.0), with_r(0.0)};
  CHECK(rms_pde_error(op, zeros) == 0.0);
  std::vector<FieldSample> mixed{with_r(1.0), with_r(9.0)};
  CHECK(rms_pde_error(op, mixed) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(rms_pde_error(op, stack({mixed[0].channels, mixed[1].channels})) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK_THROWS_AS(rms_pde_error(op, std::span<const FieldSample>{}), ContractViolation);
}
