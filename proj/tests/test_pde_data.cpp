#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <Eigen/Dense>

#include "physinstruct/dataset_io.hpp"
#include "physinstruct/errors.hpp"
#include "physinstruct/pde_data.hpp"
#include "physinstruct/spectral.hpp"

using namespace physinstruct;

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::MatrixXd dense(const EllipticSystem& s) {
  const Index n = s.unknowns();
  Eigen::MatrixXd a(n, n);
  for (Index j = 0; j < n; ++j) a.col(j) = s.apply(Eigen::VectorXd::Unit(n, j));
  return a;
}

}  // namespace

TEST_CASE("cg on the identity converges in one iteration") {
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(7, -1.0, 2.0);
  auto r = cg_solve([](const Eigen::VectorXd& v) { return v; }, b, 1e-12, 10);
  CHECK(r.iterations == 1);
  CHECK((r.x - b).norm() < 1e-14);
}

TEST_CASE("cg recovers a manufactured solution") {
  const auto sys = helmholtz_system(10, 10, 0.0);  // 8x8 interior
  Eigen::VectorXd u_star = Eigen::VectorXd::Random(sys.unknowns());
  const Eigen::VectorXd b = sys.apply(u_star);
  auto r = cg_solve([&](const Eigen::VectorXd& v) { return sys.apply(v); }, b, 1e-12, 1000);
  CHECK((sys.apply(r.x) - b).norm() <= 1e-12 * b.norm() * 1.01);
  CHECK((r.x - u_star).norm() / u_star.norm() < 1e-9);
}

TEST_CASE("cg reports non-convergence") {
  const auto sys = helmholtz_system(18, 18, 0.0);
  const Eigen::VectorXd b = Eigen::VectorXd::Ones(sys.unknowns());
  try {
    cg_solve([&](const Eigen::VectorXd& v) { return sys.apply(v); }, b, 1e-12, 3);
    FAIL("expected SolverFailure");
  } catch (const SolverFailure& e) {
    CHECK(e.residual_norm() > 0.0);
  }
}

TEST_CASE("constant-coefficient darcy equals poisson and a dense solve") {
  PdeConfig cfg = PdeConfig::defaults(PdeKind::darcy);
  cfg.darcy_high = cfg.darcy_low = 1.0;
  const FieldSample d = darcy_from_field(Field::Constant(16, 16, 1.0), cfg);
  const auto sys = helmholtz_system(16, 16, 0.0);
  const Eigen::VectorXd direct = dense(sys).partialPivLu().solve(Eigen::VectorXd::Ones(sys.unknowns()));
  CHECK((sys.interior(d.channel(1)) - direct).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(dense(darcy_system(Field::Ones(16, 16))).isApprox(dense(sys), 1e-14));
}

TEST_CASE("darcy thresholds and boundary") {
  PdeConfig cfg = PdeConfig::defaults(PdeKind::darcy);
  const FieldSample c = darcy_from_field(Field::Constant(16, 16, 0.5), cfg);
  CHECK((c.channel(0).array() == 12.0).all());
  for (int i = 0; i < 5; ++i) {
    const FieldSample s = generate(PdeKind::darcy, cfg, {1, "data", static_cast<std::uint64_t>(i)});
    const Field a = s.channel(0), u = s.channel(1);
    CHECK(((a.array() == 3.0) || (a.array() == 12.0)).all());
    CHECK(u.row(0).isZero(0.0));
    CHECK(u.row(15).isZero(0.0));
    CHECK(u.col(0).isZero(0.0));
    CHECK(u.col(15).isZero(0.0));
  }
}

TEST_CASE("poisson with zero forcing is zero") {
  const FieldSample s = poisson_from_forcing(Field::Zero(16, 16), PdeConfig::defaults(PdeKind::poisson));
  CHECK(s.channel(1).isZero(0.0));
}

TEST_CASE("burgers: constants are exact and the mean is conserved") {
  PdeConfig cfg = PdeConfig::defaults(PdeKind::burgers);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(64, 0.7);
  CHECK((spectral_step_burgers(c, 0.01, cfg) - c).cwiseAbs().maxCoeff() < 1e-13);

  auto g = derive_seed({2, "burgers", 0});
  Eigen::VectorXd u = grf_sample(cfg.grf_for(PdeKind::burgers), g).row(0).transpose();
  for (int s = 0; s < 20; ++s) {
    const Eigen::VectorXd next = spectral_step_burgers(u, 1e-3, cfg);
    CHECK(std::abs(next.mean() - u.mean()) < 1e-10);
    u = next;
  }
}

TEST_CASE("burgers pure diffusion decays modes by the exact factor") {
  PdeConfig cfg = PdeConfig::defaults(PdeKind::burgers);
  cfg.advection = false;
  const Index n = 64;
  const double dt = 0.05;
  for (int j = 1; j <= 5; ++j) {
    Eigen::VectorXd u(n);
    for (Index i = 0; i < n; ++i) u[i] = std::cos(2 * kPi * j * static_cast<double>(i) / n);
    const Eigen::VectorXd next = spectral_step_burgers(u, dt, cfg);
    const double factor = std::exp(-cfg.burgers_viscosity * std::pow(2 * kPi * j, 2) * dt);
    CHECK((next - factor * u).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("burgers in the heat-equation regime") {
  PdeConfig cfg = PdeConfig::defaults(PdeKind::burgers);
  cfg.burgers_viscosity = 0.02;
  cfg.burgers_horizon = 0.5;
  const Index n = 64;
  Eigen::VectorXd u0(n);
  for (Index i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / n;
    u0[i] = 1e-6 * (std::sin(2 * kPi * x) + std::cos(4 * kPi * x) + std::sin(6 * kPi * x));
  }
  const FieldSample s = burgers_from_initial(u0, cfg);
  const Dft d(n);
  const Eigen::VectorXcd h0 = d.forward(u0);
  const Eigen::VectorXcd ht = d.forward(s.channel(0).row(cfg.height - 1).transpose());
  for (int j = 1; j <= 3; ++j) {
    const double expect = std::exp(-cfg.burgers_viscosity * std::pow(2 * kPi * j, 2) * cfg.burgers_horizon);
    CHECK(std::abs(std::abs(ht[j]) / std::abs(h0[j]) / expect - 1.0) < 0.05);
  }
  CHECK(s.channel(0).row(0).transpose() == u0);
}

TEST_CASE("navier-stokes step properties") {
  PdeConfig cfg = PdeConfig::defaults(PdeKind::navier_stokes);
  const Index n = 32;
  CHECK(spectral_step_ns(Field::Zero(n, n), cfg, Field::Zero(n, n)).isZero(0.0));

  cfg.advection = false;
  const double dt = cfg.ns_horizon / cfg.ns_steps;
  Field w(n, n);
  const int kx = 3, ky = 2;
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) w(y, x) = std::cos(2 * kPi * (kx * x + ky * y) / static_cast<double>(n));
  const double k2 = std::pow(2 * kPi, 2) * (kx * kx + ky * ky);
  const double factor = (1 - 0.5 * dt * cfg.ns_viscosity * k2) / (1 + 0.5 * dt * cfg.ns_viscosity * k2);
  CHECK((spectral_step_ns(w, cfg, Field::Zero(n, n)) - factor * w).cwiseAbs().maxCoeff() < 1e-12);

  cfg.advection = true;
  auto g = derive_seed({4, "ns", 0});
  Field om = grf_sample(cfg.grf_for(PdeKind::navier_stokes), g) + Field::Constant(n, n, 0.3);
  const Field q = ns_forcing(n, cfg.ns_forcing_amplitude);
  CHECK(std::abs(q.mean()) < 1e-14);
  for (int s = 0; s < 5; ++s) {
    const Field next = spectral_step_ns(om, cfg, q);
    CHECK(std::abs(next.mean() - om.mean()) < 1e-12);
    om = next;
  }
  CHECK_THROWS_AS(spectral_step_ns(Field::Zero(24, 24), cfg), ContractViolation);
}

TEST_CASE("generation is reproducible and writes identical files") {
  const auto dir = std::filesystem::temp_directory_path() / "pi_test_data";
  std::filesystem::create_directories(dir);
  for (auto kind : {PdeKind::poisson, PdeKind::navier_stokes, PdeKind::burgers}) {
    PdeConfig cfg = PdeConfig::defaults(kind);
    if (kind != PdeKind::poisson) cfg.height = cfg.width = 16;
    Dataset a{kind, 5, 0, generate_dataset(kind, cfg, {5, "data", 0}, 3)};
    Dataset b{kind, 5, 0, generate_dataset(kind, cfg, {5, "data", 0}, 3)};
    CHECK(a.samples[0].channels.shape == Shape{channel_count(kind), cfg.height, cfg.width});
    write_dataset(dir / "a.bin", a);
    write_dataset(dir / "b.bin", b);
    std::ifstream fa(dir / "a.bin", std::ios::binary), fb(dir / "b.bin", std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(sa == sb);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset round trip and fault injection") {
  const auto dir = std::filesystem::temp_directory_path() / "pi_test_io";
  std::filesystem::create_directories(dir);
  const auto path = dir / "d.bin";
  const PdeConfig cfg = PdeConfig::defaults(PdeKind::darcy);
  Dataset d{PdeKind::darcy, 11, 0, generate_dataset(PdeKind::darcy, cfg, {11, "data", 0}, 4)};
  write_dataset(path, d);
  const Dataset r = read_dataset(path);
  REQUIRE(r.samples.size() == 4);
  CHECK(r.seed == 11);
  for (std::size_t i = 0; i < 4; ++i) {
    const Eigen::ArrayXd expect = d.samples[i].channels.data.cast<float>().cast<double>();
    CHECK((r.samples[i].channels.data == expect).all());
  }

  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  const std::size_t header_len = bytes.find('\n');
  int rejected = 0;
  for (std::size_t pos = 0; pos < header_len; ++pos) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x01);
    std::ofstream(path, std::ios::binary) << bad;
    try {
      read_dataset(path);
    } catch (const FormatError&) {
      ++rejected;
    }
  }
  CHECK(rejected == static_cast<int>(header_len));

  std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  CHECK_THROWS_AS(read_dataset(path), FormatError);
  std::ofstream(path, std::ios::binary) << bytes << "xxxx";
  CHECK_THROWS_AS(read_dataset(path), FormatError);
  CHECK_THROWS_AS(read_dataset(dir / "missing.bin"), DependencyError);
  std::filesystem::remove_all(dir);
}
