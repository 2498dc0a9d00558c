#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "physinstruct/conditional.hpp"
#include "physinstruct/errors.hpp"

using namespace physinstruct;

namespace {

const NetArch kSmall{2, {4, 4, 4}};

PdeConfig poisson_cfg() {
  PdeConfig pc = PdeConfig::defaults(PdeKind::poisson);
  pc.height = pc.width = 8;
  return pc;
}

StudentGenerator backbone(std::uint64_t seed = 1, const NetArch& arch = kSmall) {
  const auto data = generate_dataset(PdeKind::poisson, poisson_cfg(), {99, "norm", 0}, 16);
  const Normalizer norm = Normalizer::fit(to_batch(data));
  auto net = DenoiserNet::create(arch, 1.0, norm, {seed, "net", 0});
  return StudentGenerator::from_teacher(net, DistillConfig{});
}

std::vector<ConditionPair> pairs(TaskKind task, Index n, std::uint64_t seed) {
  const auto pc = poisson_cfg();
  std::vector<ConditionPair> out;
  for (Index i = 0; i < n; ++i) {
    const auto s = generate(PdeKind::poisson, pc, {seed, "data", static_cast<std::uint64_t>(i)});
    out.push_back(build_condition(task, s, {seed, "obs", static_cast<std::uint64_t>(i)}, 0.25));
  }
  return out;
}

}  // namespace

TEST_CASE("building conditions") {
  const auto pc = poisson_cfg();
  const auto s = generate(PdeKind::poisson, pc, {1, "data", 0});
  const auto fwd = build_condition(TaskKind::forward, s, {1, "obs", 0});
  CHECK(fwd.cond.y.shape == Shape({1, 8, 8}));
  CHECK(fwd.cond.observed() == 64);  // every u node, boundary included
  CHECK((fwd.cond.mask.data.head(64) == 0.0).all());
  CHECK((fwd.cond.y.data == s.channels.data.head(64)).all());

  const auto inv = build_condition(TaskKind::inverse, s, {1, "obs", 0});
  CHECK((inv.cond.mask.data.head(64) == 1.0).all());
  CHECK((inv.cond.mask.data.tail(64) == 0.0).all());
  CHECK((inv.cond.y.data == s.channels.data.tail(64)).all());

  const auto rec = build_condition(TaskKind::reconstruct, s, {1, "obs", 0}, 0.25);
  CHECK(rec.cond.y.shape == Shape({3, 8, 8}));
  CHECK(rec.cond.observed() == 2 * 16);
  const auto full = build_condition(TaskKind::reconstruct, s, {1, "obs", 0}, 1.0);
  CHECK((full.cond.mask.data == 1.0).all());
  CHECK_THROWS_AS(build_condition(TaskKind::reconstruct, s, {1, "obs", 0}, 0.0), ContractViolation);

  FieldSample b = make_sample(PdeKind::burgers, 64, 128);
  const auto sensors = build_condition(TaskKind::reconstruct, b, {2, "obs", 0}, 5.0 / 128.0);
  CHECK(sensors.cond.observed() == 5 * 64);
  CHECK(static_cast<double>(sensors.cond.observed()) / (64.0 * 128.0) == doctest::Approx(0.039).epsilon(0.01));
  // whole columns
  for (Index x = 0; x < 128; ++x) {
    const double top = sensors.cond.mask.data[x];
    for (Index t = 1; t < 64; ++t) CHECK(sensors.cond.mask.data[t * 128 + x] == top);
  }
  CHECK_THROWS_AS(build_condition(TaskKind::inverse, b, {2, "obs", 0}), ContractViolation);
  CHECK_THROWS_AS(build_condition(TaskKind::forward, b, {2, "obs", 0}), ContractViolation);
}

TEST_CASE("masked data loss") {
  FieldSample a = make_sample(PdeKind::poisson, 2, 2), b = a;
  Tensor mask(Shape{2, 2, 2});
  mask.data[5] = 1.0;
  b.channels.data[5] = 3.0;
  CHECK(masked_data_loss(a, b, mask) == 9.0);
  CHECK(masked_data_loss(b, b, mask) == 0.0);
  b.channels.data[0] = 100.0;
  CHECK(masked_data_loss(a, b, mask) == 9.0);
  CHECK_THROWS_AS(masked_data_loss(a, b, Tensor(Shape{2, 2, 2})), ContractViolation);
  CHECK_THROWS_AS(masked_data_loss(a, b, Tensor(Shape{1, 2, 2})), ContractViolation);
}

TEST_CASE("fresh branch leaves the backbone output untouched") {
  const auto bb = backbone();
  for (TaskKind task : {TaskKind::forward, TaskKind::inverse, TaskKind::reconstruct}) {
    const auto br = ControlBranch::create(bb, task, PdeKind::poisson, {3, "branch", 0});
    const auto ps = pairs(task, 4, 5);
    auto g = derive_seed({6, "z", 0});
    for (const auto& p : ps) {
      Tensor z = draw_latent(g, 1, 2, 8, 8, bb.sigma_init);
      const FieldSample c = conditional_generate(bb, br, p.cond, z);
      const auto u = generate_samples(bb, PdeKind::poisson, z, 1).front();
      CHECK((c.channels.data == u.channels.data).all());
    }
  }
}

TEST_CASE("y shape is checked") {
  const auto bb = backbone();
  const auto br = ControlBranch::create(bb, TaskKind::forward, PdeKind::poisson, {3, "branch", 0});
  auto p = pairs(TaskKind::forward, 1, 5).front();
  p.cond.y = Tensor(Shape{2, 8, 8});
  Tensor z(Shape{1, 2, 8, 8});
  CHECK_THROWS_AS(conditional_generate(bb, br, p.cond, z), ContractViolation);
  p.cond.y = Tensor(Shape{1, 4, 8});
  CHECK_THROWS_AS(conditional_generate(bb, br, p.cond, z), ContractViolation);
}

TEST_CASE("conditional objective gradient matches finite differences") {
  const auto bb = backbone();
  auto br = ControlBranch::create(bb, TaskKind::forward, PdeKind::poisson, {3, "branch", 0});
  // move off the zero initialization so every block carries a gradient
  auto g = derive_seed({7, "p", 0});
  for (const auto& name : br.params.names()) br.params[name].data += 0.05 * standard_normal(g, br.params[name].shape).data;
  const auto ps = pairs(TaskKind::forward, 2, 8);
  const Tensor z = draw_latent(g, 2, 2, 8, 8, bb.sigma_init);
  const auto op = ResidualOperator::make(PdeKind::poisson, poisson_cfg());
  auto fn = [&](Tape& tape, const BoundParams& bp) {
    BoundParams frozen(tape, bb.net.params, false);
    return conditional_objective(bb, frozen, br, bp, op, ps, z, 5e-3);
  };
  CHECK(grad_check(fn, br.params, {1e-5, 64, 3}) < 1e-4);
  auto phys_only = [&](Tape& tape, const BoundParams& bp) {
    BoundParams frozen(tape, bb.net.params, false);
    Var x = bb.net.norm.to_physical(conditional_generate_var(
        bb, frozen, br, bp, tape.constant(z), condition_batch(bb, br, std::vector<Condition>{ps[0].cond, ps[1].cond})));
    return physics_loss_var(op, x);
  };
  CHECK(grad_check(phys_only, br.params, {1e-5, 64, 4}) < 1e-4);
}

TEST_CASE("training fits a full-supervision toy and keeps the backbone frozen") {
  const auto bb = backbone(1, NetArch{2, {16, 16, 16}});
  const Eigen::ArrayXd before = bb.net.params.flatten();
  const auto ps = pairs(TaskKind::reconstruct, 10, 9);
  std::vector<ConditionPair> full;
  for (const auto& p : ps) full.push_back(build_condition(TaskKind::reconstruct, p.target, {0, "obs", 0}, 1.0));
  const auto op = ResidualOperator::make(PdeKind::poisson, poisson_cfg());
  TrainConfig cfg;
  cfg.steps = 3000;
  cfg.batch_size = 10;
  cfg.optimizer.step_size = 1e-3;
  cfg.log_every = 1;
  std::vector<ConditionalRecord> log;
  const auto br = train_conditional(bb, op, full, 0.0, cfg, &log);
  REQUIRE(log.size() == 3000);
  double tail = 0;
  for (std::size_t i = log.size() - 100; i < log.size(); ++i) tail += log[i].loss / 100.0;
  CHECK(tail * 10.0 <= log.front().loss);
  CHECK((bb.net.params.flatten() == before).all());

  // different y give different outputs; zeroed projections restore the backbone
  Tensor z(Shape{1, 2, 8, 8});
  const auto a = conditional_generate(bb, br, full[0].cond, z), b = conditional_generate(bb, br, full[1].cond, z);
  CHECK(!(a.channels.data == b.channels.data).all());
  auto zeroed = br;
  for (int l = 0; l < 3; ++l) {
    zeroed.params["proj" + std::to_string(l) + ".w"].data.setZero();
    zeroed.params["proj" + std::to_string(l) + ".b"].data.setZero();
  }
  CHECK((conditional_generate(bb, zeroed, full[0].cond, z).channels.data ==
         generate_samples(bb, PdeKind::poisson, z, 1).front().channels.data)
            .all());

  const auto path = std::filesystem::temp_directory_path() / "pi_test_branch.ckpt";
  save_branch(path, br);
  const auto back = load_branch(path);
  std::filesystem::remove(path);
  CHECK(back.task == TaskKind::reconstruct);
  CHECK((conditional_generate(bb, back, full[0].cond, z).channels.data == a.channels.data).all());

  auto bad = full;
  bad[0].target.channels.data[0] = std::nan("");
  CHECK_THROWS_AS(train_conditional(bb, op, bad, 0.0, cfg), TrainingFailure);
}

TEST_CASE("error metrics") {
  FieldSample t = make_sample(PdeKind::darcy, 2, 2), x = t;
  t.channels.data << 3, 12, 12, 3, 1, 2, 2, 1;
  x.channels.data << 4, 11, 6, 9, 1, 2, 2, 3;
  Tensor mask(Shape{2, 2, 2});
  mask.data.head(4).setOnes();
  CHECK(misclassification_rate(x, t, mask, 3, 12) == 0.5);
  CHECK(mean_absolute_error(x, t, mask) == doctest::Approx((1 + 1 + 6 + 6) / 4.0));
  Tensor um(Shape{2, 2, 2});
  um.data.tail(4).setOnes();
  CHECK(relative_error(x, t, um) == doctest::Approx(2.0 / std::sqrt(10.0)));
  CHECK(relative_error(t, t, um) == 0.0);
}
