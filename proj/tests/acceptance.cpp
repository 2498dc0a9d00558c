// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance [--work DIR] [--fresh] [c1 c2 ...]
// Trained artifacts live in a run directory under DIR and are reused when present.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "physinstruct/harness.hpp"

using namespace physinstruct;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

fs::path g_work = "acceptance-work";

// ---- run directories driven through the command layer ----

Invocation inv(const std::string& cmd, const fs::path& out, std::vector<std::pair<std::string, std::string>> ov = {},
               std::string tag = "") {
  Invocation i;
  i.command = cmd;
  i.out = out;
  i.overrides = std::move(ov);
  i.tag = std::move(tag);
  return i;
}

void once(const fs::path& artifact, const Invocation& i) {
  if (fs::exists(artifact)) return;
  const auto t0 = std::chrono::steady_clock::now();
  run_command(i);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "  [" << i.out.filename().string() << "] " << i.command << (i.tag.empty() ? "" : " --tag " + i.tag)
            << (i.model == "teacher" ? " --model teacher" : "") << " " << fmt(s) << "s\n";
}

fs::path bench_dir(PdeKind kind) {
  const fs::path dir = g_work / std::string(to_string(kind));
  if (!fs::exists(dir / "config.json")) {
    fs::create_directories(dir);
    json cfg = to_json(default_run_config());
    cfg["benchmark"] = std::string(to_string(kind));
    const fs::path file = g_work / (std::string(to_string(kind)) + "-config.json");
    std::ofstream(file) << cfg.dump(2);
    Invocation i = inv("gen-data", dir);
    i.config_file = file;
    run_command(i);
  }
  RunPaths p{dir};
  once(p.teacher(), inv("train-teacher", dir));
  return dir;
}

// student tags of the poisson ablations
const char* kNoPhys = "nophys";
const char* kLate = "late";

fs::path student(PdeKind kind, const std::string& tag = "") {
  const fs::path dir = bench_dir(kind);
  RunPaths p{dir};
  std::vector<std::pair<std::string, std::string>> ov;
  if (tag == kNoPhys) ov.push_back({"distill.lambda_phys", "0"});
  if (tag == kLate) {
    const Index half = default_run_config().distill.steps / 2;
    ov.push_back({"distill.guidance_start", std::to_string(half)});
  }
  once(p.student(tag), inv("distill", dir, ov, tag));
  return dir;
}

EvalRow student_row(PdeKind kind, const std::string& tag, Index k) {
  const fs::path dir = student(kind, tag);
  const std::string method = tag.empty() ? "student" : "student-" + tag;
  const fs::path f = dir / "eval" / (method + "-" + std::to_string(k) + ".json");
  once(f, inv("eval", dir, {}, tag));
  return eval_row_from_json(json::parse(std::ifstream(f)));
}

EvalRow teacher_row(PdeKind kind, Index steps) {
  const fs::path dir = bench_dir(kind);
  const fs::path f = dir / "eval" / ("teacher-" + std::to_string(steps) + ".json");
  Invocation i = inv("eval", dir);
  i.model = "teacher";
  i.steps = steps;
  once(f, i);
  return eval_row_from_json(json::parse(std::ifstream(f)));
}

// ---- criteria ----

Outcome residual_zero() {
  const PdeKind kinds[] = {PdeKind::poisson, PdeKind::helmholtz, PdeKind::darcy};
  Outcome o{true, ""};
  for (PdeKind k : kinds) {
    const PdeConfig cfg = PdeConfig::defaults(k);
    const auto data = generate_dataset(k, cfg, {11, "acceptance-data", 0}, 500);
    const double r = rms_pde_error(ResidualOperator::make(k, cfg), data);
    o.pass = o.pass && r <= 1e-6;
    o.detail += std::string(to_string(k)) + "=" + fmt(r) + " ";
  }
  o.detail += "(<= 1e-6)";
  return o;
}

DenoiserNet poisson_net(const std::vector<FieldSample>& data, std::uint64_t seed) {
  const Tensor b = to_batch(data);
  return DenoiserNet::create(NetArch{}, 1.0, Normalizer::fit(b), {seed, "acceptance-net", 0});
}

Outcome gradient_identities() {
  const GradCheckOptions opts{1e-4, 64, 5};
  const PdeConfig cfg = PdeConfig::defaults(PdeKind::poisson);
  const auto op = ResidualOperator::make(PdeKind::poisson, cfg);
  const auto data = generate_dataset(PdeKind::poisson, cfg, {12, "acceptance-data", 0}, 4);
  const DenoiserNet net = poisson_net(data, 1);

  Generator g = derive_seed({12, "acceptance-grad", 0});
  const Tensor x0 = net.norm.to_normalized(to_batch(data));
  const DsmDraw draw = draw_dsm(g, x0.shape, SigmaLaw{});
  const double e_dsm = grad_check(
      [&](Tape&, const BoundParams& bp) { return dsm_loss_var(net, bp, x0, draw); }, net.params, opts);

  DistillConfig dc;
  dc.batch_size = 4;
  const StudentGenerator gen = StudentGenerator::from_teacher(net, dc);
  GeneratorDraw gd = draw_generator_inputs(g, gen, dc, cfg.height, cfg.width);
  gd.k = 2;
  // aux = teacher: the score difference vanishes and only lambda R(g(z)) is left
  const double e_phys = grad_check(
      [&](Tape&, const BoundParams& bp) { return generator_surrogate(gen, bp, net, net, op, gd, 5e-3); },
      gen.net.params, opts);

  ControlBranch br = ControlBranch::create(gen, TaskKind::forward, PdeKind::poisson, {12, "branch", 0});
  for (const auto& name : br.params.names()) br.params[name].data += 0.05 * standard_normal(g, br.params[name].shape).data;
  std::vector<ConditionPair> pairs;
  for (Index i = 0; i < 4; ++i) pairs.push_back(build_condition(TaskKind::forward, data[i], {12, "obs", std::uint64_t(i)}));
  const Tensor z = draw_latent(g, 4, 2, cfg.height, cfg.width, gen.sigma_init);
  const double e_cond = grad_check(
      [&](Tape& tape, const BoundParams& bp) {
        BoundParams frozen(tape, gen.net.params, false);
        return conditional_objective(gen, frozen, br, bp, op, pairs, z, 5e-3);
      },
      br.params, opts);

  return {e_dsm < 1e-4 && e_phys < 1e-4 && e_cond < 1e-4,
          "dsm=" + fmt(e_dsm) + " physics=" + fmt(e_phys) + " conditional=" + fmt(e_cond) + " (< 1e-4, fd step 1e-4)"};
}

Outcome teacher_score() {
  const double sd = 1.0;
  Generator g = derive_seed({13, "acceptance-gauss", 0});
  Tensor data = standard_normal(g, Shape{2048, 1, 8, 8});
  data.data *= sd;
  TrainConfig tc;
  tc.steps = 4000;
  tc.batch_size = 32;
  tc.optimizer.step_size = 2e-3;
  tc.normalize = false;
  tc.sigma_data = sd;
  tc.seed = 13;
  const DenoiserNet net = train_teacher(data, NetArch{1, {16, 32, 32}}, tc);

  Outcome o{true, ""};
  for (double sigma : {0.5, 1.0, 2.0}) {
    Tensor x = standard_normal(g, Shape{64, 1, 8, 8});
    x.data *= std::sqrt(sigma * sigma + sd * sd);
    const Tensor s = score_from_denoiser(net, x, sigma);
    const Eigen::ArrayXd exact = -x.data / (sigma * sigma + sd * sd);
    const double rel = std::sqrt((s.data - exact).square().sum() / exact.square().sum());
    o.pass = o.pass && rel <= 0.10;
    o.detail += "sigma " + fmt(sigma) + ": " + fmt(rel) + " ";
  }
  o.detail += "(relative rms <= 0.10, " + std::to_string(tc.steps) + " steps)";
  return o;
}

Outcome sampler_order() {
  // data N(0, s^2): D(x; sigma) = x s^2 / (s^2 + sigma^2), exact flow x s / sqrt(s^2 + sigma^2)
  const double s = 1.0, smax = 1.5, x0 = 3.0;
  auto err = [&](Index n) {
    const auto sched = sigma_schedule(n, 0.002, smax);
    TensorDenoiser d = [&](const Tensor& x, double sg) {
      Tensor out = x;
      out.data *= s * s / (s * s + sg * sg);
      return out;
    };
    const Tensor out = sample(d, sched, Tensor(Shape{1, 1, 1, 1}, {x0}), SamplerMethod::heun);
    return std::abs(out.data[0] - x0 * s / std::sqrt(s * s + smax * smax));
  };
  const double ratio = err(8) / err(16);
  return {ratio >= 3.2 && ratio <= 4.8, "error(8)/error(16) = " + fmt(ratio) + " (in [3.2, 4.8])"};
}

Outcome guidance_ablation() {
  const double with = student_row(PdeKind::poisson, "", 1).rms_pde_error;
  const double without = student_row(PdeKind::poisson, kNoPhys, 1).rms_pde_error;
  return {with <= 0.5 * without,
          "one-step rms " + fmt(with) + " vs " + fmt(without) + " without physics, ratio " + fmt(with / without) +
              " (<= 0.5)"};
}

Outcome step_monotonicity() {
  Outcome o{true, ""};
  bool strong = false;
  for (PdeKind k : {PdeKind::poisson, PdeKind::darcy}) {
    const double r1 = student_row(k, "", 1).rms_pde_error, r4 = student_row(k, "", 4).rms_pde_error;
    o.pass = o.pass && r4 <= r1;
    strong = strong || r4 <= 0.8 * r1;
    o.detail += std::string(to_string(k)) + " k1=" + fmt(r1) + " k4=" + fmt(r4) + " ";
  }
  o.pass = o.pass && strong;
  o.detail += "(k4 <= k1 on both, k4 <= 0.8 k1 on one)";
  return o;
}

Outcome beats_teacher() {
  const double s4 = student_row(PdeKind::poisson, "", 4).rms_pde_error;
  const double t4 = teacher_row(PdeKind::poisson, 4).rms_pde_error;
  return {s4 <= 0.5 * t4, "student k4 rms " + fmt(s4) + " vs 4-step teacher " + fmt(t4) + " (<= 0.5x)"};
}

Outcome distribution_metrics() {
  const EvalRow s = student_row(PdeKind::poisson, "", 4);
  const EvalRow t4 = teacher_row(PdeKind::poisson, 4);
  const EvalRow t100 = teacher_row(PdeKind::poisson, 100);
  const bool swd_ok = s.swd <= 0.9 * t4.swd && s.swd <= 3.0 * t100.swd;
  const bool mmd_ok = s.sqrt_mmd2 <= 0.9 * t4.sqrt_mmd2 && s.sqrt_mmd2 <= 3.0 * t100.sqrt_mmd2;
  return {swd_ok && mmd_ok, "swd student " + fmt(s.swd) + " teacher4 " + fmt(t4.swd) + " teacher100 " + fmt(t100.swd) +
                                "; mmd student " + fmt(s.sqrt_mmd2) + " teacher4 " + fmt(t4.sqrt_mmd2) +
                                " teacher100 " + fmt(t100.sqrt_mmd2) + " (<= 0.9x teacher4, <= 3x teacher100)"};
}

Outcome late_guidance() {
  const double d = student_row(PdeKind::poisson, "", 1).rms_pde_error;
  const double l = student_row(PdeKind::poisson, kLate, 1).rms_pde_error;
  const double n = student_row(PdeKind::poisson, kNoPhys, 1).rms_pde_error;
  return {d <= l && l <= n, "default " + fmt(d) + " <= late " + fmt(l) + " <= without " + fmt(n)};
}

Outcome zero_init_identity() {
  const PdeConfig cfg = PdeConfig::defaults(PdeKind::poisson);
  const auto data = generate_dataset(PdeKind::poisson, cfg, {14, "acceptance-data", 0}, 8);
  const StudentGenerator gen = StudentGenerator::from_teacher(poisson_net(data, 2), DistillConfig{});
  Generator g = derive_seed({14, "acceptance-zy", 0});
  std::size_t identical = 0, total = 0;
  for (TaskKind task : {TaskKind::forward, TaskKind::inverse, TaskKind::reconstruct}) {
    const ControlBranch br = ControlBranch::create(gen, task, PdeKind::poisson, {14, "branch", 0});
    for (int i = 0; i < 16; ++i) {
      Condition c;
      c.task = task;
      c.y = standard_normal(g, Shape{br.y_channels, cfg.height, cfg.width});
      if (task == TaskKind::reconstruct) {
        for (Index j = 0; j < cfg.height * cfg.width; ++j) c.y.data[2 * cfg.height * cfg.width + j] = g.below(2);
      }
      c.mask = Tensor::constant(Shape{2, cfg.height, cfg.width}, 1.0);
      const Tensor z = draw_latent(g, 1, 2, cfg.height, cfg.width, gen.sigma_init);
      const FieldSample a = conditional_generate(gen, br, c, z);
      const FieldSample b = generate_samples(gen, PdeKind::poisson, z, 1).front();
      identical += (a.channels.data == b.channels.data).all() ? 1 : 0;
      ++total;
    }
  }
  return {identical == total, std::to_string(identical) + "/" + std::to_string(total) +
                                  " (z, y) draws bit-identical to the backbone over 3 tasks"};
}

Outcome conditional_signal() {
  const fs::path dir = student(PdeKind::poisson);
  RunPaths p{dir};
  once(p.branch("forward"), inv("cond-train", dir));
  const fs::path f = dir / "eval" / "cond-forward.json";
  once(f, inv("cond-eval", dir));
  const json j = json::parse(std::ifstream(f));
  const double rel = j["trained"]["relative_error"], rel0 = j["untrained"]["relative_error"];
  const double rms = j["trained"]["rms_pde_error"];
  const double base = student_row(PdeKind::poisson, "", 1).rms_pde_error;
  return {rel <= 0.5 * rel0 && rms <= base,
          "relative error " + fmt(rel) + " vs zero branch " + fmt(rel0) + " (<= 0.5x); rms " + fmt(rms) +
              " vs unconditional " + fmt(base) + " on " + std::to_string(j["trained"]["pairs"].get<int>()) +
              " pairs"};
}

Outcome metric_units() {
  const SampleCloud a = SampleCloud::Constant(1, 1, 0.0), b = SampleCloud::Constant(1, 1, 2.0);
  const double w = swd(a, b, 16, {15, "swd", 0});
  SampleCloud x(1, 1), y(1, 1);
  x << 0.0;
  y << 1.0;
  const double bw[] = {1.0};
  const double m = mmd(x, y, bw);
  const double m_exact = std::sqrt(2.0 - 2.0 * std::exp(-0.5));
  SampleCloud pts(3, 1);
  pts << 0.0, 1.0, 3.0;
  const double med = median_pairwise_distance(pts);
  const bool ok = std::abs(w - 2.0) <= 1e-12 && std::abs(m - m_exact) <= 1e-12 && med == 2.0;
  return {ok, "swd=" + fmt(w) + " mmd=" + fmt(m) + " median=" + fmt(med)};
}

struct Criterion {
  const char* id;
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"c1", "residual zero on generated data", residual_zero},
    {"c2", "gradient identities", gradient_identities},
    {"c3", "teacher score on gaussian data", teacher_score},
    {"c4", "heun second-order convergence", sampler_order},
    {"c5", "physics term ablation", guidance_ablation},
    {"c6", "step monotonicity", step_monotonicity},
    {"c7", "few-step student vs few-step teacher", beats_teacher},
    {"c8", "distribution metrics", distribution_metrics},
    {"c9", "late physics ordering", late_guidance},
    {"c10", "conditional zero-init identity", zero_init_identity},
    {"c11", "conditional learning signal", conditional_signal},
    {"c12", "metric unit values", metric_units},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only;
  bool fresh = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) g_work = argv[++i];
    else if (a == "--fresh") fresh = true;
    else only.insert(a);
  }
  if (fresh) fs::remove_all(g_work);
  fs::create_directories(g_work);

  int failed = 0;
  for (const auto& c : kCriteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += o.pass ? 0 : 1;
    std::printf("%s %-4s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
