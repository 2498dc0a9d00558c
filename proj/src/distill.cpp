#include "physinstruct/distill.hpp"

#include <cmath>
#include <numeric>

#include "physinstruct/errors.hpp"

namespace physinstruct {

void DistillConfig::validate() const {
  if (k_max < 1) throw ContractViolation("DistillConfig: k_max must be >= 1");
  if (!k_weights.empty()) {
    if (static_cast<Index>(k_weights.size()) != k_max) throw ContractViolation("DistillConfig: k_weights needs k_max entries");
    for (double w : k_weights)
      if (!(w >= 0)) throw ContractViolation("DistillConfig: k_weights must be nonnegative");
    const double s = std::accumulate(k_weights.begin(), k_weights.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-9) throw ContractViolation("DistillConfig: k_weights must sum to 1");
  }
  if (!(sigma_init > 0)) throw ContractViolation("DistillConfig: sigma_init must be positive");
  if (!(sigma_min > 0)) throw ContractViolation("DistillConfig: sigma_min must be positive");
  if (!(lambda_phys >= 0)) throw ContractViolation("DistillConfig: lambda_phys must be >= 0");
  if (guidance_start < 0 || aux_updates_per_gen < 0 || steps < 0) throw ContractViolation("DistillConfig: counts must be >= 0");
  if (batch_size < 1 || probe_size < 1) throw ContractViolation("DistillConfig: batch sizes must be positive");
}

std::vector<double> DistillConfig::k_distribution() const {
  if (k_weights.empty()) return std::vector<double>(static_cast<std::size_t>(k_max), 1.0 / static_cast<double>(k_max));
  return k_weights;
}

NoiseSchedule student_schedule(Index k, double sigma_init, double sigma_min, double rho) {
  if (k < 1) throw ContractViolation("student_schedule: k must be >= 1");
  if (!(sigma_init > sigma_min)) throw ContractViolation("student_schedule: sigma_init must exceed sigma_min");
  NoiseSchedule s = sigma_schedule(k + 1, sigma_min, sigma_init, rho);
  s.levels.pop_back();       // appended 0
  s.levels.back() = 0.0;     // sigma_min slot becomes the terminal level
  return s;
}

StudentGenerator StudentGenerator::from_teacher(const DenoiserNet& teacher, const DistillConfig& cfg) {
  cfg.validate();
  return {teacher, cfg.method, cfg.sigma_init, cfg.sigma_min, cfg.rho, cfg.k_max};
}

Var generate_var(const StudentGenerator& gen, const BoundParams& bp, Var z, Index k) {
  if (k < 1 || k > gen.k_max) {
    throw ContractViolation("generate: k = " + std::to_string(k) + " outside 1.." + std::to_string(gen.k_max));
  }
  const NoiseSchedule s = gen.schedule(k);
  const Index b = z.shape()[0];
  VarDenoiser d = [&](Var x, double sigma) {
    const std::vector<double> sig(static_cast<std::size_t>(b), sigma);
    return denoise_var(gen.net, bp, x, sig);
  };
  Var x = z;
  for (std::size_t i = 0; i + 1 < s.levels.size(); ++i) x = sampler_step(d, x, s.levels[i], s.levels[i + 1], gen.method);
  return x;
}

Tensor generate(const StudentGenerator& gen, const Tensor& z, Index k) {
  Tape tape;
  BoundParams bp(tape, gen.net.params, false);
  return generate_var(gen, bp, tape.constant(z), k).value();
}

std::vector<FieldSample> generate_samples(const StudentGenerator& gen, PdeKind kind, const Tensor& z, Index k) {
  return from_batch(kind, gen.net.norm.to_physical(generate(gen, z, k)));
}

GeneratorDraw draw_generator_inputs(Generator& rng, const StudentGenerator& gen, const DistillConfig& cfg, Index height,
                                    Index width) {
  GeneratorDraw d;
  const auto probs = cfg.k_distribution();
  const double u = rng.uniform();
  double acc = 0.0;
  d.k = gen.k_max;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) {
      d.k = static_cast<Index>(i) + 1;
      break;
    }
  }
  d.z = draw_latent(rng, cfg.batch_size, gen.net.arch.channels, height, width, gen.sigma_init);
  d.dsm = draw_dsm(rng, d.z.shape, cfg.sigma_law);
  return d;
}

Var generator_surrogate(const StudentGenerator& gen, const BoundParams& theta, const DenoiserNet& aux,
                        const DenoiserNet& teacher, const ResidualOperator& op, const GeneratorDraw& draw,
                        double lambda_phys, SurrogateTerms* terms) {
  Tape& tape = theta[gen.net.params.names().front()].tape();
  Var x0 = generate_var(gen, theta, tape.constant(draw.z), draw.k);
  const Index b = draw.z.shape[0], per = draw.z.numel() / b;
  Tensor offset = draw.dsm.noise;
  for (Index n = 0; n < b; ++n) offset.data.segment(n * per, per) *= draw.dsm.sigma[static_cast<std::size_t>(n)];
  Var xt = add_const(x0, offset);

  // v = w(sigma) (s_aux - s_teacher) = (sigma^2 + sd^2) / sd^2 (D_aux - D_teacher), held constant
  Tensor v(xt.shape());
  {
    Tape side;
    BoundParams pa(side, aux.params, false), pt(side, teacher.params, false);
    Var xc = side.constant(xt.value());
    const Tensor da = denoise_var(aux, pa, xc, draw.dsm.sigma).value();
    const Tensor dt = denoise_var(teacher, pt, xc, draw.dsm.sigma).value();
    const double sd2 = teacher.sigma_data * teacher.sigma_data;
    for (Index n = 0; n < b; ++n) {
      const double s = draw.dsm.sigma[static_cast<std::size_t>(n)];
      v.data.segment(n * per, per) = (s * s + sd2) / sd2 * (da.data.segment(n * per, per) - dt.data.segment(n * per, per));
    }
  }
  if (!v.all_finite()) throw ContractViolation("generator_surrogate: non-finite score difference");
  Var ikl = scale(sum(mul_const(xt, v)), 1.0 / static_cast<double>(b * per));
  Var total = ikl;
  double r = 0.0;
  if (lambda_phys > 0.0 || terms) {
    Var phys = physics_loss_var(op, gen.net.norm.to_physical(x0));
    r = phys.value().item();
    if (lambda_phys > 0.0) total = add(ikl, scale(phys, lambda_phys));
  }
  if (terms) *terms = {ikl.value().item(), r};
  return total;
}

double auxiliary_phase(DenoiserNet& aux, Optimizer& opt, const StudentGenerator& gen, const DistillConfig& cfg,
                       Generator& rng, Index height, Index width) {
  const GeneratorDraw d = draw_generator_inputs(rng, gen, cfg, height, width);
  const Tensor x0 = generate(gen, d.z, d.k);  // no tape into theta
  Tape tape;
  BoundParams bp(tape, aux.params, true);
  Var loss = dsm_loss_var(aux, bp, x0, d.dsm);
  const double lv = loss.value().item();
  if (!std::isfinite(lv)) throw ContractViolation("auxiliary_phase: non-finite DSM loss");
  tape.backward(loss);
  opt.step(aux.params, bp.gradients());
  return lv;
}

SurrogateTerms generator_phase(StudentGenerator& gen, Optimizer& opt, const DenoiserNet& aux, const DenoiserNet& teacher,
                               const ResidualOperator& op, const DistillConfig& cfg, Index step, Generator& rng) {
  const GeneratorDraw d = draw_generator_inputs(rng, gen, cfg, op.height, op.width);
  const double lambda = step >= cfg.guidance_start ? cfg.lambda_phys : 0.0;
  Tape tape;
  BoundParams theta(tape, gen.net.params, true);
  SurrogateTerms terms;
  Var obj = generator_surrogate(gen, theta, aux, teacher, op, d, lambda, &terms);
  if (!std::isfinite(terms.ikl) || !std::isfinite(terms.physics)) {
    throw ContractViolation("generator_phase: non-finite surrogate or residual");
  }
  tape.backward(obj);
  opt.step(gen.net.params, theta.gradients());
  return terms;
}

DistillResult distill(const DenoiserNet& teacher, const ResidualOperator& op, const DistillConfig& cfg) {
  cfg.validate();
  DistillResult res{StudentGenerator::from_teacher(teacher, cfg), teacher, {}};
  Optimizer aux_opt(cfg.aux_optimizer), gen_opt(cfg.gen_optimizer);
  Generator rng = derive_seed({cfg.seed, "distill", 0});
  Generator probe_rng = derive_seed({cfg.seed, "distill-probe", 0});
  const Tensor probe = draw_latent(probe_rng, cfg.probe_size, teacher.arch.channels, op.height, op.width, cfg.sigma_init);
  auto probe_rms = [&] { return rms_pde_error(op, teacher.norm.to_physical(generate(res.student, probe, 1))); };

  for (Index step = 0; step < cfg.steps; ++step) {
    DistillRecord rec;
    rec.step = step;
    try {
      for (Index a = 0; a < cfg.aux_updates_per_gen; ++a) {
        rec.dsm_loss = auxiliary_phase(res.aux, aux_opt, res.student, cfg, rng, op.height, op.width);
      }
      const SurrogateTerms t = generator_phase(res.student, gen_opt, res.aux, teacher, op, cfg, step, rng);
      rec.ikl_surrogate = t.ikl;
      rec.physics = t.physics;
    } catch (const ContractViolation& e) {
      throw TrainingFailure(std::string("distill: ") + e.what(), static_cast<std::size_t>(step));
    }
    if (step % std::max<Index>(cfg.log_every, 1) == 0 || step + 1 == cfg.steps) rec.probe_rms = probe_rms();
    res.log.push_back(rec);
  }
  return res;
}

}  // namespace physinstruct
