#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "physinstruct/diffusion.hpp"

namespace physinstruct {

struct DistillConfig {
  Index k_max = 4;
  std::vector<double> k_weights;  // over 1..k_max; empty means uniform
  double sigma_init = 1.5;
  double sigma_min = 0.002;
  double rho = 7.0;
  double lambda_phys = 5e-3;
  Index guidance_start = 0;  // generator updates before the physics term switches on
  Index aux_updates_per_gen = 2;
  Index batch_size = 16;
  Index steps = 1000;  // generator updates
  OptimizerConfig aux_optimizer{OptimizerKind::adam, 3e-4, 0.0, 0.999, 1e-8, 1.0};
  OptimizerConfig gen_optimizer{OptimizerKind::adam, 3e-4, 0.0, 0.999, 1e-8, 1.0};
  SigmaLaw sigma_law{};
  SamplerMethod method = SamplerMethod::euler;
  double epsilon = 0.0;  // feasibility threshold; reported only, no effect on the update
  std::uint64_t seed = 0;
  Index probe_size = 32;
  Index log_every = 10;

  void validate() const;
  /// Normalized categorical weights over 1..k_max.
  std::vector<double> k_distribution() const;
};

/// k+1 levels: sigma_init, the rho-warped interior levels of a (k+1)-point grid from
/// sigma_init to sigma_min, and a final 0.
NoiseSchedule student_schedule(Index k, double sigma_init, double sigma_min = 0.002, double rho = 7.0);

struct StudentGenerator {
  DenoiserNet net;
  SamplerMethod method = SamplerMethod::euler;
  double sigma_init = 1.5;
  double sigma_min = 0.002;
  double rho = 7.0;
  Index k_max = 4;

  static StudentGenerator from_teacher(const DenoiserNet& teacher, const DistillConfig& cfg);
  NoiseSchedule schedule(Index k) const { return student_schedule(k, sigma_init, sigma_min, rho); }
};

/// k sampler steps from z (normalized space, scale sigma_init) recorded on the tape of `bp`.
Var generate_var(const StudentGenerator& gen, const BoundParams& bp, Var z, Index k);
/// Untaped counterpart; returns normalized fields.
Tensor generate(const StudentGenerator& gen, const Tensor& z, Index k);
/// Physical-space samples for a list of latents.
std::vector<FieldSample> generate_samples(const StudentGenerator& gen, PdeKind kind, const Tensor& z, Index k);

/// Random inputs of one generator update.
struct GeneratorDraw {
  Tensor z;
  Index k = 1;
  DsmDraw dsm;
};
GeneratorDraw draw_generator_inputs(Generator& rng, const StudentGenerator& gen, const DistillConfig& cfg,
                                    Index height, Index width);

struct SurrogateTerms {
  double ikl = 0.0;      // w <SG(s_aux - s_teacher), x_t>, batch mean
  double physics = 0.0;  // R(x0), batch mean
};

/// Scalar whose theta-gradient is the estimator of one generator update:
///   mean_n w(sigma_n) <SG{s_aux(x_t) - s_teacher(x_t)}, x_t>  +  lambda_phys R(x0)
/// with x0 = g_theta(z; k) and x_t = x0 + sigma noise, all on the tape of `theta`.
Var generator_surrogate(const StudentGenerator& gen, const BoundParams& theta, const DenoiserNet& aux,
                        const DenoiserNet& teacher, const ResidualOperator& op, const GeneratorDraw& draw,
                        double lambda_phys, SurrogateTerms* terms = nullptr);

/// One DSM update of the auxiliary net on freshly generated (gradient-free) samples.
/// Returns the DSM loss before the update.
double auxiliary_phase(DenoiserNet& aux, Optimizer& opt, const StudentGenerator& gen, const DistillConfig& cfg,
                       Generator& rng, Index height, Index width);

/// One update of the generator. The physics term is included once step >= guidance_start.
SurrogateTerms generator_phase(StudentGenerator& gen, Optimizer& opt, const DenoiserNet& aux, const DenoiserNet& teacher,
                               const ResidualOperator& op, const DistillConfig& cfg, Index step, Generator& rng);

struct DistillRecord {
  Index step = 0;
  double dsm_loss = 0.0;
  double ikl_surrogate = 0.0;
  double physics = 0.0;
  double probe_rms = std::numeric_limits<double>::quiet_NaN();  // one-step rms PDE error on the probe batch
};

struct DistillResult {
  StudentGenerator student;
  DenoiserNet aux;
  std::vector<DistillRecord> log;
};

/// Alternates aux_updates_per_gen auxiliary updates with one generator update for
/// cfg.steps rounds. Needs no training data.
DistillResult distill(const DenoiserNet& teacher, const ResidualOperator& op, const DistillConfig& cfg);

}  // namespace physinstruct
