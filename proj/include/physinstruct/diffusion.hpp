#pragma once

#include <functional>
#include <span>
#include <vector>

#include "physinstruct/network.hpp"
#include "physinstruct/pde_data.hpp"
#include "physinstruct/residuals.hpp"

namespace physinstruct {

/// Decreasing noise levels; levels.back() is 0 for the final sampler step.
struct NoiseSchedule {
  std::vector<double> levels;
  double rho = 7.0;
  double sigma_min = 0.002;
  double sigma_max = 80.0;

  std::size_t steps() const { return levels.size() - 1; }
};

/// level i = (smax^(1/rho) + i/(n-1) (smin^(1/rho) - smax^(1/rho)))^rho, i < n, then 0.
NoiseSchedule sigma_schedule(Index n, double sigma_min = 0.002, double sigma_max = 80.0, double rho = 7.0);

enum class SamplerMethod { euler, heun };
SamplerMethod parse_sampler(std::string_view name);
std::string_view to_string(SamplerMethod m);

/// s(x, sigma) = (D(x; sigma) - x) / sigma^2.
Tensor score_from_denoiser(const DenoiserNet& net, const Tensor& x, double sigma);
/// x_t = x0 + sigma * noise.
Tensor perturb(const Tensor& x0, double sigma, const Tensor& noise);

/// lambda(sigma) = (sigma^2 + sd^2) / (sigma sd)^2.
double dsm_weight(double sigma, double sigma_data);

/// Log-normal training law for sigma.
struct SigmaLaw {
  double p_mean = -1.2;
  double p_std = 1.2;
  double draw(Generator& gen) const;
};

struct TrainConfig {
  Index batch_size = 16;
  Index steps = 2000;
  OptimizerConfig optimizer{};
  SigmaLaw sigma_law{};
  double ema_decay = 0.999;
  std::uint64_t seed = 0;
  bool normalize = true;  // fit per-channel statistics; false keeps data as given
  double sigma_data = 0;  // 0: estimate from the (normalized) data
  Index log_every = 100;
};

struct LossRecord {
  Index step;
  double loss;
};

/// One Monte-Carlo DSM draw: a sigma and a noise tensor per batch item.
struct DsmDraw {
  std::vector<double> sigma;
  Tensor noise;
};
DsmDraw draw_dsm(Generator& gen, const Shape& batch_shape, const SigmaLaw& law);

/// Mean over the batch of lambda(sigma_n) ||D(x0_n + sigma_n noise_n; sigma_n) - x0_n||^2.
Var dsm_loss_var(const DenoiserNet& net, const BoundParams& bp, const Tensor& x0, const DsmDraw& draw);
double dsm_loss(const DenoiserNet& net, const Tensor& x0, const TrainConfig& cfg, Generator& gen);

/// RMS over all entries of a centered (B,C,H,W) batch.
double estimate_sigma_data(const Tensor& batch);

/// Adam/SGD on the DSM loss with a parameter EMA; returns the EMA net. Works in the
/// normalized space of the data (see TrainConfig::normalize).
DenoiserNet train_teacher(const Tensor& data, const NetArch& arch, const TrainConfig& cfg,
                          std::vector<LossRecord>* log = nullptr);
DenoiserNet train_teacher(std::span<const FieldSample> data, const TrainConfig& cfg, const NetArch& arch,
                          std::vector<LossRecord>* log = nullptr);

/// A denoiser on a tape: D(x; sigma) for every batch item at one level.
using VarDenoiser = std::function<Var(Var x, double sigma)>;
using TensorDenoiser = std::function<Tensor(const Tensor& x, double sigma)>;

/// One step from sigma to sigma_next. Heun skips its correction when sigma_next == 0.
Var sampler_step(const VarDenoiser& denoiser, Var x, double sigma, double sigma_next, SamplerMethod method);

Tensor sample(const TensorDenoiser& denoiser, const NoiseSchedule& schedule, const Tensor& z, SamplerMethod method);
Tensor sample(const DenoiserNet& net, const NoiseSchedule& schedule, const Tensor& z, SamplerMethod method);

/// As sample, but over the last `active_fraction` of the steps the denoiser output is
/// replaced by D - gamma grad R(D), with R evaluated on the physical field.
Tensor guided_sample(const DenoiserNet& net, const NoiseSchedule& schedule, const Tensor& z, const ResidualOperator& op,
                     double gamma, double active_fraction, SamplerMethod method = SamplerMethod::heun);

/// Draws `count` samples of z ~ N(0, sigma^2 I) with the net's channel count.
Tensor draw_latent(Generator& gen, Index count, Index channels, Index height, Index width, double sigma);

/// Batch (B,C,H,W) from samples and back.
Tensor to_batch(std::span<const FieldSample> samples);
std::vector<FieldSample> from_batch(PdeKind kind, const Tensor& batch);

}  // namespace physinstruct
