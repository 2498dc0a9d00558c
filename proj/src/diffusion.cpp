#include "physinstruct/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "physinstruct/errors.hpp"

namespace physinstruct {

NoiseSchedule sigma_schedule(Index n, double sigma_min, double sigma_max, double rho) {
  if (n < 2) throw ContractViolation("sigma_schedule: n must be at least 2");
  if (!(sigma_min > 0) || !(sigma_min < sigma_max)) throw ContractViolation("sigma_schedule: need 0 < sigma_min < sigma_max");
  if (!(rho >= 1)) throw ContractViolation("sigma_schedule: rho must be >= 1");
  NoiseSchedule s{{}, rho, sigma_min, sigma_max};
  const double a = std::pow(sigma_max, 1.0 / rho), b = std::pow(sigma_min, 1.0 / rho);
  for (Index i = 0; i < n; ++i) {
    s.levels.push_back(std::pow(a + static_cast<double>(i) / static_cast<double>(n - 1) * (b - a), rho));
  }
  s.levels.front() = sigma_max;
  s.levels[static_cast<std::size_t>(n - 1)] = sigma_min;
  s.levels.push_back(0.0);
  return s;
}

SamplerMethod parse_sampler(std::string_view name) {
  if (name == "euler") return SamplerMethod::euler;
  if (name == "heun") return SamplerMethod::heun;
  throw ContractViolation("unknown sampler '" + std::string(name) + "'");
}

std::string_view to_string(SamplerMethod m) { return m == SamplerMethod::euler ? "euler" : "heun"; }

Tensor score_from_denoiser(const DenoiserNet& net, const Tensor& x, double sigma) {
  const Tensor d = denoise(net, x, sigma);
  return Tensor(x.shape, (d.data - x.data) / (sigma * sigma));
}

Tensor perturb(const Tensor& x0, double sigma, const Tensor& noise) {
  if (!(x0.shape == noise.shape)) throw ContractViolation("perturb: noise shape " + noise.shape.str() + " differs from " + x0.shape.str());
  return Tensor(x0.shape, x0.data + sigma * noise.data);
}

double dsm_weight(double sigma, double sd) { return (sigma * sigma + sd * sd) / (sigma * sd * sigma * sd); }

double SigmaLaw::draw(Generator& gen) const { return std::exp(p_mean + p_std * gen.normal()); }

DsmDraw draw_dsm(Generator& gen, const Shape& s, const SigmaLaw& law) {
  DsmDraw d;
  for (Index n = 0; n < s[0]; ++n) d.sigma.push_back(law.draw(gen));
  d.noise = standard_normal(gen, s);
  return d;
}

Var dsm_loss_var(const DenoiserNet& net, const BoundParams& bp, const Tensor& x0, const DsmDraw& draw) {
  if (x0.shape.rank() != 4 || x0.shape[0] == 0) throw ContractViolation("dsm_loss: empty batch");
  Tape& tape = bp[net.params.names().front()].tape();
  Tensor xt = x0;
  const Index per = x0.numel() / x0.shape[0];
  std::vector<double> w;
  for (Index n = 0; n < x0.shape[0]; ++n) {
    xt.data.segment(n * per, per) += draw.sigma[static_cast<std::size_t>(n)] * draw.noise.data.segment(n * per, per);
    w.push_back(std::sqrt(dsm_weight(draw.sigma[static_cast<std::size_t>(n)], net.sigma_data)));
  }
  Var d = denoise_var(net, bp, tape.constant(xt), draw.sigma);
  Var diff = scale_samples(sub(d, tape.constant(x0)), w);
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(x0.shape[0]));
}

double dsm_loss(const DenoiserNet& net, const Tensor& x0, const TrainConfig& cfg, Generator& gen) {
  Tape tape;
  BoundParams bp(tape, net.params, false);
  return dsm_loss_var(net, bp, x0, draw_dsm(gen, x0.shape, cfg.sigma_law)).value().item();
}

double estimate_sigma_data(const Tensor& batch) {
  if (batch.numel() == 0) throw ContractViolation("estimate_sigma_data: empty batch");
  const Normalizer n = Normalizer::fit(batch);
  Tensor centered = batch;
  const Index plane = batch.height() * batch.width();
  for (Index b = 0; b < batch.batch(); ++b)
    for (Index c = 0; c < batch.channels(); ++c) centered.data.segment(batch.offset(b, c, 0, 0), plane) -= n.mean[c];
  return std::sqrt(centered.data.square().mean());
}

namespace {

Tensor gather(const Tensor& data, const std::vector<Index>& idx) {
  const Index per = data.numel() / data.shape[0];
  Tensor out(data.shape.with_leading(static_cast<Index>(idx.size())));
  for (std::size_t i = 0; i < idx.size(); ++i) out.data.segment(static_cast<Index>(i) * per, per) = data.data.segment(idx[i] * per, per);
  return out;
}

bool finite(const Parameters& p) {
  for (const auto& name : p.names())
    if (!p[name].all_finite()) return false;
  return true;
}

}  // namespace

DenoiserNet train_teacher(const Tensor& data, const NetArch& arch, const TrainConfig& cfg, std::vector<LossRecord>* log) {
  if (data.shape.rank() != 4 || data.shape[0] == 0) throw ContractViolation("train_teacher: empty dataset");
  if (cfg.batch_size < 1 || cfg.steps < 0 || !(cfg.optimizer.step_size > 0)) throw ContractViolation("train_teacher: invalid TrainConfig");
  const Normalizer norm = cfg.normalize ? Normalizer::fit(data) : Normalizer::identity(data.channels());
  const Tensor x = norm.to_normalized(data);
  const double sd = cfg.sigma_data > 0 ? cfg.sigma_data : estimate_sigma_data(x);

  DenoiserNet net = DenoiserNet::create(arch, sd, norm, {cfg.seed, "teacher-init", 0});
  Parameters ema = net.params;
  Optimizer opt(cfg.optimizer);
  Generator gen = derive_seed({cfg.seed, "teacher-train", 0});
  for (Index step = 0; step < cfg.steps; ++step) {
    std::vector<Index> idx;
    for (Index i = 0; i < cfg.batch_size; ++i) idx.push_back(static_cast<Index>(gen.below(static_cast<std::uint64_t>(x.shape[0]))));
    const Tensor x0 = gather(x, idx);
    const DsmDraw draw = draw_dsm(gen, x0.shape, cfg.sigma_law);
    Tape tape;
    BoundParams bp(tape, net.params, true);
    Var loss = dsm_loss_var(net, bp, x0, draw);
    const double lv = loss.value().item();
    if (!std::isfinite(lv)) throw TrainingFailure("train_teacher: non-finite DSM loss", static_cast<std::size_t>(step));
    tape.backward(loss);
    opt.step(net.params, bp.gradients());
    if (!finite(net.params)) throw TrainingFailure("train_teacher: non-finite parameters", static_cast<std::size_t>(step));
    const double decay = std::min(cfg.ema_decay, (1.0 + static_cast<double>(step)) / (10.0 + static_cast<double>(step)));
    ema_update(ema, net.params, decay);
    if (log && (step % std::max<Index>(cfg.log_every, 1) == 0 || step + 1 == cfg.steps)) log->push_back({step, lv});
  }
  net.params = std::move(ema);
  return net;
}

Tensor to_batch(std::span<const FieldSample> samples) {
  if (samples.empty()) throw ContractViolation("to_batch: no samples");
  std::vector<Tensor> items;
  for (const auto& s : samples) items.push_back(s.channels);
  return stack(items);
}

std::vector<FieldSample> from_batch(PdeKind kind, const Tensor& batch) {
  std::vector<FieldSample> out;
  for (Index n = 0; n < batch.shape[0]; ++n) out.push_back({kind, unstack(batch, n)});
  return out;
}

DenoiserNet train_teacher(std::span<const FieldSample> data, const TrainConfig& cfg, const NetArch& arch,
                          std::vector<LossRecord>* log) {
  return train_teacher(to_batch(data), arch, cfg, log);
}

Var sampler_step(const VarDenoiser& denoiser, Var x, double sigma, double sigma_next, SamplerMethod method) {
  if (!(sigma > 0) || sigma_next < 0 || !(sigma_next < sigma)) throw ContractViolation("sampler_step: need sigma > sigma_next >= 0");
  Var d = scale(sub(x, denoiser(x, sigma)), 1.0 / sigma);
  Var next = add(x, scale(d, sigma_next - sigma));
  if (method == SamplerMethod::euler || sigma_next == 0.0) return next;
  Var d2 = scale(sub(next, denoiser(next, sigma_next)), 1.0 / sigma_next);
  return add(x, scale(add(d, d2), 0.5 * (sigma_next - sigma)));
}

Tensor sample(const TensorDenoiser& denoiser, const NoiseSchedule& schedule, const Tensor& z, SamplerMethod method) {
  if (schedule.levels.size() < 2) throw ContractViolation("sample: schedule needs at least 2 levels");
  Tensor x = z;
  for (std::size_t i = 0; i + 1 < schedule.levels.size(); ++i) {
    Tape tape;
    VarDenoiser d = [&](Var v, double s) { return tape.constant(denoiser(v.value(), s)); };
    x = sampler_step(d, tape.constant(x), schedule.levels[i], schedule.levels[i + 1], method).value();
  }
  return x;
}

Tensor sample(const DenoiserNet& net, const NoiseSchedule& schedule, const Tensor& z, SamplerMethod method) {
  return sample([&](const Tensor& x, double s) { return denoise(net, x, s); }, schedule, z, method);
}

Tensor guided_sample(const DenoiserNet& net, const NoiseSchedule& schedule, const Tensor& z, const ResidualOperator& op,
                     double gamma, double active_fraction, SamplerMethod method) {
  if (!(gamma >= 0)) throw ContractViolation("guided_sample: gamma must be >= 0");
  if (!(active_fraction > 0 && active_fraction <= 1)) throw ContractViolation("guided_sample: active_fraction must lie in (0, 1]");
  if (schedule.levels.size() < 2) throw ContractViolation("sample: schedule needs at least 2 levels");
  const std::size_t steps = schedule.steps();
  const auto active = static_cast<std::size_t>(std::ceil(active_fraction * static_cast<double>(steps)));
  const std::size_t first_guided = steps - std::min(active, steps);
  auto plain = [&](const Tensor& x, double s) { return denoise(net, x, s); };
  auto guided = [&](const Tensor& x, double s) {
    Tensor d = denoise(net, x, s);
    if (gamma == 0.0) return d;
    Tape tape;
    Var dv = tape.variable(d);
    // sum over the batch so each item sees the gradient of its own R
    tape.backward(scale(physics_loss_var(op, net.norm.to_physical(dv)), static_cast<double>(d.shape[0])));
    d.data -= gamma * tape.grad(dv).data;
    return d;
  };
  Tensor x = z;
  for (std::size_t i = 0; i < steps; ++i) {
    Tape tape;
    const bool on = i >= first_guided;
    VarDenoiser d = [&](Var v, double s) { return tape.constant(on ? guided(v.value(), s) : plain(v.value(), s)); };
    x = sampler_step(d, tape.constant(x), schedule.levels[i], schedule.levels[i + 1], method).value();
  }
  return x;
}

Tensor draw_latent(Generator& gen, Index count, Index channels, Index height, Index width, double sigma) {
  Tensor z = standard_normal(gen, Shape{count, channels, height, width});
  z.data *= sigma;
  return z;
}

}  // namespace physinstruct
