#include "physinstruct/conditional.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "physinstruct/errors.hpp"

namespace physinstruct {

TaskKind parse_task(std::string_view name) {
  if (name == "forward") return TaskKind::forward;
  if (name == "inverse") return TaskKind::inverse;
  if (name == "reconstruct") return TaskKind::reconstruct;
  throw ContractViolation("unknown task '" + std::string(name) + "'");
}

std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::forward: return "forward";
    case TaskKind::inverse: return "inverse";
    case TaskKind::reconstruct: return "reconstruct";
  }
  return "?";
}

Index Condition::observed() const { return static_cast<Index>(mask.data.sum()); }

Index condition_channels(TaskKind task, PdeKind kind) {
  const Index na = a_channel_count(kind), c = channel_count(kind);
  switch (task) {
    case TaskKind::forward:
    case TaskKind::inverse:
      if (na == 0) throw ContractViolation(std::string(to_string(task)) + " task needs a coefficient channel; " +
                                           std::string(to_string(kind)) + " has none");
      return task == TaskKind::forward ? na : c - na;
    case TaskKind::reconstruct: return c + 1;
  }
  return 0;
}

namespace {

// Source channels of y in sample order (reconstruct: all, mask appended separately).
std::pair<Index, Index> source_range(TaskKind task, PdeKind kind) {
  const Index na = a_channel_count(kind), c = channel_count(kind);
  if (task == TaskKind::forward) return {0, na};
  if (task == TaskKind::inverse) return {na, c};
  return {0, c};
}

// k distinct indices of [0, n), partial Fisher-Yates.
std::vector<Index> choose(Generator& g, Index n, Index k) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    const auto j = i + static_cast<Index>(g.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace

ConditionPair build_condition(TaskKind task, const FieldSample& sample, const SeedKey& obs_key, double obs_fraction) {
  const PdeKind kind = sample.kind;
  const Index cy = condition_channels(task, kind);
  const Index c = sample.channels.shape[0], h = sample.channels.shape[1], w = sample.channels.shape[2];
  const Index plane = h * w;
  Condition cond{task, Tensor(Shape{cy, h, w}), Tensor(Shape{c, h, w})};

  if (task != TaskKind::reconstruct) {
    const auto [b, e] = source_range(task, kind);
    cond.y.data = sample.channels.data.segment(b * plane, (e - b) * plane);
    // supervise the complementary channels
    for (Index ch = 0; ch < c; ++ch)
      if (ch < b || ch >= e) cond.mask.data.segment(ch * plane, plane).setOnes();
    return {std::move(cond), sample};
  }

  if (!(obs_fraction > 0 && obs_fraction <= 1)) throw ContractViolation("build_condition: obs_fraction must lie in (0, 1]");
  Generator g = derive_seed(obs_key);
  Eigen::ArrayXd node(plane);
  node.setZero();
  if (kind == PdeKind::burgers) {
    const Index k = std::max<Index>(1, std::lround(obs_fraction * static_cast<double>(w)));
    for (Index col : choose(g, w, k))
      for (Index y = 0; y < h; ++y) node[y * w + col] = 1.0;
  } else {
    const Index k = std::max<Index>(1, std::lround(obs_fraction * static_cast<double>(plane)));
    for (Index i : choose(g, plane, k)) node[i] = 1.0;
  }
  for (Index ch = 0; ch < c; ++ch) {
    cond.mask.data.segment(ch * plane, plane) = node;
    cond.y.data.segment(ch * plane, plane) = sample.channels.data.segment(ch * plane, plane) * node;
  }
  cond.y.data.segment(c * plane, plane) = node;
  return {std::move(cond), sample};
}

ControlBranch ControlBranch::create(const StudentGenerator& backbone, TaskKind task, PdeKind kind, const SeedKey& key) {
  const NetArch& a = backbone.net.arch;
  if (a.channels != channel_count(kind)) throw ContractViolation("ControlBranch: backbone channels do not match the benchmark");
  ControlBranch br{task, kind, condition_channels(task, kind), {}};
  Generator gen = derive_seed(key);
  const Index w0 = a.widths[0];
  add_conv_params(br.params, "psi0", w0, br.y_channels, 3, 1.0, gen);
  add_conv_params(br.params, "psi1", w0, w0, 3, 1.0, gen);
  add_conv_params(br.params, "zero_in", a.channels, w0, 1, 0.0, gen);
  // hint encoders start as a copy of the backbone encoder
  for (const auto& name : backbone.net.params.names()) {
    const bool enc = name.rfind("conv_in", 0) == 0 || name.rfind("enc", 0) == 0 || name.rfind("emb0", 0) == 0 ||
                     name.rfind("emb1", 0) == 0 || name.rfind("emb2", 0) == 0;
    if (enc) br.params.add("ctl." + name, backbone.net.params[name]);
  }
  for (int l = 0; l < 3; ++l) add_conv_params(br.params, "proj" + std::to_string(l), a.widths[l], a.widths[l], 1, 0.0, gen);
  return br;
}

Tensor condition_batch(const StudentGenerator& backbone, const ControlBranch& branch, std::span<const Condition> conds) {
  if (conds.empty()) throw ContractViolation("conditional: no conditions");
  const auto [b, e] = source_range(branch.task, branch.kind);
  const Normalizer& norm = backbone.net.norm;
  std::vector<Tensor> items;
  for (const auto& c : conds) {
    if (c.task != branch.task) throw ContractViolation("conditional: condition task differs from the branch task");
    if (c.y.shape.rank() != 3 || c.y.shape[0] != branch.y_channels) {
      throw ContractViolation("conditional: y has shape " + c.y.shape.str() + ", expected " +
                              std::to_string(branch.y_channels) + " channels");
    }
    Tensor y = c.y;
    const Index plane = y.shape[1] * y.shape[2];
    for (Index ch = b; ch < e; ++ch) {
      auto seg = y.data.segment((ch - b) * plane, plane);
      seg = (seg - norm.mean[ch]) / norm.scale[ch];
      if (branch.task == TaskKind::reconstruct) seg *= c.y.data.segment((e - b) * plane, plane);
    }
    items.push_back(std::move(y));
  }
  return stack(items);
}

Var conditional_generate_var(const StudentGenerator& backbone, const BoundParams& bb, const ControlBranch& branch,
                             const BoundParams& bp, Var z, const Tensor& y) {
  const Shape& zs = z.shape();
  if (y.shape.rank() != 4 || y.shape[0] != zs[0] || y.shape[1] != branch.y_channels || y.shape[2] != zs[2] ||
      y.shape[3] != zs[3]) {
    throw ContractViolation("conditional_generate: y shape " + y.shape.str() + " does not fit z " + zs.str());
  }
  Tape& tape = z.tape();
  const double sigma = backbone.sigma_init;
  const auto pc = precondition(sigma, backbone.net.sigma_data);
  const std::vector<double> sig(static_cast<std::size_t>(zs[0]), sigma);
  const std::vector<double> c_noise(sig.size(), pc.c_noise);
  Var emb = tape.constant(noise_embedding(c_noise));

  Var h = silu(conv_layer(bp, "psi0", tape.constant(y)));
  h = silu(conv_layer(bp, "psi1", h));
  Var zc = add(z, conv_layer(bp, "zero_in", h));
  const Features f = encode(bp, "ctl.", scale(zc, pc.c_in), emb);
  std::array<std::optional<Var>, 3> inj;
  for (int l = 0; l < 3; ++l) inj[l] = conv_layer(bp, "proj" + std::to_string(l), f.levels[l]);

  VarDenoiser d = [&](Var x, double s) {
    const std::vector<double> sv(sig.size(), s);
    return denoise_var(backbone.net, bb, x, sv, &inj);
  };
  return sampler_step(d, z, sigma, 0.0, backbone.method);
}

std::vector<FieldSample> conditional_generate(const StudentGenerator& backbone, const ControlBranch& branch,
                                              std::span<const Condition> conds, const Tensor& z) {
  const Tensor y = condition_batch(backbone, branch, conds);
  Tape tape;
  BoundParams bb(tape, backbone.net.params, false), bp(tape, branch.params, false);
  const Tensor x = conditional_generate_var(backbone, bb, branch, bp, tape.constant(z), y).value();
  return from_batch(branch.kind, backbone.net.norm.to_physical(x));
}

FieldSample conditional_generate(const StudentGenerator& backbone, const ControlBranch& branch, const Condition& cond,
                                 const Tensor& z) {
  Tensor zb = z;
  if (z.shape.rank() == 3) zb.shape = Shape{1, z.shape[0], z.shape[1], z.shape[2]};
  if (zb.shape.rank() != 4 || zb.shape[0] != 1) throw ContractViolation("conditional_generate: z must hold one sample");
  return conditional_generate(backbone, branch, std::span<const Condition>(&cond, 1), zb).front();
}

double masked_data_loss(const FieldSample& x_hat, const FieldSample& target, const Tensor& mask) {
  if (!(x_hat.channels.shape == target.channels.shape) || !(mask.shape == target.channels.shape)) {
    throw ContractViolation("masked_data_loss: shapes differ");
  }
  const double n = mask.data.sum();
  if (n <= 0) throw ContractViolation("masked_data_loss: empty mask");
  return ((x_hat.channels.data - target.channels.data).square() * mask.data).sum() / n;
}

Var masked_data_loss_var(Var x_hat, const Tensor& target, const Tensor& mask) {
  if (!(x_hat.shape() == target.shape) || !(mask.shape == target.shape)) throw ContractViolation("masked_data_loss: shapes differ");
  const double n = mask.data.sum();
  if (n <= 0) throw ContractViolation("masked_data_loss: empty mask");
  Tensor neg = target;
  neg.data = -neg.data;
  Var d = mul_const(add_const(x_hat, neg), mask);
  return scale(sum(mul(d, d)), 1.0 / n);
}

Var conditional_objective(const StudentGenerator& backbone, const BoundParams& bb, const ControlBranch& branch,
                          const BoundParams& bp, const ResidualOperator& op, std::span<const ConditionPair> pairs,
                          const Tensor& z, double lambda_phys, double* data_term, double* physics_term) {
  std::vector<Condition> conds;
  std::vector<Tensor> targets, masks;
  for (const auto& p : pairs) {
    conds.push_back(p.cond);
    targets.push_back(p.target.channels);
    masks.push_back(p.cond.mask);
  }
  const Tensor y = condition_batch(backbone, branch, conds);
  Tape& tape = bp[branch.params.names().front()].tape();
  Var xn = conditional_generate_var(backbone, bb, branch, bp, tape.constant(z), y);
  // fidelity in the normalized space of the backbone, residual in physical units
  Var data = masked_data_loss_var(xn, backbone.net.norm.to_normalized(stack(targets)), stack(masks));
  Var phys = physics_loss_var(op, backbone.net.norm.to_physical(xn));
  if (data_term) *data_term = data.value().item();
  if (physics_term) *physics_term = phys.value().item();
  return lambda_phys > 0 ? add(data, scale(phys, lambda_phys)) : data;
}

ControlBranch train_conditional(const StudentGenerator& backbone, const ResidualOperator& op,
                                std::span<const ConditionPair> pairs, double lambda_phys, const TrainConfig& cfg,
                                std::vector<ConditionalRecord>* log) {
  if (pairs.empty()) throw ContractViolation("train_conditional: no pairs");
  if (cfg.batch_size < 1 || cfg.steps < 0) throw ContractViolation("train_conditional: invalid TrainConfig");
  if (!(lambda_phys >= 0)) throw ContractViolation("train_conditional: lambda_phys must be >= 0");
  const TaskKind task = pairs.front().cond.task;
  const PdeKind kind = pairs.front().target.kind;
  ControlBranch branch = ControlBranch::create(backbone, task, kind, {cfg.seed, "branch-init", 0});
  Optimizer opt(cfg.optimizer);
  Generator rng = derive_seed({cfg.seed, "branch-train", 0});
  const Index c = backbone.net.arch.channels, h = pairs.front().target.height(), w = pairs.front().target.width();
  for (Index step = 0; step < cfg.steps; ++step) {
    std::vector<ConditionPair> batch;
    for (Index i = 0; i < cfg.batch_size; ++i) batch.push_back(pairs[rng.below(pairs.size())]);
    const Tensor z = draw_latent(rng, cfg.batch_size, c, h, w, backbone.sigma_init);
    Tape tape;
    BoundParams bb(tape, backbone.net.params, false), bp(tape, branch.params, true);
    double data = 0, phys = 0;
    Var loss = conditional_objective(backbone, bb, branch, bp, op, batch, z, lambda_phys, &data, &phys);
    const double lv = loss.value().item();
    if (!std::isfinite(lv)) throw TrainingFailure("train_conditional: non-finite loss", static_cast<std::size_t>(step));
    tape.backward(loss);
    opt.step(branch.params, bp.gradients());
    if (!branch.params.flatten().isFinite().all()) {
      throw TrainingFailure("train_conditional: non-finite parameters", static_cast<std::size_t>(step));
    }
    if (log && (step % std::max<Index>(cfg.log_every, 1) == 0 || step + 1 == cfg.steps)) log->push_back({step, lv, data, phys});
  }
  return branch;
}

namespace {

void check_same(const FieldSample& a, const FieldSample& b, const Tensor& mask) {
  if (!(a.channels.shape == b.channels.shape) || !(mask.shape == b.channels.shape)) throw ContractViolation("error metric: shapes differ");
  if (mask.data.sum() <= 0) throw ContractViolation("error metric: empty mask");
}

}  // namespace

double relative_error(const FieldSample& x_hat, const FieldSample& target, const Tensor& mask) {
  check_same(x_hat, target, mask);
  const double num = ((x_hat.channels.data - target.channels.data) * mask.data).matrix().norm();
  const double den = (target.channels.data * mask.data).matrix().norm();
  if (den == 0) throw ContractViolation("relative_error: target vanishes on the mask");
  return num / den;
}

double misclassification_rate(const FieldSample& x_hat, const FieldSample& target, const Tensor& mask, double low,
                              double high) {
  check_same(x_hat, target, mask);
  const Index plane = target.height() * target.width();
  const double mid = 0.5 * (low + high);
  Index wrong = 0, total = 0;
  for (Index i = 0; i < plane; ++i) {
    if (mask.data[i] == 0) continue;
    ++total;
    if ((x_hat.channels.data[i] >= mid) != (target.channels.data[i] >= mid)) ++wrong;
  }
  if (total == 0) throw ContractViolation("misclassification_rate: channel 0 is not supervised");
  return static_cast<double>(wrong) / static_cast<double>(total);
}

double mean_absolute_error(const FieldSample& x_hat, const FieldSample& target, const Tensor& mask) {
  check_same(x_hat, target, mask);
  return ((x_hat.channels.data - target.channels.data).abs() * mask.data).sum() / mask.data.sum();
}

ConditionalEval evaluate_conditional(const StudentGenerator& backbone, const ControlBranch& branch,
                                     const ResidualOperator& op, std::span<const ConditionPair> pairs,
                                     const SeedKey& key, const PdeConfig& cfg) {
  if (pairs.empty()) throw ContractViolation("evaluate_conditional: no pairs");
  std::vector<Condition> conds;
  for (const auto& p : pairs) conds.push_back(p.cond);
  const auto& t0 = pairs.front().target;
  Generator g = derive_seed(key);
  const Tensor z = draw_latent(g, static_cast<Index>(pairs.size()), backbone.net.arch.channels, t0.height(), t0.width(),
                               backbone.sigma_init);
  const auto out = conditional_generate(backbone, branch, conds, z);
  const bool classes = branch.kind == PdeKind::darcy && branch.task == TaskKind::inverse;
  ConditionalEval ev;
  ev.count = pairs.size();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    ev.relative_error += relative_error(out[i], p.target, p.cond.mask);
    const double mae = mean_absolute_error(out[i], p.target, p.cond.mask);
    ev.mean_absolute_error += mae;
    ev.absolute_error += classes ? misclassification_rate(out[i], p.target, p.cond.mask, cfg.darcy_low, cfg.darcy_high) : mae;
  }
  const double n = static_cast<double>(pairs.size());
  ev.relative_error /= n;
  ev.absolute_error /= n;
  ev.mean_absolute_error /= n;
  ev.rms_pde_error = rms_pde_error(op, out);
  return ev;
}

void save_branch(const std::filesystem::path& path, const ControlBranch& branch) {
  save_checkpoint(path, branch.params,
                  {{"branch", nlohmann::json{{"task", to_string(branch.task)},
                                             {"kind", to_string(branch.kind)},
                                             {"y_channels", branch.y_channels}}
                                  .dump()}});
}

ControlBranch load_branch(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  ControlBranch br;
  try {
    const auto info = nlohmann::json::parse(ck.meta.at("branch"));
    br.task = parse_task(info.at("task").get<std::string>());
    br.kind = parse_pde_kind(info.at("kind").get<std::string>());
    br.y_channels = info.at("y_channels").get<Index>();
  } catch (const std::exception& e) {
    throw FormatError("checkpoint " + path.string() + " is not a conditional branch: " + e.what());
  }
  br.params = std::move(ck.params);
  return br;
}

}  // namespace physinstruct
