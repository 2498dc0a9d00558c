#include "physinstruct/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "physinstruct/dataset_io.hpp"
#include "physinstruct/errors.hpp"

namespace physinstruct {

using nlohmann::json;

PdeConfig RunConfig::pde() const {
  PdeConfig c = PdeConfig::defaults(benchmark);
  if (height > 0) c.height = height;
  if (width > 0) c.width = width;
  return c;
}

RunConfig default_run_config() {
  RunConfig c;
  c.teacher.optimizer.step_size = 2e-3;
  c.cond.steps = 1500;
  c.cond.batch_size = 16;
  c.cond.optimizer.step_size = 1e-3;
  c.cond.log_every = 50;
  return c;
}

namespace {

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw FormatError("config: unknown optimizer '" + s + "'");
}

json train_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},
          {"steps", t.steps},
          {"optimizer", optimizer_name(t.optimizer.kind)},
          {"lr", t.optimizer.step_size},
          {"beta1", t.optimizer.beta1},
          {"beta2", t.optimizer.beta2},
          {"max_grad_norm", t.optimizer.max_grad_norm},
          {"ema_decay", t.ema_decay},
          {"normalize", t.normalize},
          {"sigma_data", t.sigma_data},
          {"p_mean", t.sigma_law.p_mean},
          {"p_std", t.sigma_law.p_std},
          {"log_every", t.log_every}};
}

// Reads the keys of `obj` into targets; any other key is an error.
class Reader {
 public:
  Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw FormatError("config: '" + where_ + "' must be an object");
  }
  template <class T>
  Reader& get(const char* key, T& out) {
    seen_.insert(key);
    if (auto it = obj_.find(key); it != obj_.end()) {
      try {
        out = it->get<T>();
      } catch (const json::exception& e) {
        throw FormatError("config: bad value for '" + where_ + "." + key + "': " + e.what());
      }
    }
    return *this;
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }
  void finish() const {
    for (const auto& [k, _] : obj_.items())
      if (!seen_.count(k)) throw FormatError("config: unknown key '" + (where_.empty() ? k : where_ + "." + k) + "'");
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_train(const json& j, const std::string& where, TrainConfig& t) {
  Reader r(j, where);
  std::string opt = optimizer_name(t.optimizer.kind);
  r.get("batch_size", t.batch_size).get("steps", t.steps).get("optimizer", opt).get("lr", t.optimizer.step_size);
  r.get("beta1", t.optimizer.beta1).get("beta2", t.optimizer.beta2).get("ema_decay", t.ema_decay);
  r.get("max_grad_norm", t.optimizer.max_grad_norm);
  r.get("normalize", t.normalize).get("sigma_data", t.sigma_data).get("p_mean", t.sigma_law.p_mean);
  r.get("p_std", t.sigma_law.p_std).get("log_every", t.log_every);
  r.finish();
  t.optimizer.kind = parse_optimizer(opt);
}

}  // namespace

json to_json(const RunConfig& c) {
  const DistillConfig& d = c.distill;
  json cond = train_json(c.cond);
  cond.erase("ema_decay");
  cond.erase("normalize");
  cond.erase("sigma_data");
  cond.erase("p_mean");
  cond.erase("p_std");
  return {
      {"benchmark", to_string(c.benchmark)},
      {"height", c.height},
      {"width", c.width},
      {"train_size", c.train_size},
      {"test_size", c.test_size},
      {"seed", c.seed},
      {"arch", {{"widths", c.arch.widths}}},
      {"teacher", train_json(c.teacher)},
      {"distill",
       {{"k_max", d.k_max},
        {"k_weights", d.k_weights},
        {"sigma_init", d.sigma_init},
        {"sigma_min", d.sigma_min},
        {"rho", d.rho},
        {"lambda_phys", d.lambda_phys},
        {"guidance_start", d.guidance_start},
        {"aux_updates_per_gen", d.aux_updates_per_gen},
        {"batch_size", d.batch_size},
        {"steps", d.steps},
        {"aux_lr", d.aux_optimizer.step_size},
        {"gen_lr", d.gen_optimizer.step_size},
        {"beta1", d.gen_optimizer.beta1},
        {"max_grad_norm", d.gen_optimizer.max_grad_norm},
        {"p_mean", d.sigma_law.p_mean},
        {"p_std", d.sigma_law.p_std},
        {"method", to_string(d.method)},
        {"epsilon", d.epsilon},
        {"probe_size", d.probe_size},
        {"log_every", d.log_every}}},
      {"metrics",
       {{"eval_samples", c.eval_samples},
        {"projections", c.projections},
        {"latency_runs", c.latency_runs},
        {"teacher_reference_steps", c.teacher_reference_steps},
        {"guidance_gamma", c.guidance_gamma},
        {"guidance_fraction", c.guidance_fraction}}},
      {"conditional",
       {{"task", to_string(c.task)},
        {"obs_fraction", c.obs_fraction},
        {"train_pairs", c.cond_train_pairs},
        {"eval_pairs", c.cond_eval_pairs},
        {"lambda_phys", c.cond_lambda_phys},
        {"train", cond}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c = default_run_config();
  Reader top(j, "");
  std::string bench = std::string(to_string(c.benchmark));
  top.get("benchmark", bench).get("height", c.height).get("width", c.width).get("train_size", c.train_size);
  top.get("test_size", c.test_size).get("seed", c.seed);
  if (const json* a = top.sub("arch")) Reader(*a, "arch").get("widths", c.arch.widths).finish();
  if (const json* t = top.sub("teacher")) read_train(*t, "teacher", c.teacher);
  if (const json* dj = top.sub("distill")) {
    DistillConfig& d = c.distill;
    Reader r(*dj, "distill");
    std::string method = std::string(to_string(d.method));
    double beta1 = d.gen_optimizer.beta1, clip = d.gen_optimizer.max_grad_norm;
    r.get("k_max", d.k_max).get("k_weights", d.k_weights).get("sigma_init", d.sigma_init).get("sigma_min", d.sigma_min);
    r.get("rho", d.rho).get("lambda_phys", d.lambda_phys).get("guidance_start", d.guidance_start);
    r.get("aux_updates_per_gen", d.aux_updates_per_gen).get("batch_size", d.batch_size).get("steps", d.steps);
    r.get("aux_lr", d.aux_optimizer.step_size).get("gen_lr", d.gen_optimizer.step_size).get("beta1", beta1);
    r.get("max_grad_norm", clip);
    r.get("p_mean", d.sigma_law.p_mean).get("p_std", d.sigma_law.p_std).get("method", method);
    r.get("epsilon", d.epsilon).get("probe_size", d.probe_size).get("log_every", d.log_every);
    r.finish();
    d.gen_optimizer.beta1 = d.aux_optimizer.beta1 = beta1;
    d.gen_optimizer.max_grad_norm = d.aux_optimizer.max_grad_norm = clip;
    try {
      d.method = parse_sampler(method);
    } catch (const ContractViolation& e) {
      throw FormatError(std::string("config: ") + e.what());
    }
  }
  if (const json* m = top.sub("metrics")) {
    Reader r(*m, "metrics");
    r.get("eval_samples", c.eval_samples).get("projections", c.projections).get("latency_runs", c.latency_runs);
    r.get("teacher_reference_steps", c.teacher_reference_steps).get("guidance_gamma", c.guidance_gamma);
    r.get("guidance_fraction", c.guidance_fraction).finish();
  }
  if (const json* cj = top.sub("conditional")) {
    Reader r(*cj, "conditional");
    std::string task = std::string(to_string(c.task));
    r.get("task", task).get("obs_fraction", c.obs_fraction).get("train_pairs", c.cond_train_pairs);
    r.get("eval_pairs", c.cond_eval_pairs).get("lambda_phys", c.cond_lambda_phys);
    if (const json* t = r.sub("train")) read_train(*t, "conditional.train", c.cond);
    r.finish();
    try {
      c.task = parse_task(task);
    } catch (const ContractViolation& e) {
      throw FormatError(std::string("config: ") + e.what());
    }
  }
  top.finish();
  try {
    c.benchmark = parse_pde_kind(bench);
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.teacher.seed = c.distill.seed = c.cond.seed = c.seed;
  try {
    c.distill.validate();
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

void apply_override(json& j, const std::string& dotted, const std::string& value) {
  if (dotted.empty()) throw FormatError("override: empty key");
  json* node = &j;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw FormatError("override: unknown key '" + dotted + "'");
    node = &(*node)[parts[i]];
  }
  if (!node->is_object() || !node->contains(parts.back())) throw FormatError("override: unknown key '" + dotted + "'");
  json parsed = json::parse(value, nullptr, false);
  (*node)[parts.back()] = parsed.is_discarded() ? json(value) : parsed;
}

std::string config_hash(const json& j) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(j.dump());
  return os.str();
}

double median_latency_ms(const std::function<void()>& once, Index runs) {
  if (runs < 1) throw ContractViolation("median_latency_ms: runs must be positive");
  std::vector<double> t;
  for (Index i = 0; i < runs; ++i) {
    const auto a = std::chrono::steady_clock::now();
    once();
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double, std::milli>(b - a).count());
  }
  std::sort(t.begin(), t.end());
  const std::size_t n = t.size();
  return n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
}

json to_json(const EvalRow& r) {
  return {{"method", r.method},       {"steps", r.steps}, {"rms_pde_error", r.rms_pde_error},
          {"swd", r.swd},             {"sqrt_mmd2", r.sqrt_mmd2}, {"latency_ms", r.latency_ms}};
}

EvalRow eval_row_from_json(const json& j) {
  try {
    return {j.at("method").get<std::string>(), j.at("steps").get<Index>(),   j.at("rms_pde_error").get<double>(),
            j.at("swd").get<double>(),         j.at("sqrt_mmd2").get<double>(), j.at("latency_ms").get<double>()};
  } catch (const json::exception& e) {
    throw FormatError(std::string("eval record: ") + e.what());
  }
}

EvalRow score_samples(const std::string& method, Index steps, const ResidualOperator& op,
                      std::span<const FieldSample> generated, std::span<const FieldSample> real, Index projections,
                      const SeedKey& key) {
  EvalRow row{method, steps};
  row.rms_pde_error = rms_pde_error(op, generated);
  const ChannelStats stats = ChannelStats::from_real(real);
  const SampleCloud p = standardize(generated, stats), q = standardize(real, stats);
  row.swd = swd(p, q, projections, key.child(0));
  row.sqrt_mmd2 = mmd(p, q, auto_bandwidths(q, 500, key.child(1)));
  return row;
}

std::filesystem::path RunPaths::student(const std::string& tag) const {
  return root / (tag.empty() ? "student.ckpt" : "student-" + tag + ".ckpt");
}

std::filesystem::path RunPaths::branch(const std::string& tag) const {
  return root / (tag.empty() ? "branch.ckpt" : "branch-" + tag + ".ckpt");
}

namespace {

json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DependencyError("missing prerequisite artifact: " + p.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("not valid JSON: " + p.string());
  return j;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  out << text;
  if (!out) throw FormatError("cannot write " + p.string());
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DependencyError("missing prerequisite artifact: " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw DependencyError("missing prerequisite artifact: " + p.string());
}

void ensure_new(const std::filesystem::path& p) {
  if (std::filesystem::exists(p)) throw DependencyError("refusing to overwrite existing artifact: " + p.string());
  std::filesystem::create_directories(p.parent_path());
}

}  // namespace

RunConfig resolve_config(const Invocation& inv, json* effective) {
  if (inv.out.empty()) throw ContractViolation("--out is required");
  const RunPaths paths{inv.out};
  json base;
  if (std::filesystem::exists(paths.config())) {
    base = read_json_file(paths.config());
    std::string stored = read_text(paths.config_hash());
    stored.erase(std::remove_if(stored.begin(), stored.end(), ::isspace), stored.end());
    if (stored != config_hash(base)) throw FormatError("config hash mismatch in " + paths.root.string());
    if (!inv.config_file.empty() && read_json_file(inv.config_file) != base) {
      // a given file must describe the same run
      json merged = to_json(default_run_config());
      merged.merge_patch(read_json_file(inv.config_file));
      if (merged != base) throw ContractViolation("run directory " + paths.root.string() + " holds a different config");
    }
  } else {
    base = to_json(default_run_config());
    if (!inv.config_file.empty()) base.merge_patch(read_json_file(inv.config_file));
    for (const auto& [k, v] : inv.overrides) apply_override(base, k, v);
    base = to_json(run_config_from_json(base));
    write_text(paths.config(), base.dump(2) + "\n");
    write_text(paths.config_hash(), config_hash(base) + "\n");
  }
  json eff = base;
  for (const auto& [k, v] : inv.overrides) apply_override(eff, k, v);
  RunConfig cfg = run_config_from_json(eff);
  if (effective) *effective = to_json(cfg);
  return cfg;
}

namespace {

struct Context {
  const Invocation& inv;
  RunConfig cfg;
  json effective;
  RunPaths paths;
  PdeConfig pde;

  void log(json entry) const {
    entry["command"] = inv.command;
    if (!inv.tag.empty()) entry["tag"] = inv.tag;
    std::ofstream out(paths.log(), std::ios::app);
    out << entry.dump() << '\n';
  }
  std::map<std::string, std::string> meta() const {
    return {{"config", effective.dump()}, {"config_hash", config_hash(effective)}, {"command", inv.command}};
  }
  std::string with_tag(const std::string& name) const { return inv.tag.empty() ? name : name + "-" + inv.tag; }
};

std::vector<FieldSample> load_samples(const std::filesystem::path& p, PdeKind kind) {
  require(p);
  Dataset d = read_dataset(p);
  if (d.kind != kind) throw ContractViolation("dataset " + p.string() + " holds " + std::string(to_string(d.kind)));
  return std::move(d.samples);
}

void save_student(const std::filesystem::path& p, const StudentGenerator& s, std::map<std::string, std::string> meta) {
  meta["student"] = json{{"method", to_string(s.method)},
                         {"sigma_init", s.sigma_init},
                         {"sigma_min", s.sigma_min},
                         {"rho", s.rho},
                         {"k_max", s.k_max}}
                        .dump();
  save_net(p, s.net, std::move(meta));
}

StudentGenerator load_student(const std::filesystem::path& p) {
  require(p);
  std::map<std::string, std::string> meta;
  StudentGenerator s;
  s.net = load_net(p, &meta);
  try {
    const json j = json::parse(meta.at("student"));
    s.method = parse_sampler(j.at("method").get<std::string>());
    s.sigma_init = j.at("sigma_init").get<double>();
    s.sigma_min = j.at("sigma_min").get<double>();
    s.rho = j.at("rho").get<double>();
    s.k_max = j.at("k_max").get<Index>();
  } catch (const std::exception& e) {
    throw FormatError("checkpoint " + p.string() + " is not a student: " + e.what());
  }
  return s;
}

DenoiserNet load_teacher(const RunPaths& paths) {
  require(paths.teacher());
  return load_net(paths.teacher());
}

void cmd_gen_data(const Context& c) {
  ensure_new(c.paths.train_data());
  ensure_new(c.paths.test_data());
  const auto t0 = std::chrono::steady_clock::now();
  auto train = generate_dataset(c.cfg.benchmark, c.pde, {c.cfg.seed, "train-data", 0}, c.cfg.train_size);
  auto test = generate_dataset(c.cfg.benchmark, c.pde, {c.cfg.seed, "test-data", 0}, c.cfg.test_size);
  write_dataset(c.paths.train_data(), {c.cfg.benchmark, c.cfg.seed, 0, std::move(train)});
  write_dataset(c.paths.test_data(), {c.cfg.benchmark, c.cfg.seed, 0, std::move(test)});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.log({{"event", "data"}, {"train", c.cfg.train_size}, {"test", c.cfg.test_size}, {"seconds", secs}});
}

void cmd_train_teacher(const Context& c) {
  ensure_new(c.paths.teacher());
  const auto train = load_samples(c.paths.train_data(), c.cfg.benchmark);
  TrainConfig tc = c.cfg.teacher;
  if (c.inv.steps > 0) tc.steps = c.inv.steps;
  std::vector<LossRecord> log;
  const DenoiserNet net = train_teacher(train, tc, c.cfg.arch, &log);
  for (const auto& r : log) c.log({{"event", "teacher_step"}, {"step", r.step}, {"dsm_loss", r.loss}});
  save_net(c.paths.teacher(), net, c.meta());
}

void cmd_distill(const Context& c) {
  const auto target = c.paths.student(c.inv.tag);
  ensure_new(target);
  const DenoiserNet teacher = load_teacher(c.paths);
  DistillConfig dc = c.cfg.distill;
  if (c.inv.steps > 0) dc.steps = c.inv.steps;
  const auto op = ResidualOperator::make(c.cfg.benchmark, c.pde);
  const DistillResult r = distill(teacher, op, dc);
  for (const auto& e : r.log) {
    json entry = {{"event", "distill_step"},
                  {"step", e.step},
                  {"dsm_loss", e.dsm_loss},
                  {"ikl_surrogate", e.ikl_surrogate},
                  {"physics", e.physics}};
    if (std::isfinite(e.probe_rms)) entry["probe_rms"] = e.probe_rms;
    c.log(entry);
  }
  save_student(target, r.student, c.meta());
}

// Latents shared by every method of a run; scaled per method.
Tensor unit_latents(const RunConfig& cfg, const PdeConfig& pde, Index count, const char* stream) {
  Generator g = derive_seed({cfg.seed, stream, 0});
  return draw_latent(g, count, channel_count(cfg.benchmark), pde.height, pde.width, 1.0);
}

struct Method {
  std::string name;
  std::function<std::vector<FieldSample>(const Tensor& unit_z)> run;
};

Method student_method(const Context& c, const StudentGenerator& s, Index k) {
  const PdeKind kind = c.cfg.benchmark;
  return {c.with_tag("student"), [&s, k, kind](const Tensor& u) {
            Tensor z = u;
            z.data *= s.sigma_init;
            return generate_samples(s, kind, z, k);
          }};
}

Method teacher_method(const Context& c, const DenoiserNet& t, Index steps, const ResidualOperator& op) {
  const bool guided = c.inv.baseline == "guided";
  if (!guided && c.inv.baseline != "plain") throw ContractViolation("--baseline must be plain or guided");
  const PdeKind kind = c.cfg.benchmark;
  const double gamma = c.cfg.guidance_gamma, frac = c.cfg.guidance_fraction;
  return {guided ? "teacher-guided" : "teacher", [&t, &op, steps, guided, kind, gamma, frac](const Tensor& u) {
            const NoiseSchedule sched = sigma_schedule(steps);
            Tensor z = u;
            z.data *= sched.sigma_max;
            const Tensor x = guided ? guided_sample(t, sched, z, op, gamma, frac)
                                    : sample(t, sched, z, SamplerMethod::heun);
            return from_batch(kind, t.norm.to_physical(x));
          }};
}

std::vector<Index> requested_steps(const Context& c, bool student, Index k_max) {
  if (c.inv.steps > 0) return {c.inv.steps};
  if (!student) return c.cfg.teacher_reference_steps;
  std::vector<Index> ks;
  for (Index k = 1; k <= k_max; ++k) ks.push_back(k);
  return ks;
}

void cmd_sample(const Context& c) {
  const auto op = ResidualOperator::make(c.cfg.benchmark, c.pde);
  const Tensor u = unit_latents(c.cfg, c.pde, c.cfg.eval_samples, "sample-latent");
  const bool student = c.inv.model == "student";
  if (!student && c.inv.model != "teacher") throw ContractViolation("--model must be student or teacher");
  StudentGenerator s;
  DenoiserNet t;
  if (student) s = load_student(c.paths.student(c.inv.tag));
  else t = load_teacher(c.paths);
  for (Index steps : requested_steps(c, student, student ? s.k_max : 0)) {
    const Method m = student ? student_method(c, s, steps) : teacher_method(c, t, steps, op);
    const auto path = c.paths.root / "samples" / (m.name + "-" + std::to_string(steps) + ".bin");
    ensure_new(path);
    write_dataset(path, {c.cfg.benchmark, c.cfg.seed, 0, m.run(u)});
    c.log({{"event", "samples"}, {"method", m.name}, {"steps", steps}, {"path", path.string()}});
  }
}

void cmd_eval(const Context& c) {
  const bool student = c.inv.model == "student";
  if (!student && c.inv.model != "teacher") throw ContractViolation("--model must be student or teacher");
  StudentGenerator s;
  DenoiserNet t;
  if (student) s = load_student(c.paths.student(c.inv.tag));
  else t = load_teacher(c.paths);
  const auto real = load_samples(c.paths.test_data(), c.cfg.benchmark);
  const auto op = ResidualOperator::make(c.cfg.benchmark, c.pde);
  const Tensor u = unit_latents(c.cfg, c.pde, c.cfg.eval_samples, "eval-latent");
  const Tensor u1 = unit_latents(c.cfg, c.pde, c.cfg.latency_runs, "latency-latent");
  for (Index steps : requested_steps(c, student, student ? s.k_max : 0)) {
    const Method m = student ? student_method(c, s, steps) : teacher_method(c, t, steps, op);
    const auto path = c.paths.eval_dir() / (m.name + "-" + std::to_string(steps) + ".json");
    ensure_new(path);
    const auto gen = m.run(u);
    EvalRow row = score_samples(m.name, steps, op, gen, real, c.cfg.projections, {c.cfg.seed, "metrics", 0});
    Index i = 0;
    row.latency_ms = median_latency_ms(
        [&] {
          m.run(slice_batch(u1, i, i + 1));
          ++i;
        },
        c.cfg.latency_runs);
    json rec = to_json(row);
    rec["config_hash"] = config_hash(c.effective);
    write_text(path, rec.dump(2) + "\n");
    c.log({{"event", "eval"}, {"row", to_json(row)}});
  }
}

std::vector<ConditionPair> make_pairs(const RunConfig& cfg, std::span<const FieldSample> samples, Index count,
                                      const char* stream) {
  if (static_cast<Index>(samples.size()) < count) throw ContractViolation("not enough samples for the requested pairs");
  std::vector<ConditionPair> out;
  for (Index i = 0; i < count; ++i) {
    out.push_back(build_condition(cfg.task, samples[static_cast<std::size_t>(i)],
                                  {cfg.seed, stream, static_cast<std::uint64_t>(i)}, cfg.obs_fraction));
  }
  return out;
}

// Pair file: target channels followed by the supervision mask of each channel.
void write_pairs(const std::filesystem::path& p, const RunConfig& cfg, std::span<const ConditionPair> pairs) {
  ensure_new(p);
  Dataset d{cfg.benchmark, cfg.seed, channel_count(cfg.benchmark), {}};
  for (const auto& pr : pairs) {
    Tensor t(Shape{2 * pr.target.channels.shape[0], pr.target.height(), pr.target.width()});
    t.data << pr.target.channels.data, pr.cond.mask.data;
    d.samples.push_back({cfg.benchmark, std::move(t)});
  }
  write_dataset(p, d);
}

std::string branch_tag(const Context& c) {
  return std::string(to_string(c.cfg.task)) + (c.inv.tag.empty() ? "" : "-" + c.inv.tag);
}

void cmd_cond_train(const Context& c) {
  const auto target = c.paths.branch(branch_tag(c));
  ensure_new(target);
  const StudentGenerator s = load_student(c.paths.student(c.inv.tag));
  const auto train = load_samples(c.paths.train_data(), c.cfg.benchmark);
  const auto pairs = make_pairs(c.cfg, train, c.cfg.cond_train_pairs, "obs-train");
  write_pairs(c.paths.root / "cond" / ("pairs-" + branch_tag(c) + "-train.bin"), c.cfg, pairs);
  TrainConfig tc = c.cfg.cond;
  if (c.inv.steps > 0) tc.steps = c.inv.steps;
  const auto op = ResidualOperator::make(c.cfg.benchmark, c.pde);
  std::vector<ConditionalRecord> log;
  const ControlBranch br = train_conditional(s, op, pairs, c.cfg.cond_lambda_phys, tc, &log);
  for (const auto& r : log) {
    c.log({{"event", "cond_step"}, {"step", r.step}, {"loss", r.loss}, {"data", r.data}, {"physics", r.physics}});
  }
  save_branch(target, br);
}

void cmd_cond_eval(const Context& c) {
  const auto out_json = c.paths.eval_dir() / ("cond-" + branch_tag(c) + ".json");
  const auto out_csv = c.paths.eval_dir() / ("cond-" + branch_tag(c) + ".csv");
  ensure_new(out_json);
  ensure_new(out_csv);
  const StudentGenerator s = load_student(c.paths.student(c.inv.tag));
  require(c.paths.branch(branch_tag(c)));
  const ControlBranch br = load_branch(c.paths.branch(branch_tag(c)));
  const auto test = load_samples(c.paths.test_data(), c.cfg.benchmark);
  const auto pairs = make_pairs(c.cfg, test, c.cfg.cond_eval_pairs, "obs-test");
  const auto op = ResidualOperator::make(c.cfg.benchmark, c.pde);
  const SeedKey key{c.cfg.seed, "cond-eval", 0};
  const auto trained = evaluate_conditional(s, br, op, pairs, key, c.pde);
  const auto zero = evaluate_conditional(s, ControlBranch::create(s, br.task, br.kind, {c.cfg.seed, "branch-init", 0}),
                                         op, pairs, key, c.pde);
  auto rec = [](const ConditionalEval& e) {
    return json{{"relative_error", e.relative_error},
                {"absolute_error", e.absolute_error},
                {"mean_absolute_error", e.mean_absolute_error},
                {"rms_pde_error", e.rms_pde_error},
                {"pairs", e.count}};
  };
  json summary = {{"task", to_string(br.task)}, {"trained", rec(trained)}, {"untrained", rec(zero)},
                  {"config_hash", config_hash(c.effective)}};
  write_text(out_json, summary.dump(2) + "\n");
  std::ostringstream csv;
  csv << std::setprecision(10) << "task,rel_error,abs_error,rms_pde_error,steps\n"
      << to_string(br.task) << ',' << trained.relative_error << ',' << trained.absolute_error << ','
      << trained.rms_pde_error << ",1\n";
  write_text(out_csv, csv.str());
  c.log({{"event", "cond_eval"}, {"summary", summary}});
}

void cmd_report(const Context& c) {
  std::vector<EvalRow> rows;
  if (std::filesystem::is_directory(c.paths.eval_dir())) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(c.paths.eval_dir())) {
      const auto name = e.path().filename().string();
      if (e.path().extension() == ".json" && name.rfind("cond-", 0) != 0) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) rows.push_back(eval_row_from_json(read_json_file(f)));
  }
  if (rows.empty()) throw DependencyError("no eval artifacts under " + c.paths.eval_dir().string());
  ensure_new(c.paths.report_csv());
  ensure_new(c.paths.report_json());
  std::stable_sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
    return a.method != b.method ? a.method < b.method : a.steps < b.steps;
  });

  std::ostringstream csv;
  csv << std::setprecision(10) << "method,steps,rms_pde_error,swd,sqrt_mmd2,latency_ms\n";
  for (const auto& r : rows) {
    csv << r.method << ',' << r.steps << ',' << r.rms_pde_error << ',' << r.swd << ',' << r.sqrt_mmd2 << ','
        << r.latency_ms << '\n';
  }
  write_text(c.paths.report_csv(), csv.str());

  json k_seq = json::object(), teacher_ref = json::object(), jrows = json::array();
  const Index k_max = c.cfg.distill.k_max;
  for (const auto& r : rows) {
    jrows.push_back(to_json(r));
    if (r.method.rfind("student", 0) == 0) {
      if (!k_seq.contains(r.method)) k_seq[r.method] = json::array();
    }
  }
  for (auto& [method, seq] : k_seq.items()) {
    for (Index k = 1; k <= k_max; ++k) {
      auto it = std::find_if(rows.begin(), rows.end(), [&](const EvalRow& r) { return r.method == method && r.steps == k; });
      seq.push_back(it == rows.end() ? json(nullptr) : json(it->rms_pde_error));
    }
  }
  for (Index n : c.cfg.teacher_reference_steps) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const EvalRow& r) { return r.method == "teacher" && r.steps == n; });
    teacher_ref[std::to_string(n)] = it == rows.end() ? json(nullptr) : json(it->rms_pde_error);
  }
  json summary = {{"run", c.paths.root.filename().string()},
                  {"config_hash", config_hash(c.effective)},
                  {"rows", jrows},
                  {"k_sequence", k_seq},
                  {"teacher_reference", teacher_ref}};
  write_text(c.paths.report_json(), summary.dump(2) + "\n");
}

}  // namespace

void run_command(const Invocation& inv) {
  static const std::map<std::string, void (*)(const Context&)> table = {
      {"gen-data", cmd_gen_data}, {"train-teacher", cmd_train_teacher}, {"distill", cmd_distill},
      {"sample", cmd_sample},     {"eval", cmd_eval},                   {"cond-train", cmd_cond_train},
      {"cond-eval", cmd_cond_eval}, {"report", cmd_report}};
  auto it = table.find(inv.command);
  if (it == table.end()) throw ContractViolation("unknown command '" + inv.command + "'");
  json effective;
  RunConfig cfg = resolve_config(inv, &effective);
  Context c{inv, cfg, effective, RunPaths{inv.out}, cfg.pde()};
  it->second(c);
}

json error_record(const std::exception& e, const std::string& command) {
  json r = {{"command", command}, {"message", e.what()}};
  if (auto* t = dynamic_cast<const TrainingFailure*>(&e)) {
    r["error"] = "training_failure";
    r["step"] = t->step();
  } else if (auto* s = dynamic_cast<const SolverFailure*>(&e)) {
    r["error"] = "solver_failure";
    r["residual_norm"] = s->residual_norm();
  } else if (dynamic_cast<const DependencyError*>(&e)) {
    r["error"] = "dependency_error";
  } else if (dynamic_cast<const FormatError*>(&e)) {
    r["error"] = "format_error";
  } else if (dynamic_cast<const ContractViolation*>(&e)) {
    r["error"] = "contract_violation";
  } else if (dynamic_cast<const DeterminismError*>(&e)) {
    r["error"] = "determinism_error";
  } else {
    r["error"] = "internal_error";
  }
  return r;
}

int exit_status(const std::exception& e) {
  if (dynamic_cast<const ContractViolation*>(&e)) return 2;
  if (dynamic_cast<const DependencyError*>(&e)) return 3;
  if (dynamic_cast<const FormatError*>(&e)) return 4;
  if (dynamic_cast<const TrainingFailure*>(&e)) return 5;
  if (dynamic_cast<const SolverFailure*>(&e)) return 6;
  return 1;
}

}  // namespace physinstruct
