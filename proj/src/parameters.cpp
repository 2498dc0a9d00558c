#include "physinstruct/parameters.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "physinstruct/errors.hpp"

namespace physinstruct {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {
constexpr const char* kCheckpointFormat = "physinstruct-checkpoint";
constexpr int kCheckpointVersion = 1;
}  // namespace

void Parameters::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractViolation("duplicate parameter block '" + name + "'");
  order_.push_back(name);
  blocks_.emplace(name, std::move(value));
}

Tensor& Parameters::operator[](const std::string& name) {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) throw ContractViolation("unknown parameter block '" + name + "'");
  return it->second;
}

const Tensor& Parameters::operator[](const std::string& name) const {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) throw ContractViolation("unknown parameter block '" + name + "'");
  return it->second;
}

Index Parameters::numel() const {
  Index n = 0;
  for (const auto& [_, t] : blocks_) n += t.numel();
  return n;
}

Parameters Parameters::zeros_like() const {
  Parameters z;
  for (const auto& name : order_) z.add(name, Tensor::zeros((*this)[name].shape));
  return z;
}

bool Parameters::same_layout(const Parameters& other) const {
  if (order_ != other.order_) return false;
  for (const auto& name : order_) {
    if (!((*this)[name].shape == other[name].shape)) return false;
  }
  return true;
}

Eigen::ArrayXd Parameters::flatten() const {
  Eigen::ArrayXd flat(numel());
  Index at = 0;
  for (const auto& name : order_) {
    const auto& t = (*this)[name];
    flat.segment(at, t.numel()) = t.data;
    at += t.numel();
  }
  return flat;
}

void Parameters::assign_flat(const Eigen::ArrayXd& flat) {
  if (flat.size() != numel()) throw ContractViolation("assign_flat: length mismatch");
  Index at = 0;
  for (const auto& name : order_) {
    auto& t = (*this)[name];
    t.data = flat.segment(at, t.numel());
    at += t.numel();
  }
}

void Parameters::axpy(double alpha, const Parameters& other) {
  if (!same_layout(other)) throw ContractViolation("axpy: parameter layouts differ");
  for (const auto& name : order_) (*this)[name].data += alpha * other[name].data;
}

BoundParams::BoundParams(Tape& tape, const Parameters& params, bool requires_grad) : tape_(&tape), order_(params.names()) {
  for (const auto& name : order_) vars_.emplace(name, tape.leaf(params[name], requires_grad));
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractViolation("parameter '" + name + "' is not bound");
  return it->second;
}

Parameters BoundParams::gradients() const {
  Parameters g;
  for (const auto& name : order_) g.add(name, tape_->grad(vars_.at(name)));
  return g;
}

void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                     const std::map<std::string, std::string>& meta) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["version"] = kCheckpointVersion;
  nlohmann::json blocks = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& name : params.names()) {
    const auto& t = params[name];
    blocks.push_back({{"name", name}, {"shape", t.shape.dims()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(double);
  }
  header["blocks"] = blocks;
  header["payload_bytes"] = offset;
  header["meta"] = meta;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());
  out << header.dump() << '\n';
  for (const auto& name : params.names()) {
    const auto& t = params[name];
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw FormatError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("checkpoint not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty checkpoint: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("format") != kCheckpointFormat) throw FormatError("not a checkpoint: " + path.string());
    if (header.at("version") != kCheckpointVersion) throw FormatError("unsupported checkpoint version in " + path.string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload_bytes = static_cast<std::uint64_t>(in.tellg() - payload_start);
  in.seekg(payload_start);

  Checkpoint ck;
  try {
    if (header.at("payload_bytes").get<std::uint64_t>() != payload_bytes) {
      throw FormatError("checkpoint payload length mismatch in " + path.string());
    }
    std::uint64_t expect = 0;
    for (const auto& b : header.at("blocks")) {
      if (b.at("offset").get<std::uint64_t>() != expect) throw FormatError("checkpoint block offsets are not contiguous");
      Tensor t{Shape(b.at("shape").get<std::vector<Index>>())};
      in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
      if (!in) throw FormatError("truncated checkpoint payload in " + path.string());
      expect += static_cast<std::uint64_t>(t.numel()) * sizeof(double);
      ck.params.add(b.at("name").get<std::string>(), std::move(t));
    }
    ck.meta = header.at("meta").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  return ck;
}

void Optimizer::step(Parameters& params, const Parameters& raw) {
  if (!params.same_layout(raw)) throw ContractViolation("optimizer: gradient layout differs from parameters");
  Parameters clipped;
  const Parameters* gp = &raw;
  if (cfg_.max_grad_norm > 0) {
    const double norm = std::sqrt(raw.flatten().square().sum());
    if (norm > cfg_.max_grad_norm) {
      clipped = raw;
      for (const auto& name : clipped.names()) clipped[name].data *= cfg_.max_grad_norm / norm;
      gp = &clipped;
    }
  }
  const Parameters& grads = *gp;
  if (cfg_.kind == OptimizerKind::sgd) {
    params.axpy(-cfg_.step_size, grads);
    return;
  }
  if (m_.size() == 0) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& name : params.names()) {
    auto& m = m_[name].data;
    auto& v = v_[name].data;
    const auto& g = grads[name].data;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.square();
    params[name].data -= cfg_.step_size * (m / bc1) / ((v / bc2).sqrt() + cfg_.eps);
  }
}

void ema_update(Parameters& ema, const Parameters& params, double decay) {
  if (!ema.same_layout(params)) throw ContractViolation("ema_update: layouts differ");
  for (const auto& name : params.names()) ema[name].data = decay * ema[name].data + (1.0 - decay) * params[name].data;
}

double grad_check(const TapedObjective& fn, const Parameters& params, const GradCheckOptions& opts) {
  if (!(opts.step >= 1e-6 && opts.step <= 1e-2)) throw ContractViolation("grad_check: step must lie in [1e-6, 1e-2]");

  auto value_at = [&](const Parameters& p) {
    Tape tape;
    BoundParams bound(tape, p, false);
    return fn(tape, bound).value().item();
  };

  Tape tape;
  BoundParams bound(tape, params, true);
  Var root = fn(tape, bound);
  const double base = root.value().item();
  if (value_at(params) != base) throw DeterminismError("grad_check: objective differs across identical evaluations");
  tape.backward(root);
  const Parameters analytic = bound.gradients();

  const Index n = params.numel();
  std::vector<Index> coords(static_cast<std::size_t>(n));
  std::iota(coords.begin(), coords.end(), Index{0});
  std::mt19937_64 rng(opts.seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (coords.size() > opts.coordinates) coords.resize(opts.coordinates);

  const Eigen::ArrayXd flat = params.flatten();
  const Eigen::ArrayXd grad_flat = analytic.flatten();
  Parameters probe = params;
  double worst = 0.0;
  for (Index c : coords) {
    Eigen::ArrayXd f = flat;
    f[c] = flat[c] + opts.step;
    probe.assign_flat(f);
    const double up = value_at(probe);
    f[c] = flat[c] - opts.step;
    probe.assign_flat(f);
    const double down = value_at(probe);
    const double fd = (up - down) / (2.0 * opts.step);
    worst = std::max(worst, std::abs(grad_flat[c] - fd) / (std::abs(fd) + 1e-8));
  }
  return worst;
}

}  // namespace physinstruct
