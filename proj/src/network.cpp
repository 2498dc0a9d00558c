#include "physinstruct/network.hpp"

#include <cmath>

#include <json.hpp>

#include "physinstruct/errors.hpp"

namespace physinstruct {

Normalizer Normalizer::identity(Index channels) {
  return {Eigen::VectorXd::Zero(channels), Eigen::VectorXd::Ones(channels)};
}

Normalizer Normalizer::fit(const Tensor& batch) {
  if (batch.shape.rank() != 4 || batch.batch() == 0) throw ContractViolation("Normalizer::fit needs a non-empty (B,C,H,W) batch");
  const Index c = batch.channels(), plane = batch.height() * batch.width();
  Normalizer n{Eigen::VectorXd::Zero(c), Eigen::VectorXd::Zero(c)};
  for (Index ch = 0; ch < c; ++ch) {
    double s = 0.0, s2 = 0.0;
    for (Index b = 0; b < batch.batch(); ++b) {
      const auto seg = batch.data.segment(batch.offset(b, ch, 0, 0), plane);
      s += seg.sum();
    }
    const double count = static_cast<double>(batch.batch() * plane);
    const double m = s / count;
    for (Index b = 0; b < batch.batch(); ++b) s2 += (batch.data.segment(batch.offset(b, ch, 0, 0), plane) - m).square().sum();
    n.mean[ch] = m;
    n.scale[ch] = std::max(std::sqrt(s2 / count), 1e-12);
  }
  return n;
}

namespace {

void check_channels(const Normalizer& n, const Shape& s) {
  if (s.rank() != 4 || s[1] != n.channels()) {
    throw ContractViolation("normalizer: expected " + std::to_string(n.channels()) + " channels, got " + s.str());
  }
}

Tensor channel_plane(const Eigen::VectorXd& v, const Shape& s) {
  Tensor t(Shape{1, s[1], s[2], s[3]});
  const Index plane = s[2] * s[3];
  for (Index c = 0; c < s[1]; ++c) t.data.segment(c * plane, plane).setConstant(v[c]);
  return t;
}

}  // namespace

Tensor Normalizer::to_normalized(const Tensor& x) const {
  check_channels(*this, x.shape);
  Tensor out = x;
  const Index plane = x.height() * x.width();
  for (Index b = 0; b < x.batch(); ++b)
    for (Index c = 0; c < x.channels(); ++c) {
      auto seg = out.data.segment(x.offset(b, c, 0, 0), plane);
      seg = (seg - mean[c]) / scale[c];
    }
  return out;
}

Tensor Normalizer::to_physical(const Tensor& x) const {
  check_channels(*this, x.shape);
  Tensor out = x;
  const Index plane = x.height() * x.width();
  for (Index b = 0; b < x.batch(); ++b)
    for (Index c = 0; c < x.channels(); ++c) {
      auto seg = out.data.segment(x.offset(b, c, 0, 0), plane);
      seg = seg * scale[c] + mean[c];
    }
  return out;
}

Var Normalizer::to_physical(Var x) const {
  check_channels(*this, x.shape());
  return add_const(mul_const(x, channel_plane(scale, x.shape())), channel_plane(mean, x.shape()));
}

Precondition precondition(double sigma, double sd) {
  if (!(sigma > 0)) throw ContractViolation("denoise: sigma must be positive");
  const double s2 = sigma * sigma + sd * sd;
  return {sd * sd / s2, sigma * sd / std::sqrt(s2), 1.0 / std::sqrt(s2), std::log(sigma) / 4.0};
}

namespace {

Tensor he_normal(const Shape& s, Index fan_in, double gain, Generator& gen) {
  Tensor t = standard_normal(gen, s);
  t.data *= gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  return t;
}

void add_affine(Parameters& p, const std::string& name, Index out, Index in, Generator& gen) {
  p.add(name + ".w", he_normal(Shape{out, in}, in, 0.5, gen));
  p.add(name + ".b", Tensor(Shape{out}));
}

}  // namespace

void add_conv_params(Parameters& p, const std::string& name, Index cout, Index cin, Index k, double gain, Generator& gen) {
  p.add(name + ".w", he_normal(Shape{cout, cin, k, k}, cin * k * k, gain, gen));
  p.add(name + ".b", Tensor(Shape{cout}));
}

Var conv_layer(const BoundParams& bp, const std::string& name, Var x) { return conv2d(x, bp[name + ".w"], bp[name + ".b"]); }

namespace {

Var conv(const BoundParams& bp, const std::string& name, Var x) { return conv_layer(bp, name, x); }

Var embed_bias(const BoundParams& bp, const std::string& name, Var emb) {
  return affine(emb, bp[name + ".w"], bp[name + ".b"]);
}

Var block(const BoundParams& bp, const std::string& conv_name, const std::string& emb_name, Var x, Var emb) {
  return silu(add_channel_bias(conv(bp, conv_name, x), embed_bias(bp, emb_name, emb)));
}

Var inject(Var f, const std::array<std::optional<Var>, 3>* inj, int level) {
  if (inj && (*inj)[level]) return add(f, *(*inj)[level]);
  return f;
}

}  // namespace

void add_encoder_params(Parameters& p, const std::string& prefix, const NetArch& a, Generator& gen) {
  const auto& w = a.widths;
  add_conv_params(p, prefix + "conv_in", w[0], a.channels, 3, 1.0, gen);
  add_conv_params(p, prefix + "enc0", w[0], w[0], 3, 1.0, gen);
  add_affine(p, prefix + "emb0", w[0], 2, gen);
  add_conv_params(p, prefix + "enc1", w[1], w[0], 3, 1.0, gen);
  add_affine(p, prefix + "emb1", w[1], 2, gen);
  add_conv_params(p, prefix + "enc2", w[2], w[1], 3, 1.0, gen);
  add_affine(p, prefix + "emb2", w[2], 2, gen);
}

DenoiserNet DenoiserNet::create(const NetArch& arch, double sigma_data, const Normalizer& norm, const SeedKey& key) {
  if (arch.channels < 1 || arch.widths[0] < 1 || arch.widths[1] < 1 || arch.widths[2] < 1) {
    throw ContractViolation("DenoiserNet: widths must be positive");
  }
  if (norm.channels() != arch.channels) throw ContractViolation("DenoiserNet: normalizer channel count differs");
  Generator gen = derive_seed(key);
  DenoiserNet net{arch, {}, sigma_data, norm};
  const auto& w = arch.widths;
  add_encoder_params(net.params, "", arch, gen);
  add_conv_params(net.params, "mid", w[2], w[2], 3, 1.0, gen);
  add_conv_params(net.params, "dec1", w[1], w[2] + w[1], 3, 1.0, gen);
  add_affine(net.params, "emb3", w[1], 2, gen);
  add_conv_params(net.params, "dec0", w[0], w[1] + w[0], 3, 1.0, gen);
  add_affine(net.params, "emb4", w[0], 2, gen);
  add_conv_params(net.params, "out", arch.channels, w[0], 3, 0.1, gen);
  return net;
}

Tensor noise_embedding(std::span<const double> c_noise) {
  Tensor e(Shape{static_cast<Index>(c_noise.size()), 2});
  for (std::size_t i = 0; i < c_noise.size(); ++i) {
    e.data[2 * static_cast<Index>(i)] = std::sin(c_noise[i]);
    e.data[2 * static_cast<Index>(i) + 1] = std::cos(c_noise[i]);
  }
  return e;
}

Features encode(const BoundParams& bp, const std::string& prefix, Var x, Var emb) {
  const Shape& s = x.shape();
  if (s.rank() != 4 || s[2] % 4 != 0 || s[3] % 4 != 0) {
    throw ContractViolation("network: spatial extents must be multiples of 4, got " + s.str());
  }
  Features f;
  Var h = conv(bp, prefix + "conv_in", x);
  f.levels[0] = block(bp, prefix + "enc0", prefix + "emb0", h, emb);
  f.levels[1] = block(bp, prefix + "enc1", prefix + "emb1", downsample2(f.levels[0]), emb);
  f.levels[2] = block(bp, prefix + "enc2", prefix + "emb2", downsample2(f.levels[1]), emb);
  return f;
}

Var network_core(const BoundParams& bp, Var x_in, Var emb, const std::array<std::optional<Var>, 3>* inj) {
  const Features f = encode(bp, "", x_in, emb);
  const Var h0 = inject(f.levels[0], inj, 0), h1 = inject(f.levels[1], inj, 1), h2 = inject(f.levels[2], inj, 2);
  Var m = silu(conv(bp, "mid", h2));
  const std::array<Var, 2> cat1{upsample2(m), h1};
  Var d1 = block(bp, "dec1", "emb3", concat_channels(cat1), emb);
  const std::array<Var, 2> cat0{upsample2(d1), h0};
  Var d0 = block(bp, "dec0", "emb4", concat_channels(cat0), emb);
  return conv(bp, "out", d0);
}

Var denoise_var(const DenoiserNet& net, const BoundParams& bp, Var x, std::span<const double> sigma,
                const std::array<std::optional<Var>, 3>* inj) {
  const Shape& s = x.shape();
  if (s.rank() != 4 || s[1] != net.arch.channels) {
    throw ContractViolation("denoise: expected (B," + std::to_string(net.arch.channels) + ",H,W), got " + s.str());
  }
  if (static_cast<Index>(sigma.size()) != s[0]) throw ContractViolation("denoise: one sigma per batch item required");
  std::vector<double> skip, out, in, noise;
  for (double sg : sigma) {
    const auto p = precondition(sg, net.sigma_data);
    skip.push_back(p.c_skip);
    out.push_back(p.c_out);
    in.push_back(p.c_in);
    noise.push_back(p.c_noise);
  }
  Var emb = x.tape().constant(noise_embedding(noise));
  Var f = network_core(bp, scale_samples(x, in), emb, inj);
  return add(scale_samples(x, skip), scale_samples(f, out));
}

Tensor denoise(const DenoiserNet& net, const Tensor& x, double sigma) {
  Tape tape;
  BoundParams bp(tape, net.params, false);
  const std::vector<double> sig(static_cast<std::size_t>(x.shape[0]), sigma);
  return denoise_var(net, bp, tape.constant(x), sig).value();
}

void save_net(const std::filesystem::path& path, const DenoiserNet& net, std::map<std::string, std::string> meta) {
  nlohmann::json info = {{"channels", net.arch.channels},
                         {"widths", net.arch.widths},
                         {"sigma_data", net.sigma_data},
                         {"norm_mean", std::vector<double>(net.norm.mean.begin(), net.norm.mean.end())},
                         {"norm_scale", std::vector<double>(net.norm.scale.begin(), net.norm.scale.end())}};
  meta["net"] = info.dump();
  save_checkpoint(path, net.params, meta);
}

DenoiserNet load_net(const std::filesystem::path& path, std::map<std::string, std::string>* meta) {
  Checkpoint ck = load_checkpoint(path);
  DenoiserNet net;
  try {
    const auto info = nlohmann::json::parse(ck.meta.at("net"));
    net.arch.channels = info.at("channels").get<Index>();
    net.arch.widths = info.at("widths").get<std::array<Index, 3>>();
    net.sigma_data = info.at("sigma_data").get<double>();
    const auto m = info.at("norm_mean").get<std::vector<double>>();
    const auto s = info.at("norm_scale").get<std::vector<double>>();
    net.norm.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Index>(m.size()));
    net.norm.scale = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Index>(s.size()));
  } catch (const std::exception& e) {
    throw FormatError("checkpoint " + path.string() + " has no usable network description: " + e.what());
  }
  net.params = std::move(ck.params);
  if (meta) *meta = std::move(ck.meta);
  return net;
}

}  // namespace physinstruct
