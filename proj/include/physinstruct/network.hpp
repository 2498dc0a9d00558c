#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "physinstruct/parameters.hpp"
#include "physinstruct/rng.hpp"

namespace physinstruct {

/// Per-channel affine map between physical fields and the normalized space the
/// networks operate in: x_norm = (x - mean) / scale.
struct Normalizer {
  Eigen::VectorXd mean;   // per channel
  Eigen::VectorXd scale;  // per channel, > 0

  static Normalizer identity(Index channels);
  /// Channel mean and standard deviation of a (B,C,H,W) batch (scale floored at 1e-12).
  static Normalizer fit(const Tensor& batch);

  Index channels() const { return mean.size(); }
  Tensor to_normalized(const Tensor& physical) const;
  Tensor to_physical(const Tensor& normalized) const;
  Var to_physical(Var normalized) const;
};

/// Channel widths of the three resolution levels.
struct NetArch {
  Index channels = 2;
  std::array<Index, 3> widths{16, 32, 32};
};

/// Encoder activations at full, half and quarter resolution.
struct Features {
  std::array<Var, 3> levels;
};

/// Parameterized denoiser D(x; sigma) = c_skip x + c_out F(c_in x; c_noise).
/// F is a three-level convolutional encoder-decoder with skip connections, silu
/// activations and a [sin c_noise, cos c_noise] embedding added per level.
struct DenoiserNet {
  NetArch arch;
  Parameters params;
  double sigma_data = 1.0;
  Normalizer norm;

  static DenoiserNet create(const NetArch& arch, double sigma_data, const Normalizer& norm, const SeedKey& key);
};

struct Precondition {
  double c_skip, c_out, c_in, c_noise;
};
Precondition precondition(double sigma, double sigma_data);

/// He-normal weights (scaled by gain) and zero bias for a KxK convolution, named <name>.w / <name>.b.
void add_conv_params(Parameters& p, const std::string& name, Index cout, Index cin, Index k, double gain, Generator& gen);
Var conv_layer(const BoundParams& bp, const std::string& name, Var x);

/// Adds encoder parameters named <prefix>conv_in, <prefix>enc{0,1,2}, <prefix>emb{0,1,2}.
void add_encoder_params(Parameters& p, const std::string& prefix, const NetArch& arch, Generator& gen);

/// Noise embedding of each batch item, shape (B, 2).
Tensor noise_embedding(std::span<const double> c_noise);

/// Encoder pass over an already c_in-scaled input.
Features encode(const BoundParams& bp, const std::string& prefix, Var x, Var emb);

/// F(x_in; c_noise). `injections` (one per level, optional) are added to the encoder
/// features before the decoder consumes them.
Var network_core(const BoundParams& bp, Var x_in, Var emb, const std::array<std::optional<Var>, 3>* injections = nullptr);

/// D(x; sigma_n) per batch item on a tape; x is in normalized space.
Var denoise_var(const DenoiserNet& net, const BoundParams& bp, Var x, std::span<const double> sigma,
                const std::array<std::optional<Var>, 3>* injections = nullptr);

/// Same as above with the network parameters bound as constants on a private tape.
Tensor denoise(const DenoiserNet& net, const Tensor& x, double sigma);

/// Checkpoint of a net: parameters plus architecture, sigma_data and normalizer in the meta map.
void save_net(const std::filesystem::path& path, const DenoiserNet& net, std::map<std::string, std::string> meta = {});
DenoiserNet load_net(const std::filesystem::path& path, std::map<std::string, std::string>* meta = nullptr);

}  // namespace physinstruct
