#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "physinstruct/tensor.hpp"

namespace physinstruct {

/// Identifies one random stream: (root seed, purpose label, counter).
struct SeedKey {
  std::uint64_t root = 0;
  std::string stream;
  std::uint64_t index = 0;

  SeedKey child(std::uint64_t i) const { return {root, stream, i}; }
  SeedKey with_stream(std::string s) const { return {root, std::move(s), index}; }
};

/// Deterministic generator. State derivation (see derive_seed):
///   h = fnv1a64(stream)
///   s = splitmix64(splitmix64(splitmix64(root) ^ h) ^ index)
/// and `s` seeds a 64-bit Mersenne twister.
class Generator {
 public:
  explicit Generator(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  /// N(0,1) via Box-Muller on two uniforms; the paired value is cached.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(const std::string& s);

std::uint64_t derive_seed_value(const SeedKey& key);
Generator derive_seed(const SeedKey& key);

/// I.i.d. standard normal values with the given shape.
Tensor standard_normal(Generator& gen, const Shape& shape);

}  // namespace physinstruct
