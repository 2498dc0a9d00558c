#include "physinstruct/rng.hpp"

#include <cmath>
#include <numbers>

#include "physinstruct/errors.hpp"

namespace physinstruct {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed_value(const SeedKey& key) {
  return splitmix64(splitmix64(splitmix64(key.root) ^ fnv1a64(key.stream)) ^ key.index);
}

Generator derive_seed(const SeedKey& key) { return Generator(derive_seed_value(key)); }

double Generator::uniform() {
  // (k + 0.5) / 2^53 never hits 0 or 1.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double Generator::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t Generator::below(std::uint64_t n) {
  if (n == 0) throw ContractViolation("Generator::below(0)");
  std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(engine_);
}

Tensor standard_normal(Generator& gen, const Shape& shape) {
  Tensor t(shape);
  for (Index i = 0; i < t.numel(); ++i) t.data[i] = gen.normal();
  return t;
}

}  // namespace physinstruct
