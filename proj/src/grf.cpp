#include "physinstruct/grf.hpp"

#include <cmath>
#include <numbers>

#include "physinstruct/errors.hpp"

namespace physinstruct {

namespace {
bool power_of_two(Index n) { return n > 0 && (n & (n - 1)) == 0; }
}  // namespace

double grf_mode_variance(const GrfSpec& spec, double lambda) {
  return spec.scale * std::pow(lambda + spec.shift, -spec.power);
}

Basis1d laplacian_basis_1d(GrfBasis basis, Index n) {
  constexpr double pi = std::numbers::pi;
  Basis1d b;
  if (basis == GrfBasis::periodic_fourier) {
    if (!power_of_two(n)) throw ContractViolation("periodic GRF basis needs a power-of-two extent, got " + std::to_string(n));
    b.functions.resize(n, n);
    b.eigenvalues.resize(n);
    b.functions.col(0).setOnes();
    b.eigenvalues[0] = 0.0;
    Index col = 1;
    for (Index j = 1; j < n / 2 + (n > 1 ? 1 : 0); ++j) {
      const double k = 2.0 * pi * static_cast<double>(j);
      for (Index i = 0; i < n; ++i) b.functions(i, col) = std::cos(k * static_cast<double>(i) / static_cast<double>(n));
      b.eigenvalues[col++] = k * k;
      if (2 * j == n) break;  // Nyquist: sine part vanishes on the grid
      for (Index i = 0; i < n; ++i) b.functions(i, col) = std::sin(k * static_cast<double>(i) / static_cast<double>(n));
      b.eigenvalues[col++] = k * k;
    }
    return b;
  }
  if (n < 3) throw ContractViolation("sine GRF basis needs at least 3 nodes, got " + std::to_string(n));
  const Index modes = n - 2;
  b.functions.resize(n, modes);
  b.eigenvalues.resize(modes);
  for (Index j = 1; j <= modes; ++j) {
    const double k = pi * static_cast<double>(j);
    for (Index i = 0; i < n; ++i) b.functions(i, j - 1) = std::sin(k * static_cast<double>(i) / static_cast<double>(n - 1));
    b.eigenvalues[j - 1] = k * k;
  }
  return b;
}

Field grf_sample(const GrfSpec& spec, Generator& gen) {
  if (!(spec.scale > 0 && spec.shift > 0 && spec.power > 0)) throw ContractViolation("GRF scale, shift and power must be positive");
  const Basis1d by = laplacian_basis_1d(spec.basis, spec.height);
  const Basis1d bx = laplacian_basis_1d(spec.basis, spec.width);
  Eigen::MatrixXd coeff(by.functions.cols(), bx.functions.cols());
  for (Index a = 0; a < coeff.rows(); ++a) {
    for (Index c = 0; c < coeff.cols(); ++c) {
      coeff(a, c) = std::sqrt(grf_mode_variance(spec, by.eigenvalues[a] + bx.eigenvalues[c])) * gen.normal();
    }
  }
  return by.functions * coeff * bx.functions.transpose();
}

}  // namespace physinstruct
