#include "physinstruct/spectral.hpp"

#include <cmath>
#include <numbers>

#include "physinstruct/errors.hpp"

namespace physinstruct {

Dft::Dft(Index n) : n_(n), forward_(n, n), inverse_(n, n) {
  if (n < 1) throw ContractViolation("Dft size must be positive");
  for (Index k = 0; k < n; ++k) {
    for (Index j = 0; j < n; ++j) {
      // Reduce k*j mod n first so the phase stays exact for large grids.
      const double phase = -2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      forward_(k, j) = std::polar(1.0, phase);
      inverse_(j, k) = std::conj(forward_(k, j)) / static_cast<double>(n);
    }
  }
}

double Dft::wavenumber(Index k) const { return static_cast<double>(k <= n_ / 2 ? k : k - n_); }

Eigen::VectorXcd Dft::forward(const Eigen::VectorXd& f) const { return forward_ * f.cast<std::complex<double>>(); }

Eigen::VectorXd Dft::inverse_real(const Eigen::VectorXcd& f_hat) const { return (inverse_ * f_hat).real(); }

Eigen::MatrixXcd fft2(const Dft& fy, const Dft& fx, const Eigen::MatrixXd& f) {
  return fy.matrix() * f.cast<std::complex<double>>() * fx.matrix().transpose();
}

Eigen::MatrixXd ifft2_real(const Dft& fy, const Dft& fx, const Eigen::MatrixXcd& f_hat) {
  return (fy.inverse_matrix() * f_hat * fx.inverse_matrix().transpose()).real();
}

}  // namespace physinstruct
